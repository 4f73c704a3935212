#pragma once

#include <array>
#include <functional>
#include <vector>

#include "picodiff/denoiser.hpp"
#include "picodiff/nn.hpp"
#include "picodiff/toy_world.hpp"

namespace picodiff {

constexpr double kOracleAccuracyBar = 0.95;
constexpr int kInstanceClasses = kNumInstanceSlots + 1;  // background + 4 slots
constexpr int kSemanticClasses = kNumShapes + 1;         // background + 4 shapes

// Per-pixel classifier with an instance head (location-slot classes, dense
// SOLO-style formulation) and a semantic head (shape classes). Frozen after
// training; feedback learning differentiates through it w.r.t. the image only.
class SegOracle {
 public:
  struct Output {
    Tensor instance_logits;  // [B,5,H,W]
    Tensor semantic_logits;  // [B,5,H,W]
    Tensor features;         // [B,Cb] bottleneck GAP, used by the FID proxy
  };

  explicit SegOracle(uint64_t init_seed) {
    Rng rng = Rng::stream(init_seed, 0x04ac1e);
    auto conv = [&](const char* name, int co, int ci, int k) {
      return params_.add(name, he_normal({co, ci, k, k}, ci * k * k, rng));
    };
    auto vec = [&](const char* name, int n) { return params_.add(name, Tensor::zeros({n})); };
    c0_w_ = conv("c0_w", 16, 3, 3);
    c0_b_ = vec("c0_b", 16);
    c1_w_ = conv("c1_w", 24, 16, 3);
    c1_b_ = vec("c1_b", 24);
    c2_w_ = conv("c2_w", 40, 24, 3);
    c2_b_ = vec("c2_b", 40);
    u1_w_ = conv("u1_w", 24, 40, 3);
    u1_b_ = vec("u1_b", 24);
    u0_w_ = conv("u0_w", 16, 24, 3);
    u0_b_ = vec("u0_b", 16);
    inst_w_ = conv("inst_w", kInstanceClasses, 16, 1);
    inst_b_ = vec("inst_b", kInstanceClasses);
    sem_w_ = conv("sem_w", kSemanticClasses, 16, 1);
    sem_b_ = vec("sem_b", kSemanticClasses);
  }

  Output forward(const Tensor& img) const {
    Tensor e0 = silu(conv2d(img, c0_w_, c0_b_));
    Tensor e1 = silu(conv2d(avg_pool2(e0), c1_w_, c1_b_));
    Tensor e2 = silu(conv2d(avg_pool2(e1), c2_w_, c2_b_));
    Tensor d1 = silu(add(upsample2(conv2d(e2, u1_w_, u1_b_)), e1));
    Tensor d0 = silu(add(upsample2(conv2d(d1, u0_w_, u0_b_)), e0));
    Output out;
    out.instance_logits = conv2d(d0, inst_w_, inst_b_);
    out.semantic_logits = conv2d(d0, sem_w_, sem_b_);
    out.features = global_avg_pool(e2);
    return out;
  }

  // Argmax class per pixel for one head's logits.
  static std::vector<uint8_t> argmax_map(const Tensor& logits, int sample) {
    const int K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
    std::vector<uint8_t> out(static_cast<size_t>(HW));
    const float* base = logits.data() + static_cast<size_t>(sample) * K * HW;
    for (int p = 0; p < HW; ++p) {
      int best = 0;
      float bv = base[p];
      for (int c = 1; c < K; ++c)
        if (base[c * HW + p] > bv) {
          bv = base[c * HW + p];
          best = c;
        }
      out[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
    }
    return out;
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  double held_out_accuracy() const { return held_out_accuracy_; }
  void set_held_out_accuracy(double a) { held_out_accuracy_ = a; }
  bool meets_bar() const { return held_out_accuracy_ >= kOracleAccuracyBar; }

 private:
  ParamSet params_;
  double held_out_accuracy_ = 0.0;
  Tensor c0_w_, c0_b_, c1_w_, c1_b_, c2_w_, c2_b_;
  Tensor u1_w_, u1_b_, u0_w_, u0_b_;
  Tensor inst_w_, inst_b_, sem_w_, sem_b_;
};

struct OracleTrainConfig {
  int train_scenes = 3000;
  int val_scenes = 384;
  int steps = 700;
  int batch = 24;
  float lr = 2e-3f;
  uint64_t data_seed = 1;
  uint64_t init_seed = 1;
};

// Pixel accuracy (min over the two heads) on scenes produced by `scene_at`.
inline double oracle_pixel_accuracy(const SegOracle& oracle,
                                    const std::function<RenderedScene(int)>& scene_at, int count,
                                    int batch = 32) {
  NoGrad ng;
  int64_t ok_inst = 0, ok_sem = 0, total = 0;
  for (int start = 0; start < count; start += batch) {
    const int B = std::min(batch, count - start);
    std::vector<Tensor> imgs;
    std::vector<RenderedScene> scenes;
    scenes.reserve(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) scenes.push_back(scene_at(start + i));
    for (auto& sc : scenes) imgs.push_back(sc.image);
    SegOracle::Output out = oracle.forward(stack_images(imgs));
    for (int i = 0; i < B; ++i) {
      auto inst = SegOracle::argmax_map(out.instance_logits, i);
      auto sem = SegOracle::argmax_map(out.semantic_logits, i);
      for (int p = 0; p < kCanvasPixels; ++p) {
        ok_inst += inst[static_cast<size_t>(p)] == scenes[static_cast<size_t>(i)].instance_map[static_cast<size_t>(p)];
        ok_sem += sem[static_cast<size_t>(p)] == scenes[static_cast<size_t>(i)].semantic_map[static_cast<size_t>(p)];
        ++total;
      }
    }
  }
  return std::min(static_cast<double>(ok_inst), static_cast<double>(ok_sem)) / static_cast<double>(total);
}

// Supervised training on rendered scenes; raises ConvergenceError if the
// held-out accuracy bar is not met within the step budget.
inline SegOracle train_seg_oracle(const OracleTrainConfig& cfg) {
  SegOracle oracle(cfg.init_seed);
  Adam opt(cfg.lr);
  const uint64_t train_base = Rng::stream(cfg.data_seed, 0x7261u).next_u64();
  const uint64_t val_base = Rng::stream(cfg.data_seed, 0x7a61u).next_u64();
  std::vector<RenderedScene> train;
  train.reserve(static_cast<size_t>(cfg.train_scenes));
  for (int i = 0; i < cfg.train_scenes; ++i)
    train.push_back(generate_scene(train_base + static_cast<uint64_t>(i)));
  auto val_scene = [&](int i) { return generate_scene(val_base + static_cast<uint64_t>(i)); };
  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng = Rng::stream(cfg.data_seed, 0x5e90000u + static_cast<uint64_t>(step));
    std::vector<Tensor> imgs;
    std::vector<uint8_t> inst_labels, sem_labels;
    for (int b = 0; b < cfg.batch; ++b) {
      const RenderedScene& sc = train[static_cast<size_t>(rng.uniform_int(0, cfg.train_scenes - 1))];
      imgs.push_back(sc.image);
      inst_labels.insert(inst_labels.end(), sc.instance_map.begin(), sc.instance_map.end());
      sem_labels.insert(sem_labels.end(), sc.semantic_map.begin(), sc.semantic_map.end());
    }
    SegOracle::Output out = oracle.forward(stack_images(imgs));
    Tensor loss = add(softmax_ce_map(out.instance_logits, inst_labels),
                      softmax_ce_map(out.semantic_logits, sem_labels));
    oracle.params().zero_grad();
    loss.backward();
    opt.step(oracle.params());
  }
  const double acc = oracle_pixel_accuracy(oracle, val_scene, cfg.val_scenes);
  oracle.set_held_out_accuracy(acc);
  if (acc < kOracleAccuracyBar)
    throw ConvergenceError("seg oracle accuracy " + std::to_string(acc) + " below bar after budget");
  return oracle;
}

// ---------------------------------------------------------------------------
// Instance matching
// ---------------------------------------------------------------------------

namespace detail {

inline double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace detail

// Greedy IoU assignment of ground-truth masks to predicted instance slots.
// Returns slot index (1-based class id) per ground-truth object.
inline std::vector<int> match_instances(const std::vector<std::vector<uint8_t>>& gt_masks,
                                        const std::vector<uint8_t>& predicted_slot_map) {
  const int n_gt = static_cast<int>(gt_masks.size());
  std::vector<std::vector<uint8_t>> slot_masks(kNumInstanceSlots,
                                               std::vector<uint8_t>(predicted_slot_map.size(), 0));
  for (size_t p = 0; p < predicted_slot_map.size(); ++p) {
    const int c = predicted_slot_map[p];
    if (c >= 1 && c <= kNumInstanceSlots) slot_masks[static_cast<size_t>(c - 1)][p] = 1;
  }
  std::vector<int> assign(static_cast<size_t>(n_gt), -1);
  std::vector<bool> gt_used(static_cast<size_t>(n_gt), false), slot_used(kNumInstanceSlots, false);
  for (int round = 0; round < n_gt; ++round) {
    double best = -1.0;
    int bg = -1, bs = -1;
    for (int g = 0; g < n_gt; ++g) {
      if (gt_used[static_cast<size_t>(g)]) continue;
      for (int s = 0; s < kNumInstanceSlots; ++s) {
        if (slot_used[static_cast<size_t>(s)]) continue;
        const double iou = detail::mask_iou(gt_masks[static_cast<size_t>(g)], slot_masks[static_cast<size_t>(s)]);
        if (iou > best) {
          best = iou;
          bg = g;
          bs = s;
        }
      }
    }
    gt_used[static_cast<size_t>(bg)] = true;
    slot_used[static_cast<size_t>(bs)] = true;
    assign[static_cast<size_t>(bg)] = bs + 1;
  }
  return assign;
}

// Per-pixel cross entropy of the instance head against the ground-truth
// masks, after greedy IoU matching of predicted slots to objects. The loss is
// invariant to permutations of the ground-truth mask list.
inline Tensor instance_loss(const SegOracle& oracle, const Tensor& img,
                            const std::vector<std::vector<std::vector<uint8_t>>>& gt_masks) {
  const int B = img.dim(0);
  if (static_cast<int>(gt_masks.size()) != B)
    throw PreconditionError("instance_loss: batch size mismatch");
  SegOracle::Output out = oracle.forward(img);
  std::vector<uint8_t> target(static_cast<size_t>(B) * kCanvasPixels, 0);
  for (int b = 0; b < B; ++b) {
    const auto& masks = gt_masks[static_cast<size_t>(b)];
    if (!masks.empty() && masks[0].size() != static_cast<size_t>(kCanvasPixels))
      throw PreconditionError("instance_loss: mask size mismatch");
    auto pred = SegOracle::argmax_map(out.instance_logits, b);
    std::vector<int> assign = match_instances(masks, pred);
    for (size_t g = 0; g < masks.size(); ++g)
      for (int p = 0; p < kCanvasPixels; ++p)
        if (masks[g][static_cast<size_t>(p)])
          target[static_cast<size_t>(b) * kCanvasPixels + p] = static_cast<uint8_t>(assign[g]);
  }
  return softmax_ce_map(out.instance_logits, target);
}

// Per-pixel cross entropy of the semantic head against the class map.
inline Tensor semantic_loss(const SegOracle& oracle, const Tensor& img,
                            const std::vector<std::vector<uint8_t>>& gt_semantic) {
  const int B = img.dim(0);
  if (static_cast<int>(gt_semantic.size()) != B)
    throw PreconditionError("semantic_loss: batch size mismatch");
  std::vector<uint8_t> target;
  target.reserve(static_cast<size_t>(B) * kCanvasPixels);
  for (const auto& m : gt_semantic) {
    if (m.size() != static_cast<size_t>(kCanvasPixels))
      throw PreconditionError("semantic_loss: map size mismatch");
    target.insert(target.end(), m.begin(), m.end());
  }
  SegOracle::Output out = oracle.forward(img);
  return softmax_ce_map(out.semantic_logits, target);
}

// ---------------------------------------------------------------------------
// Style
// ---------------------------------------------------------------------------

// Frozen random feature extractor. Stage 0 has a 1x1 receptive field, so its
// gram matrix is invariant to spatial permutations of the input.
class StyleEncoder {
 public:
  explicit StyleEncoder(uint64_t init_seed = 0xc0ffee) {
    Rng rng = Rng::stream(init_seed, 0x57e1e);
    s0_w_ = params_.add("s0_w", he_normal({12, 3, 1, 1}, 3, rng));
    s1_w_ = params_.add("s1_w", he_normal({16, 12, 3, 3}, 12 * 9, rng));
    s2_w_ = params_.add("s2_w", he_normal({24, 16, 3, 3}, 16 * 9, rng));
    params_.freeze();
  }

  static constexpr int kStages = 3;

  std::array<Tensor, kStages> stages(const Tensor& img) const {
    Tensor f0 = silu(conv2d(img, s0_w_, Tensor()));
    Tensor f1 = silu(conv2d(avg_pool2(f0), s1_w_, Tensor()));
    Tensor f2 = silu(conv2d(avg_pool2(f1), s2_w_, Tensor()));
    return {f0, f1, f2};
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  ParamSet params_;
  Tensor s0_w_, s1_w_, s2_w_;
};

// Gram matrix of a single [C,H,W] feature map.
inline Tensor gram(const Tensor& features) {
  if (features.shape().size() != 3) throw PreconditionError("gram: expected [C,H,W]");
  if (features.dim(1) * features.dim(2) < 1) throw PreconditionError("gram: empty spatial extent");
  const int C = features.dim(0);
  Tensor g = gram_batch(reshape(features, {1, C, features.dim(1), features.dim(2)}));
  return reshape(g, {C, C});
}

// Frobenius distance between the gram matrices of img and ref, per stage,
// meaned over the batch.
inline std::array<Tensor, StyleEncoder::kStages> style_loss_per_stage(const StyleEncoder& enc,
                                                                      const Tensor& img,
                                                                      const Tensor& ref) {
  auto fi = enc.stages(img);
  std::array<Tensor, StyleEncoder::kStages> out;
  std::array<Tensor, StyleEncoder::kStages> fr;
  {
    NoGrad ng;  // the reference side carries no gradient
    fr = enc.stages(ref);
  }
  for (int l = 0; l < StyleEncoder::kStages; ++l) {
    Tensor d = sub(gram_batch(fi[static_cast<size_t>(l)]), gram_batch(fr[static_cast<size_t>(l)]));
    out[static_cast<size_t>(l)] = mean_all(sqrt_ew(sumsq_per_sample(d)));
  }
  return out;
}

inline Tensor style_loss(const StyleEncoder& enc, const Tensor& img, const Tensor& ref) {
  auto per = style_loss_per_stage(enc, img, ref);
  Tensor total = per[0];
  for (int l = 1; l < StyleEncoder::kStages; ++l) total = add(total, per[static_cast<size_t>(l)]);
  return total;
}

}  // namespace picodiff
