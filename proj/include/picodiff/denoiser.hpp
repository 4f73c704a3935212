#pragma once

#include <memory>
#include <vector>

#include "picodiff/nn.hpp"
#include "picodiff/schedule.hpp"
#include "picodiff/toy_world.hpp"

namespace picodiff {

// Interface for the noise predictor so tests can swap in closed-form stubs.
struct NoisePredictor {
  virtual ~NoisePredictor() = default;
  virtual Tensor predict(const Tensor& z, const std::vector<int>& t,
                         const std::vector<CaptionSlots>& c) = 0;
};

struct DenoiserConfig {
  int channels = 24;
  int emb = 48;
  int T = 1000;

  bool operator==(const DenoiserConfig&) const = default;
};

// Small U-shaped conditional noise predictor. Prompt slots and the timestep
// feed additive per-channel biases at every stage.
class Denoiser : public NoisePredictor {
 public:
  Denoiser(const DenoiserConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    Rng rng = Rng::stream(init_seed, 0xde401);
    const int C = cfg.channels, E = cfg.emb;
    auto conv = [&](const char* name, int co, int ci, float gain = 1.f) {
      return params_.add(name, he_normal({co, ci, 3, 3}, ci * 9, rng, gain));
    };
    auto vec = [&](const char* name, int nvals) { return params_.add(name, Tensor::zeros({nvals})); };
    auto lin = [&](const char* name, int o, int i) {
      return params_.add(name, he_normal({o, i}, i, rng));
    };
    time_table_ = params_.add("time_table", normal_init({cfg.T, E}, 0.1f, rng));
    for (int s = 0; s < 6; ++s) {
      static const int sizes[6] = {kNumShapes, kNumColors, kNumRelations,
                                   kNumShapes, kNumColors, kNumStyles};
      static const char* names[6] = {"slot_shape1", "slot_color1", "slot_relation",
                                     "slot_shape2", "slot_color2", "slot_style"};
      slot_tables_[static_cast<size_t>(s)] = params_.add(names[s], normal_init({sizes[s], E}, 0.1f, rng));
    }
    mix_w_ = lin("mix_w", E, E);
    mix_b_ = vec("mix_b", E);
    enc0_w_ = conv("enc0_w", C, 3);
    enc0_b_ = vec("enc0_b", C);
    h0_w_ = lin("h0_w", C, E);
    h0_b_ = vec("h0_b", C);
    enc1_w_ = conv("enc1_w", 2 * C, C);
    enc1_b_ = vec("enc1_b", 2 * C);
    h1_w_ = lin("h1_w", 2 * C, E);
    h1_b_ = vec("h1_b", 2 * C);
    enc2_w_ = conv("enc2_w", 4 * C, 2 * C);
    enc2_b_ = vec("enc2_b", 4 * C);
    h2_w_ = lin("h2_w", 4 * C, E);
    h2_b_ = vec("h2_b", 4 * C);
    mid_w_ = conv("mid_w", 4 * C, 4 * C);
    mid_b_ = vec("mid_b", 4 * C);
    hm_w_ = lin("hm_w", 4 * C, E);
    hm_b_ = vec("hm_b", 4 * C);
    dec1_w_ = conv("dec1_w", 2 * C, 4 * C);
    dec1_b_ = vec("dec1_b", 2 * C);
    dec0_w_ = conv("dec0_w", C, 2 * C);
    dec0_b_ = vec("dec0_b", C);
    out_w_ = conv("out_w", 3, C, 0.1f);
    out_b_ = vec("out_b", 3);
  }

  Tensor predict(const Tensor& z, const std::vector<int>& t,
                 const std::vector<CaptionSlots>& c) override {
    const int B = z.dim(0);
    if (static_cast<int>(t.size()) != B || static_cast<int>(c.size()) != B)
      throw PreconditionError("denoiser: batch size mismatch");
    Tensor cond = embed_rows(time_table_, t);
    std::vector<int> ids(static_cast<size_t>(B));
    for (int s = 0; s < 6; ++s) {
      for (int b = 0; b < B; ++b) {
        const CaptionSlots& cs = c[static_cast<size_t>(b)];
        const int v = s == 0   ? cs.shape1
                      : s == 1 ? cs.color1
                      : s == 2 ? cs.relation
                      : s == 3 ? cs.shape2
                      : s == 4 ? cs.color2
                               : cs.style;
        ids[static_cast<size_t>(b)] = v;
      }
      cond = add(cond, embed_rows(slot_tables_[static_cast<size_t>(s)], ids));
    }
    Tensor h = silu(linear(cond, mix_w_, mix_b_));

    Tensor e0 = silu(chan_bias(conv2d(z, enc0_w_, enc0_b_), linear(h, h0_w_, h0_b_)));
    Tensor e1 = silu(chan_bias(conv2d(avg_pool2(e0), enc1_w_, enc1_b_), linear(h, h1_w_, h1_b_)));
    Tensor e2 = silu(chan_bias(conv2d(avg_pool2(e1), enc2_w_, enc2_b_), linear(h, h2_w_, h2_b_)));
    Tensor m = silu(chan_bias(conv2d(e2, mid_w_, mid_b_), linear(h, hm_w_, hm_b_)));
    Tensor d1 = silu(add(upsample2(conv2d(m, dec1_w_, dec1_b_)), e1));
    Tensor d0 = silu(add(upsample2(conv2d(d1, dec0_w_, dec0_b_)), e0));
    return conv2d(d0, out_w_, out_b_);
  }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  ParamSet params_;
  Tensor time_table_;
  std::array<Tensor, 6> slot_tables_;
  Tensor mix_w_, mix_b_;
  Tensor enc0_w_, enc0_b_, h0_w_, h0_b_;
  Tensor enc1_w_, enc1_b_, h1_w_, h1_b_;
  Tensor enc2_w_, enc2_b_, h2_w_, h2_b_;
  Tensor mid_w_, mid_b_, hm_w_, hm_b_;
  Tensor dec1_w_, dec1_b_;
  Tensor dec0_w_, dec0_b_;
  Tensor out_w_, out_b_;
};

inline Tensor stack_images(const std::vector<Tensor>& imgs) {
  const int B = static_cast<int>(imgs.size());
  if (B == 0) throw PreconditionError("stack_images: empty batch");
  const auto& s = imgs[0].shape();
  if (s.size() != 3) throw PreconditionError("stack_images: expected [C,H,W] images");
  Tensor out = Tensor::zeros({B, s[0], s[1], s[2]});
  const size_t per = imgs[0].numel();
  for (int b = 0; b < B; ++b) {
    if (imgs[static_cast<size_t>(b)].shape() != s)
      throw PreconditionError("stack_images: shape mismatch");
    std::copy_n(imgs[static_cast<size_t>(b)].data(), per, out.data() + static_cast<size_t>(b) * per);
  }
  return out;
}

// Runs the descending DDIM ladder from a given start latent. The final rung
// steps to the clean endpoint and the result is clamped to [-1,1].
inline Tensor ddim_generate(NoisePredictor& model, const std::vector<CaptionSlots>& c,
                            Tensor x, const std::vector<int>& rungs, const NoiseSchedule& s) {
  const int B = x.dim(0);
  for (int j = static_cast<int>(rungs.size()) - 1; j >= 0; --j) {
    const int t = rungs[static_cast<size_t>(j)];
    const int t_prev = j > 0 ? rungs[static_cast<size_t>(j) - 1] : -1;
    std::vector<int> tb(static_cast<size_t>(B), t);
    Tensor eps = model.predict(x, tb, c);
    x = ddim_step(x, eps, t, t_prev, s);
  }
  return clamp(x, -1.f, 1.f);
}

// Pure function of (parameters, prompt, seed, n_steps).
inline Tensor sample(NoisePredictor& model, const std::vector<CaptionSlots>& c, int n_steps,
                     const NoiseSchedule& s, uint64_t seed) {
  if (n_steps < 1 || n_steps > s.T) throw PreconditionError("sample: n_steps out of range");
  NoGrad ng;
  const int B = static_cast<int>(c.size());
  Tensor x = Tensor::zeros({B, 3, kCanvas, kCanvas});
  Rng rng = Rng::stream(seed, 0x5a3317);
  rng.fill_normal(x.data(), x.numel());
  return ddim_generate(model, c, x, inference_ladder(n_steps, s.T), s);
}

// Mean over the batch of the per-sample squared error between the injected
// and the predicted noise; t uniform per sample, eps standard normal.
inline Tensor pretrain_loss(NoisePredictor& model, const std::vector<Tensor>& z0,
                            const std::vector<CaptionSlots>& c, const NoiseSchedule& s,
                            Rng& rng) {
  const int B = static_cast<int>(z0.size());
  if (B == 0) throw PreconditionError("pretrain_loss: empty batch");
  Tensor zt = Tensor::zeros({B, 3, kCanvas, kCanvas});
  Tensor eps = Tensor::zeros({B, 3, kCanvas, kCanvas});
  std::vector<int> t(static_cast<size_t>(B));
  const size_t per = z0[0].numel();
  rng.fill_normal(eps.data(), eps.numel());
  for (int b = 0; b < B; ++b) {
    t[static_cast<size_t>(b)] = static_cast<int>(rng.uniform_int(0, s.T - 1));
    const double ab = s.abar(t[static_cast<size_t>(b)]);
    const float sa = static_cast<float>(std::sqrt(ab));
    const float sb = static_cast<float>(std::sqrt(1.0 - ab));
    const float* z = z0[static_cast<size_t>(b)].data();
    const float* e = eps.data() + static_cast<size_t>(b) * per;
    float* o = zt.data() + static_cast<size_t>(b) * per;
    for (size_t i = 0; i < per; ++i) o[i] = sa * z[i] + sb * e[i];
  }
  Tensor pred = model.predict(zt, t, c);
  return mean_all(sumsq_per_sample(sub(pred, eps)));
}

}  // namespace picodiff
