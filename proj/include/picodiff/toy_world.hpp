#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "picodiff/rng.hpp"
#include "picodiff/tensor.hpp"

namespace picodiff {

// Procedural 32x32 scene generator. Every scene carries exact ground truth:
// instance masks, semantic map, caption from a closed template grammar, and
// four measurable aesthetic attributes. All generation is pure in the seed.

constexpr int kCanvas = 32;
constexpr int kCanvasPixels = kCanvas * kCanvas;

enum class ShapeKind : int { circle = 0, square = 1, triangle = 2, star = 3 };
enum class StyleKind : int { flat = 0, outline = 1, textured = 2, gradient = 3 };
enum class RelationKind : int { left_of = 0, above = 1, centered = 2, diagonal = 3 };
enum class AesDim : int { color = 0, layout = 1, detail = 2, lighting = 3 };

constexpr int kNumShapes = 4;
constexpr int kNumColors = 8;
constexpr int kNumRelations = 4;
constexpr int kNumStyles = 4;
constexpr int kNumAesDims = 4;
constexpr int kNumInstanceSlots = 4;  // 2x2 location grid, SOLO style
constexpr int kPromptEmbedDim = 32;   // 4+8+4+4 slot dims + 12 noise-token dims

inline const char* shape_name(ShapeKind s) {
  static const char* names[] = {"circle", "square", "triangle", "star"};
  return names[static_cast<int>(s)];
}
inline const char* style_name(StyleKind s) {
  static const char* names[] = {"flat", "outline", "textured", "gradient"};
  return names[static_cast<int>(s)];
}
inline const char* relation_name(RelationKind r) {
  static const char* names[] = {"left-of", "above", "centered", "diagonal-to"};
  return names[static_cast<int>(r)];
}
inline const char* color_name(int c) {
  static const char* names[] = {"red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple"};
  return names[c];
}
inline const char* aes_dim_name(AesDim d) {
  static const char* names[] = {"color", "layout", "detail", "lighting"};
  return names[static_cast<int>(d)];
}

inline std::array<float, 3> palette(int c) {
  static const std::array<float, 3> colors[] = {
      {0.95f, 0.15f, 0.15f}, {0.15f, 0.85f, 0.20f}, {0.15f, 0.30f, 0.95f}, {0.95f, 0.90f, 0.10f},
      {0.95f, 0.20f, 0.90f}, {0.10f, 0.90f, 0.90f}, {0.95f, 0.55f, 0.10f}, {0.55f, 0.20f, 0.90f}};
  return colors[c];
}

constexpr float kBackgroundGray = 0.72f;

struct ObjectSpec {
  ShapeKind shape;
  int color;
  float cx, cy;
  float radius;
};

struct Aesthetics {
  float color_saturation;
  float layout_balance;
  float detail_sharpness;
  float lighting_contrast;

  float get(AesDim d) const {
    switch (d) {
      case AesDim::color: return color_saturation;
      case AesDim::layout: return layout_balance;
      case AesDim::detail: return detail_sharpness;
      case AesDim::lighting: return lighting_contrast;
    }
    return 0.f;
  }
  void set(AesDim d, float v) {
    switch (d) {
      case AesDim::color: color_saturation = v; break;
      case AesDim::layout: layout_balance = v; break;
      case AesDim::detail: detail_sharpness = v; break;
      case AesDim::lighting: lighting_contrast = v; break;
    }
  }
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;
  StyleKind style;
  RelationKind relation;
  Aesthetics aes;
};

// Slot ids of the caption grammar, -1 = absent. Slot order: first object's
// shape and color, the relation word, second object's shape and color, style.
struct CaptionSlots {
  int shape1 = -1, color1 = -1, relation = -1, shape2 = -1, color2 = -1, style = -1;

  bool operator==(const CaptionSlots&) const = default;
};

struct RenderedScene {
  Tensor image;  // [3,32,32], range [-1,1]
  std::string caption;
  CaptionSlots slots;
  std::vector<std::vector<uint8_t>> instance_masks;  // one per object, length HW
  std::vector<uint8_t> semantic_map;                 // 0 bg, 1..4 = shape class
  std::vector<uint8_t> instance_map;                 // 0 bg, 1..4 = location slot
  SceneSpec scene;
};

// ---------------------------------------------------------------------------
// Caption grammar
// ---------------------------------------------------------------------------

inline std::string render_caption(const CaptionSlots& s) {
  std::ostringstream os;
  os << "a " << color_name(s.color1) << " " << shape_name(static_cast<ShapeKind>(s.shape1));
  if (s.relation == static_cast<int>(RelationKind::centered)) {
    os << " centered";
  } else {
    os << " " << relation_name(static_cast<RelationKind>(s.relation)) << " a "
       << color_name(s.color2) << " " << shape_name(static_cast<ShapeKind>(s.shape2));
  }
  if (s.style >= 0) os << " in " << style_name(static_cast<StyleKind>(s.style)) << " style";
  return os.str();
}

namespace detail {
inline int lookup(const std::string& tok, const char* (*name)(int), int n) {
  for (int i = 0; i < n; ++i)
    if (tok == name(i)) return i;
  return -1;
}
inline int lookup_shape(const std::string& t) {
  for (int i = 0; i < kNumShapes; ++i)
    if (t == shape_name(static_cast<ShapeKind>(i))) return i;
  return -1;
}
inline int lookup_style(const std::string& t) {
  for (int i = 0; i < kNumStyles; ++i)
    if (t == style_name(static_cast<StyleKind>(i))) return i;
  return -1;
}
inline int lookup_relation(const std::string& t) {
  for (int i = 0; i < kNumRelations; ++i)
    if (t == relation_name(static_cast<RelationKind>(i))) return i;
  return -1;
}
inline int lookup_color(const std::string& t) { return lookup(t, color_name, kNumColors); }
}  // namespace detail

// Parses a grammar caption back to its slot tuple. Returns nullopt for text
// outside the grammar (noise prompts).
inline std::optional<CaptionSlots> parse_caption(const std::string& text) {
  std::vector<std::string> tok;
  std::istringstream is(text);
  for (std::string t; is >> t;) tok.push_back(t);
  CaptionSlots s;
  size_t i = 0;
  auto need = [&](const char* w) {
    if (i >= tok.size() || tok[i] != w) return false;
    ++i;
    return true;
  };
  if (!need("a") || i + 1 >= tok.size()) return std::nullopt;
  s.color1 = detail::lookup_color(tok[i++]);
  s.shape1 = detail::lookup_shape(tok[i++]);
  if (s.color1 < 0 || s.shape1 < 0) return std::nullopt;
  if (i >= tok.size()) return std::nullopt;
  if (tok[i] == "centered") {
    s.relation = static_cast<int>(RelationKind::centered);
    ++i;
  } else {
    s.relation = detail::lookup_relation(tok[i]);
    if (s.relation < 0) return std::nullopt;
    ++i;
    if (!need("a") || i + 1 >= tok.size()) return std::nullopt;
    s.color2 = detail::lookup_color(tok[i++]);
    s.shape2 = detail::lookup_shape(tok[i++]);
    if (s.color2 < 0 || s.shape2 < 0) return std::nullopt;
  }
  if (i < tok.size()) {
    if (!need("in") || i + 1 >= tok.size()) return std::nullopt;
    s.style = detail::lookup_style(tok[i++]);
    if (s.style < 0 || !need("style") || i != tok.size()) return std::nullopt;
  }
  return s;
}

// Attribute/relation slots filled by the generating template. Noise prompts
// have none.
inline int relation_count_of(const CaptionSlots& s) {
  int n = 0;
  if (s.color1 >= 0) ++n;
  if (s.color2 >= 0) ++n;
  if (s.relation >= 0) ++n;
  if (s.style >= 0) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline float shape_sdf(ShapeKind kind, float px, float py, const ObjectSpec& o) {
  const float dx = px - o.cx;
  const float dy = py - o.cy;
  switch (kind) {
    case ShapeKind::circle:
      return o.radius - std::sqrt(dx * dx + dy * dy);
    case ShapeKind::square:
      return o.radius * 0.9f - std::max(std::fabs(dx), std::fabs(dy));
    case ShapeKind::triangle: {
      // Equilateral, apex up, circumradius ~= radius.
      const float r = o.radius * 1.15f;
      float worst = -1e9f;
      for (int e = 0; e < 3; ++e) {
        const float a0 = -1.5707963f + 2.0943951f * e;
        const float a1 = a0 + 2.0943951f;
        const float v0x = o.cx + r * std::cos(a0), v0y = o.cy + r * std::sin(a0);
        const float v1x = o.cx + r * std::cos(a1), v1y = o.cy + r * std::sin(a1);
        const float ex = v1x - v0x, ey = v1y - v0y;
        const float len = std::sqrt(ex * ex + ey * ey);
        // outward normal of the edge
        const float nx = ey / len, ny = -ex / len;
        worst = std::max(worst, (px - v0x) * nx + (py - v0y) * ny);
      }
      return -worst;
    }
    case ShapeKind::star: {
      const float dist = std::sqrt(dx * dx + dy * dy);
      float ang = std::atan2(dy, dx) + 1.5707963f;
      const float spike = std::pow(0.5f * (std::cos(5.f * ang) + 1.f), 0.55f);
      const float r = o.radius * (0.45f + 0.75f * spike);
      return r - dist;
    }
  }
  return -1e9f;
}

inline float coverage(float sdf, float softness) {
  const float a = 0.5f + sdf / (2.f * softness);
  return std::min(1.f, std::max(0.f, a));
}

}  // namespace detail

inline RenderedScene render_scene(const SceneSpec& spec) {
  RenderedScene out;
  out.scene = spec;

  const float sat = spec.aes.color_saturation;
  const float softness = 0.45f + 2.4f * (1.f - spec.aes.detail_sharpness);
  const int n = static_cast<int>(spec.objects.size());

  std::vector<float> rgb(3 * kCanvasPixels, kBackgroundGray);
  std::vector<std::vector<float>> alpha(static_cast<size_t>(n),
                                        std::vector<float>(kCanvasPixels, 0.f));

  for (int oi = 0; oi < n; ++oi) {
    const ObjectSpec& o = spec.objects[static_cast<size_t>(oi)];
    auto base = palette(o.color);
    const float luma = 0.299f * base[0] + 0.587f * base[1] + 0.114f * base[2];
    std::array<float, 3> col;
    for (int c = 0; c < 3; ++c) col[c] = luma * (1.f - sat) + base[c] * sat;
    const float y0 = o.cy - o.radius, y1 = o.cy + o.radius;
    for (int y = 0; y < kCanvas; ++y) {
      for (int x = 0; x < kCanvas; ++x) {
        const float px = x + 0.5f, py = y + 0.5f;
        const float sdf = detail::shape_sdf(o.shape, px, py, o);
        if (sdf < -3.f * softness) continue;
        float a = detail::coverage(sdf, softness);
        if (spec.style == StyleKind::outline) {
          const float inner = detail::coverage(sdf - 2.2f, softness);
          a = a * (1.f - inner);
        }
        if (a <= 0.f) continue;
        std::array<float, 3> shade = col;
        if (spec.style == StyleKind::textured) {
          const float checker = (((x / 2) + (y / 2)) % 2 == 0) ? 1.28f : 0.72f;
          for (auto& v : shade) v *= checker;
        } else if (spec.style == StyleKind::gradient) {
          const float t = std::min(1.f, std::max(0.f, (py - y0) / std::max(1.f, y1 - y0)));
          const float ramp = 0.65f + 0.7f * t;
          for (auto& v : shade) v *= ramp;
        }
        const int p = y * kCanvas + x;
        alpha[static_cast<size_t>(oi)][static_cast<size_t>(p)] = a;
        for (int c = 0; c < 3; ++c) {
          float& dst = rgb[static_cast<size_t>(c) * kCanvasPixels + p];
          dst = dst * (1.f - a) + std::min(1.f, std::max(0.f, shade[c])) * a;
        }
      }
    }
  }

  // Lighting: contrast about the mean luma.
  double mean = 0.0;
  for (float v : rgb) mean += v;
  mean /= rgb.size();
  const float k = 0.55f + 0.9f * spec.aes.lighting_contrast;
  for (auto& v : rgb) v = std::min(1.f, std::max(0.f, static_cast<float>(mean + (v - mean) * k)));

  out.image = Tensor::zeros({3, kCanvas, kCanvas});
  for (size_t i = 0; i < rgb.size(); ++i) out.image.data()[i] = rgb[i] * 2.f - 1.f;

  // Ground truth maps. Later objects own overlap pixels.
  out.semantic_map.assign(kCanvasPixels, 0);
  out.instance_map.assign(kCanvasPixels, 0);
  out.instance_masks.assign(static_cast<size_t>(n), std::vector<uint8_t>(kCanvasPixels, 0));
  for (int p = 0; p < kCanvasPixels; ++p) {
    int owner = -1;
    for (int oi = 0; oi < n; ++oi)
      if (alpha[static_cast<size_t>(oi)][static_cast<size_t>(p)] > 0.5f) owner = oi;
    if (owner < 0) continue;
    const ObjectSpec& o = spec.objects[static_cast<size_t>(owner)];
    out.instance_masks[static_cast<size_t>(owner)][static_cast<size_t>(p)] = 1;
    out.semantic_map[static_cast<size_t>(p)] = static_cast<uint8_t>(static_cast<int>(o.shape) + 1);
    const int slot = (o.cy >= kCanvas / 2 ? 2 : 0) + (o.cx >= kCanvas / 2 ? 1 : 0);
    out.instance_map[static_cast<size_t>(p)] = static_cast<uint8_t>(slot + 1);
  }

  // Caption.
  CaptionSlots s;
  s.shape1 = static_cast<int>(spec.objects[0].shape);
  s.color1 = spec.objects[0].color;
  s.relation = static_cast<int>(spec.relation);
  s.style = static_cast<int>(spec.style);
  if (n > 1) {
    s.shape2 = static_cast<int>(spec.objects[1].shape);
    s.color2 = spec.objects[1].color;
  }
  out.slots = s;
  out.caption = render_caption(s);
  return out;
}

// Location slot of an object (2x2 grid over the canvas).
inline int instance_slot(const ObjectSpec& o) {
  return (o.cy >= kCanvas / 2 ? 2 : 0) + (o.cx >= kCanvas / 2 ? 1 : 0);
}

inline SceneSpec spec_from_seed(uint64_t seed, float attr_lo = 0.4f, float attr_hi = 1.0f) {
  Rng rng = Rng::stream(seed, 0x5ce9e5u);
  SceneSpec spec;
  spec.relation = static_cast<RelationKind>(rng.uniform_int(0, kNumRelations - 1));
  spec.style = static_cast<StyleKind>(rng.uniform_int(0, kNumStyles - 1));
  spec.aes.color_saturation = static_cast<float>(rng.uniform(attr_lo, attr_hi));
  spec.aes.layout_balance = static_cast<float>(rng.uniform(attr_lo, attr_hi));
  spec.aes.detail_sharpness = static_cast<float>(rng.uniform(attr_lo, attr_hi));
  spec.aes.lighting_contrast = static_cast<float>(rng.uniform(attr_lo, attr_hi));

  const int n = spec.relation == RelationKind::centered ? 1 : 2;
  const float d = static_cast<float>(rng.uniform(6.5, 8.5));
  const float cx = kCanvas / 2.f, cy = kCanvas / 2.f;
  std::array<std::array<float, 2>, 2> centers{};
  switch (spec.relation) {
    case RelationKind::centered: centers[0] = {cx, cy}; break;
    case RelationKind::left_of:
      centers[0] = {cx - d, cy};
      centers[1] = {cx + d, cy};
      break;
    case RelationKind::above:
      centers[0] = {cx, cy - d};
      centers[1] = {cx, cy + d};
      break;
    case RelationKind::diagonal:
      centers[0] = {cx - d * 0.85f, cy - d * 0.85f};
      centers[1] = {cx + d * 0.85f, cy + d * 0.85f};
      break;
  }

  // Balance shifts the object group off center; jitter is per object.
  const float shift = (1.f - spec.aes.layout_balance) * 5.f;
  const float ang = static_cast<float>(rng.uniform(0.0, 6.283185307179586));
  const float sx = shift * std::cos(ang), sy = shift * std::sin(ang);

  for (int i = 0; i < n; ++i) {
    ObjectSpec o;
    o.shape = static_cast<ShapeKind>(rng.uniform_int(0, kNumShapes - 1));
    o.color = static_cast<int>(rng.uniform_int(0, kNumColors - 1));
    o.radius = static_cast<float>(rng.uniform(4.5, 6.0));
    o.cx = centers[static_cast<size_t>(i)][0] + sx + static_cast<float>(rng.uniform(-1.25, 1.25));
    o.cy = centers[static_cast<size_t>(i)][1] + sy + static_cast<float>(rng.uniform(-1.25, 1.25));
    o.cx = std::min(kCanvas - 1.f - o.radius, std::max(o.radius + 1.f, o.cx));
    o.cy = std::min(kCanvas - 1.f - o.radius, std::max(o.radius + 1.f, o.cy));
    spec.objects.push_back(o);
  }
  return spec;
}

inline RenderedScene generate_scene(uint64_t seed) { return render_scene(spec_from_seed(seed)); }

// Canonical reference patch per style, used as the gram target for style
// scoring. Fixed geometry so the patch depends only on the style.
inline Tensor style_reference(StyleKind style) {
  SceneSpec spec;
  spec.relation = RelationKind::left_of;
  spec.style = style;
  spec.aes = {0.9f, 1.0f, 0.85f, 0.5f};
  spec.objects.push_back({ShapeKind::square, 6, 9.5f, 16.f, 7.f});
  spec.objects.push_back({ShapeKind::circle, 2, 23.5f, 16.f, 7.f});
  return render_scene(spec).image;
}

// ---------------------------------------------------------------------------
// Measurable image statistics backing the four aesthetic dimensions
// ---------------------------------------------------------------------------

// Mean chroma on the [0,1] scale.
inline double saturation_stat(const Tensor& img) {
  const int hw = img.dim(1) * img.dim(2);
  const float* v = img.data();
  double s = 0.0;
  for (int p = 0; p < hw; ++p) {
    const float r = (v[p] + 1.f) * 0.5f;
    const float g = (v[hw + p] + 1.f) * 0.5f;
    const float b = (v[2 * hw + p] + 1.f) * 0.5f;
    s += std::max({r, g, b}) - std::min({r, g, b});
  }
  return s / hw;
}

// One minus normalized distance of the off-background mass centroid from the
// canvas center.
inline double balance_stat(const Tensor& img) {
  const int H = img.dim(1), W = img.dim(2), hw = H * W;
  const float* v = img.data();
  double wsum = 0.0, xsum = 0.0, ysum = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int p = y * W + x;
      const float luma = 0.299f * v[p] + 0.587f * v[hw + p] + 0.114f * v[2 * hw + p];
      const double w = std::fabs(luma - (kBackgroundGray * 2.f - 1.f));
      wsum += w;
      xsum += w * (x + 0.5);
      ysum += w * (y + 0.5);
    }
  if (wsum < 1e-9) return 1.0;
  const double dx = xsum / wsum - W / 2.0, dy = ysum / wsum - H / 2.0;
  return 1.0 - std::sqrt(dx * dx + dy * dy) / (W / 2.0);
}

// Mean absolute Laplacian of the luma channel.
inline double detail_stat(const Tensor& img) {
  const int H = img.dim(1), W = img.dim(2), hw = H * W;
  const float* v = img.data();
  std::vector<float> luma(static_cast<size_t>(hw));
  for (int p = 0; p < hw; ++p)
    luma[static_cast<size_t>(p)] = 0.299f * v[p] + 0.587f * v[hw + p] + 0.114f * v[2 * hw + p];
  double s = 0.0;
  for (int y = 1; y < H - 1; ++y)
    for (int x = 1; x < W - 1; ++x) {
      const float c = luma[static_cast<size_t>(y * W + x)];
      const float lap = 4.f * c - luma[static_cast<size_t>((y - 1) * W + x)] -
                        luma[static_cast<size_t>((y + 1) * W + x)] -
                        luma[static_cast<size_t>(y * W + x - 1)] -
                        luma[static_cast<size_t>(y * W + x + 1)];
      s += std::fabs(lap);
    }
  return s / ((H - 2) * (W - 2));
}

// Standard deviation of luma.
inline double contrast_stat(const Tensor& img) {
  const int hw = img.dim(1) * img.dim(2);
  const float* v = img.data();
  double m = 0.0, m2 = 0.0;
  for (int p = 0; p < hw; ++p) {
    const double luma = 0.299 * v[p] + 0.587 * v[hw + p] + 0.114 * v[2 * hw + p];
    m += luma;
    m2 += luma * luma;
  }
  m /= hw;
  return std::sqrt(std::max(0.0, m2 / hw - m * m));
}

inline double attribute_stat(const Tensor& img, AesDim d) {
  switch (d) {
    case AesDim::color: return saturation_stat(img);
    case AesDim::layout: return balance_stat(img);
    case AesDim::detail: return detail_stat(img);
    case AesDim::lighting: return contrast_stat(img);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Preference pairs
// ---------------------------------------------------------------------------

struct PreferencePair {
  std::string prompt;
  CaptionSlots slots;
  Tensor x_w;  // preferred
  Tensor x_l;  // unpreferred
  AesDim dimension;
  float attr_w = 0.f, attr_l = 0.f;
};

// Two renders of the same scene that differ only in the chosen dimension's
// attribute, with a margin of at least 0.15.
inline PreferencePair make_preference_pair(AesDim dim, uint64_t seed) {
  Rng rng = Rng::stream(seed, 0x9a17'0000u + static_cast<uint64_t>(dim));
  SceneSpec base = spec_from_seed(rng.next_u64());
  const float lo = static_cast<float>(rng.uniform(0.05, 0.72));
  const float margin = static_cast<float>(rng.uniform(0.16, std::min(0.28, 0.98 - lo)));
  SceneSpec spec_w = base, spec_l = base;
  spec_w.aes.set(dim, lo + margin);
  spec_l.aes.set(dim, lo);
  RenderedScene rw = render_scene(spec_w);
  RenderedScene rl = render_scene(spec_l);
  PreferencePair pair;
  pair.prompt = rw.caption;
  pair.slots = rw.slots;
  pair.x_w = rw.image;
  pair.x_l = rl.image;
  pair.dimension = dim;
  pair.attr_w = lo + margin;
  pair.attr_l = lo;
  return pair;
}

// ---------------------------------------------------------------------------
// Prompt corpus
// ---------------------------------------------------------------------------

struct PromptRecord {
  std::string text;
  std::vector<float> embedding;  // unit norm, kPromptEmbedDim
  int relation_count = 0;
};

namespace detail {

inline std::vector<float> slot_embedding(const CaptionSlots& s) {
  std::vector<float> e(kPromptEmbedDim, 0.f);
  auto bump = [&](int idx) { e[static_cast<size_t>(idx)] += 1.f; };
  if (s.shape1 >= 0) bump(s.shape1);
  if (s.shape2 >= 0) bump(s.shape2);
  if (s.color1 >= 0) bump(4 + s.color1);
  if (s.color2 >= 0) bump(4 + s.color2);
  if (s.relation >= 0) bump(12 + s.relation);
  if (s.style >= 0) bump(16 + s.style);
  return e;
}

inline void l2_normalize(std::vector<float>& e) {
  double n = 0.0;
  for (float v : e) n += static_cast<double>(v) * v;
  n = std::sqrt(std::max(n, 1e-12));
  for (float& v : e) v = static_cast<float>(v / n);
}

}  // namespace detail

inline PromptRecord prompt_from_slots(const CaptionSlots& s) {
  PromptRecord r;
  r.text = render_caption(s);
  r.embedding = detail::slot_embedding(s);
  detail::l2_normalize(r.embedding);
  r.relation_count = relation_count_of(s);
  return r;
}

// Meaningless filler in the spirit of junk database prompts.
inline PromptRecord noise_prompt(Rng& rng) {
  static const char* junk[] = {"ff", "0", "00", "7", "zz", "q3", "xx", "9", "kk", "vv", "3", "_"};
  const int count = static_cast<int>(rng.uniform_int(2, 5));
  PromptRecord r;
  r.embedding.assign(kPromptEmbedDim, 0.f);
  for (int i = 0; i < count; ++i) {
    const int j = static_cast<int>(rng.uniform_int(0, 11));
    if (i) r.text += ' ';
    r.text += junk[j];
    r.embedding[static_cast<size_t>(20 + j)] += 1.f;
  }
  detail::l2_normalize(r.embedding);
  r.relation_count = 0;
  return r;
}

inline CaptionSlots random_prompt_slots(Rng& rng, bool force_style = false) {
  CaptionSlots s;
  s.relation = static_cast<int>(rng.uniform_int(0, kNumRelations - 1));
  s.shape1 = static_cast<int>(rng.uniform_int(0, kNumShapes - 1));
  s.color1 = static_cast<int>(rng.uniform_int(0, kNumColors - 1));
  if (s.relation != static_cast<int>(RelationKind::centered)) {
    s.shape2 = static_cast<int>(rng.uniform_int(0, kNumShapes - 1));
    s.color2 = static_cast<int>(rng.uniform_int(0, kNumColors - 1));
  }
  if (force_style || rng.uniform() < 0.7) s.style = static_cast<int>(rng.uniform_int(0, kNumStyles - 1));
  return s;
}

inline std::vector<PromptRecord> prompt_corpus(int n, uint64_t seed, double noise_fraction) {
  if (n < 1) throw PreconditionError("prompt_corpus: n must be >= 1");
  if (noise_fraction < 0.0 || noise_fraction >= 1.0)
    throw PreconditionError("prompt_corpus: noise_fraction must be in [0,1)");
  std::vector<PromptRecord> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, 0x9120c0ull + static_cast<uint64_t>(i));
    if (rng.uniform() < noise_fraction) {
      out.push_back(noise_prompt(rng));
    } else {
      out.push_back(prompt_from_slots(random_prompt_slots(rng)));
    }
  }
  return out;
}

}  // namespace picodiff
