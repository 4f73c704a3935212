#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "picodiff/ops.hpp"
#include "picodiff/rng.hpp"

namespace picodiff {

// Named, ordered collection of trainable tensors. Networks register their
// parameters here; the optimizer and the checkpoint code work off this list.
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    names_.push_back(name);
    tensors_.push_back(t);
    return t;
  }

  size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  Tensor find(const std::string& name) const {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return tensors_[i];
    throw PreconditionError("ParamSet: no parameter named " + name);
  }

  size_t total_count() const {
    size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& t : tensors_) t.zero_grad();
  }

  void freeze() {
    for (auto& t : tensors_) t.set_requires_grad(false);
  }
  void unfreeze() {
    for (auto& t : tensors_) t.set_requires_grad(true);
  }

  uint64_t hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : tensors_) h = fnv1a(t.values(), h);
    return h;
  }

  // Copies values from another set with identical layout.
  void copy_values_from(const ParamSet& src) {
    if (src.size() != size()) throw PreconditionError("ParamSet: layout mismatch in copy");
    for (size_t i = 0; i < tensors_.size(); ++i) {
      if (src.tensors_[i].shape() != tensors_[i].shape())
        throw PreconditionError("ParamSet: shape mismatch in copy at " + names_[i]);
      tensors_[i].values() = src.tensors_[i].values();
    }
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

inline Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng, float gain = 1.f) {
  Tensor t = Tensor::zeros(std::move(shape));
  const float std = gain * std::sqrt(2.f / static_cast<float>(fan_in));
  for (auto& v : t.values()) v = rng.normal() * std;
  return t;
}

inline Tensor normal_init(std::vector<int> shape, float std, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * std;
  return t;
}

// Adam with optional persistent state (for exact resume).
class Adam {
 public:
  explicit Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamSet& params) {
    auto& ts = params.tensors();
    if (m_.empty()) {
      m_.resize(ts.size());
      v_.resize(ts.size());
      for (size_t i = 0; i < ts.size(); ++i) {
        m_[i].assign(ts[i].numel(), 0.f);
        v_[i].assign(ts[i].numel(), 0.f);
      }
    }
    ++t_;
    const float bc1 = 1.f - std::pow(b1_, static_cast<float>(t_));
    const float bc2 = 1.f - std::pow(b2_, static_cast<float>(t_));
    for (size_t i = 0; i < ts.size(); ++i) {
      float* w = ts[i].data();
      const float* g = ts[i].grad();
      float* m = m_[i].data();
      float* v = v_[i].data();
      const size_t n = ts[i].numel();
      for (size_t j = 0; j < n; ++j) {
        m[j] = b1_ * m[j] + (1.f - b1_) * g[j];
        v[j] = b2_ * v[j] + (1.f - b2_) * g[j] * g[j];
        const float mh = m[j] / bc1;
        const float vh = v[j] / bc2;
        w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
      }
    }
  }

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }

  // Raw state access for checkpointing.
  std::vector<std::vector<float>>& moment1() { return m_; }
  std::vector<std::vector<float>>& moment2() { return v_; }
  void restore(int64_t t, std::vector<std::vector<float>> m, std::vector<std::vector<float>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  float lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

}  // namespace picodiff
