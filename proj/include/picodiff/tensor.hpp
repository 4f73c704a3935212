#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "picodiff/common.hpp"

namespace picodiff {

// Reverse-mode autograd at tensor granularity. Every op records its parents
// and a pull-style backward closure; Tensor::backward() walks the graph in
// reverse topological order. Values and gradients are float, reductions
// accumulate in double.

// Buffer allocator for tensor storage: 64-byte aligned so Eigen's packet
// traversal (and therefore float rounding) is identical on every run, and
// default-initializing because op outputs are fully overwritten anyway.
template <typename T>
struct TensorAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  TensorAlloc() = default;
  template <typename U>
  TensorAlloc(const TensorAlloc<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
  bool operator==(const TensorAlloc&) const { return true; }
};

using FloatVec = std::vector<float, TensorAlloc<float>>;

struct TensorImpl {
  std::vector<int> shape;
  FloatVec v;
  FloatVec g;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backprop;

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.f);
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Scoped no-grad region; ops executed inside do not record the graph.
struct NoGrad {
  NoGrad() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGrad() { detail::grad_mode() = prev_; }

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->v.assign(impl->numel(), 0.f);
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  static Tensor full(std::vector<int> shape, float value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.impl_->v.begin(), t.impl_->v.end(), value);
    return t;
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  static Tensor from(std::vector<int> shape, const std::vector<float>& values,
                     bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->v.assign(values.begin(), values.end());
    if (impl->v.size() != impl->numel()) throw PreconditionError("tensor: value count does not match shape");
    impl->requires_grad = requires_grad;
    return Tensor(impl);
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return impl_->numel(); }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  float* data() { return impl_->v.data(); }
  const float* data() const { return impl_->v.data(); }
  FloatVec& values() { return impl_->v; }
  const FloatVec& values() const { return impl_->v; }

  float item() const {
    if (numel() != 1) throw PreconditionError("tensor: item() on non-scalar");
    return impl_->v[0];
  }

  float* grad() {
    impl_->ensure_grad();
    return impl_->g.data();
  }
  const FloatVec& grad_values() const { return impl_->g; }
  void zero_grad() {
    if (!impl_->g.empty()) std::fill(impl_->g.begin(), impl_->g.end(), 0.f);
  }

  // Copy of the values with no graph attached.
  Tensor detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->v = impl_->v;
    return Tensor(impl);
  }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

  uint64_t value_hash() const { return fnv1a(impl_->v); }

  // Reverse-topological sweep from this scalar. Gradients accumulate, so
  // several backward calls before an optimizer step sum their contributions.
  void backward() const {
    if (numel() != 1) throw PreconditionError("backward: loss must be scalar");
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    topo(impl_.get(), seen, order);
    impl_->ensure_grad();
    impl_->g[0] += 1.f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl* node = *it;
      if (node->backprop) node->backprop(*node);
    }
  }

 private:
  static void topo(TensorImpl* node, std::unordered_set<TensorImpl*>& seen,
                   std::vector<TensorImpl*>& order) {
    if (!node || seen.count(node)) return;
    // Iterative DFS; graphs from long rollouts can exceed stack depth.
    struct Frame {
      TensorImpl* n;
      size_t next_child;
    };
    std::vector<Frame> stack{{node, 0}};
    seen.insert(node);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_child < f.n->parents.size()) {
        TensorImpl* child = f.n->parents[f.next_child++].get();
        if (child && !seen.count(child)) {
          seen.insert(child);
          stack.push_back({child, 0});
        }
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

// Creates the output node of an op. Parents and the backward closure are
// recorded only when grad mode is on and some parent needs gradients.
inline Tensor make_op(std::vector<int> shape, std::vector<Tensor> parents,
                      std::function<void(TensorImpl&)> backprop) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->v.resize(impl->numel());  // uninitialized; ops overwrite in full
  bool needs = false;
  if (grad_mode()) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    impl->requires_grad = true;
    for (auto& p : parents) impl->parents.push_back(p.impl());
    impl->backprop = std::move(backprop);
  }
  return Tensor(impl);
}

}  // namespace detail

}  // namespace picodiff
