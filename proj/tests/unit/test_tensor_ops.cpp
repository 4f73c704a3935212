#include <catch2/catch_amalgamated.hpp>

#include "picodiff/ops.hpp"
#include "picodiff/rng.hpp"
#include "../testutil.hpp"

using namespace picodiff;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, bool rg = false) {
  Tensor t = Tensor::zeros(std::move(shape), rg);
  Rng rng(seed);
  rng.fill_normal(t.data(), t.numel());
  return t;
}

}  // namespace

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a = Rng::stream(7, 1), b = Rng::stream(7, 1), c = Rng::stream(7, 2);
  REQUIRE(a.next_u64() == b.next_u64());
  REQUIRE(a.next_u64() == b.next_u64());
  REQUIRE(Rng::stream(7, 1).next_u64() != c.next_u64());
}

TEST_CASE("rng normal moments") {
  Rng rng(123);
  double m = 0, m2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    m += x;
    m2 += x * x;
  }
  m /= n;
  m2 /= n;
  REQUIRE(std::fabs(m) < 0.02);
  REQUIRE(std::fabs(m2 - 1.0) < 0.02);
}

TEST_CASE("add and mul backward") {
  Tensor a = random_tensor({2, 3}, 1, true);
  Tensor b = random_tensor({2, 3}, 2, true);
  Tensor loss = sum_all(mul(add(a, b), b));
  loss.backward();
  for (size_t i = 0; i < a.numel(); ++i) {
    REQUIRE(a.grad_values()[i] == Catch::Approx(b.data()[i]));
    REQUIRE(b.grad_values()[i] == Catch::Approx(a.data()[i] + 2 * b.data()[i]));
  }
}

TEST_CASE("linear matches finite differences") {
  Tensor x = random_tensor({3, 5}, 3, true);
  Tensor W = random_tensor({4, 5}, 4, true);
  Tensor b = random_tensor({4}, 5, true);
  auto loss = [&] { return mean_all(silu(linear(x, W, b))); };
  for (Tensor t : {x, W, b}) {
    auto res = testutil::fd_check(loss, t, testutil::probe_indices(t.numel(), 10, 99));
    CAPTURE(res.max_abs_err);
    REQUIRE(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("conv2d matches finite differences") {
  Tensor x = random_tensor({2, 3, 6, 6}, 6, true);
  Tensor W = random_tensor({4, 3, 3, 3}, 7, true);
  Tensor b = random_tensor({4}, 8, true);
  auto loss = [&] { return mean_all(silu(conv2d(x, W, b))); };
  for (Tensor t : {x, W, b}) {
    auto res = testutil::fd_check(loss, t, testutil::probe_indices(t.numel(), 12, 100));
    REQUIRE(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("conv2d 1x1 kernel") {
  Tensor x = random_tensor({1, 2, 4, 4}, 9, true);
  Tensor W = random_tensor({3, 2, 1, 1}, 10, true);
  auto loss = [&] { return mean_all(conv2d(x, W, Tensor())); };
  auto res = testutil::fd_check(loss, W, {0, 1, 2, 3, 4, 5});
  REQUIRE(res.max_rel_err < 1e-3);
}

TEST_CASE("pool, upsample, gap, chan_bias backward") {
  Tensor x = random_tensor({2, 3, 8, 8}, 11, true);
  Tensor bias = random_tensor({2, 3}, 12, true);
  auto loss = [&] {
    Tensor h = chan_bias(avg_pool2(upsample2(avg_pool2(x))), bias);
    return mean_all(mul(h, h));
  };
  for (Tensor t : {x, bias}) {
    auto res = testutil::fd_check(loss, t, testutil::probe_indices(t.numel(), 10, 101));
    REQUIRE(res.max_rel_err < 1e-3);
  }
  Tensor g = global_avg_pool(x);
  REQUIRE(g.shape() == std::vector<int>{2, 3});
}

TEST_CASE("softmax cross entropy map") {
  Tensor logits = random_tensor({2, 4, 3, 3}, 13, true);
  std::vector<uint8_t> labels(2 * 9);
  Rng rng(77);
  for (auto& l : labels) l = static_cast<uint8_t>(rng.uniform_int(0, 3));
  auto loss = [&] { return softmax_ce_map(logits, labels); };
  auto res = testutil::fd_check(loss, logits, testutil::probe_indices(logits.numel(), 16, 102));
  REQUIRE(res.max_rel_err < 1e-3);
  // uniform logits give log K
  Tensor flat = Tensor::zeros({1, 4, 3, 3}, false);
  std::vector<uint8_t> l2(9, 1);
  REQUIRE(softmax_ce_map(flat, l2).item() == Catch::Approx(std::log(4.0)).margin(1e-6));
}

TEST_CASE("gram backward and embedding") {
  Tensor x = random_tensor({2, 3, 4, 4}, 14, true);
  auto loss = [&] { return mean_all(gram_batch(x)); };
  auto res = testutil::fd_check(loss, x, testutil::probe_indices(x.numel(), 12, 103));
  REQUIRE(res.max_rel_err < 1e-3);

  Tensor table = random_tensor({5, 4}, 15, true);
  std::vector<int> ids{0, 3, -1, 4};
  auto eloss = [&] { return mean_all(mul(embed_rows(table, ids), embed_rows(table, ids))); };
  auto eres = testutil::fd_check(eloss, table, testutil::probe_indices(table.numel(), 10, 104));
  REQUIRE(eres.max_rel_err < 1e-3);
  Tensor e = embed_rows(table, ids);
  for (int d = 0; d < 4; ++d) REQUIRE(e.data()[2 * 4 + d] == 0.f);
}

TEST_CASE("reductions, softplus, dot") {
  Tensor x = random_tensor({3, 7}, 16, true);
  Tensor y = random_tensor({3, 7}, 17, true);
  auto loss = [&] {
    Tensor d = dot_rows(softplus(x), sigmoid(y));
    return add(mean_all(d), scale(sum_all(sumsq_per_sample(x)), 0.01f));
  };
  for (Tensor t : {x, y}) {
    auto res = testutil::fd_check(loss, t, testutil::probe_indices(t.numel(), 10, 105));
    REQUIRE(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("clamp gradient passes inside the range only") {
  Tensor x = Tensor::from({4}, {-2.f, -0.2f, 0.3f, 1.7f}, true);
  Tensor loss = sum_all(clamp(x, -1.f, 1.f));
  loss.backward();
  REQUIRE(x.grad_values()[0] == 0.f);
  REQUIRE(x.grad_values()[1] == 1.f);
  REQUIRE(x.grad_values()[2] == 1.f);
  REQUIRE(x.grad_values()[3] == 0.f);
}

TEST_CASE("no-grad mode skips graph recording") {
  Tensor a = random_tensor({2, 2}, 18, true);
  NoGrad ng;
  Tensor out = mul(a, a);
  REQUIRE_FALSE(out.requires_grad());
}

TEST_CASE("backward accumulates across calls") {
  Tensor a = Tensor::from({2}, {1.f, 2.f}, true);
  Tensor l1 = sum_all(a);
  Tensor l2 = sum_all(mul(a, a));
  l1.backward();
  l2.backward();
  REQUIRE(a.grad_values()[0] == Catch::Approx(1.f + 2.f));
  REQUIRE(a.grad_values()[1] == Catch::Approx(1.f + 4.f));
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  ParamSet ps;
  Rng rng(1);
  Tensor w = ps.add("w", normal_init({4}, 1.f, rng));
  std::vector<float> before(w.values().begin(), w.values().end());
  Adam opt(1e-2f);
  w.grad();  // allocate zero grads
  opt.step(ps);
  REQUIRE(std::equal(w.values().begin(), w.values().end(), before.begin(), before.end()));
}
