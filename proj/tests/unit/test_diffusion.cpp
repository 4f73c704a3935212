#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "picodiff/denoiser.hpp"
#include "picodiff/schedule.hpp"
#include "../testutil.hpp"

using namespace picodiff;

namespace {

// Derives the injected noise from the known clean image; the ideal denoiser.
struct ExactEpsStub : NoisePredictor {
  Tensor z0;  // [B,3,H,W]
  const NoiseSchedule* sched;
  Tensor predict(const Tensor& z, const std::vector<int>& t,
                 const std::vector<CaptionSlots>&) override {
    Tensor out = Tensor::zeros(z.shape());
    const int B = z.dim(0);
    const size_t per = z.numel() / static_cast<size_t>(B);
    for (int b = 0; b < B; ++b) {
      const double ab = sched->abar(t[static_cast<size_t>(b)]);
      const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
      for (size_t i = 0; i < per; ++i) {
        const size_t j = static_cast<size_t>(b) * per + i;
        out.data()[j] = static_cast<float>((z.data()[j] - sa * z0.data()[j]) / sb);
      }
    }
    return out;
  }
};

struct ZeroStub : NoisePredictor {
  Tensor predict(const Tensor& z, const std::vector<int>&, const std::vector<CaptionSlots>&) override {
    return Tensor::zeros(z.shape());
  }
};

struct FixedEpsStub : NoisePredictor {
  Tensor eps;
  Tensor predict(const Tensor&, const std::vector<int>&, const std::vector<CaptionSlots>&) override {
    return eps.detach();
  }
};

Tensor random_image(int B, uint64_t seed, float lim = 0.9f) {
  Tensor t = Tensor::zeros({B, 3, kCanvas, kCanvas});
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-lim, lim));
  return t;
}

// Single image without the batch dim, for batch lists.
Tensor random_image3(uint64_t seed, float lim = 0.9f) {
  Tensor t = Tensor::zeros({3, kCanvas, kCanvas});
  Rng rng(seed);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-lim, lim));
  return t;
}

}  // namespace

TEST_CASE("build_schedule closed-form examples") {
  NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  REQUIRE(s.alpha[0] == Catch::Approx(0.9).epsilon(1e-9));
  REQUIRE(s.alpha[1] == Catch::Approx(0.8).epsilon(1e-9));
  REQUIRE(s.alpha_bar[0] == Catch::Approx(0.9).epsilon(1e-9));
  REQUIRE(s.alpha_bar[1] == Catch::Approx(0.72).epsilon(1e-9));

  NoiseSchedule s1 = build_schedule(1, 0.5, 0.5);
  REQUIRE(s1.alpha_bar[0] == Catch::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("build_schedule matches brute-force product oracle") {
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  // independent loop over the product, double precision
  double prod = 1.0;
  for (int t = 0; t < 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * t / 999.0;
    prod *= 1.0 - beta;
    REQUIRE(std::fabs(s.alpha_bar[static_cast<size_t>(t)] - prod) < 1e-10);
  }
  REQUIRE(std::fabs(static_cast<double>(s.alpha_bar[999]) - prod) < 1e-10);
}

TEST_CASE("schedule invariants hold for random parameters") {
  Rng rng(42);
  for (int i = 0; i < 20; ++i) {
    const int T = static_cast<int>(rng.uniform_int(1, 500));
    const double b0 = rng.uniform(1e-5, 0.3);
    const double b1 = rng.uniform(b0, 0.5);
    NoiseSchedule s = build_schedule(T, b0, b1);
    for (int t = 0; t < T; ++t) {
      REQUIRE(s.beta[static_cast<size_t>(t)] > 0.0);
      REQUIRE(s.beta[static_cast<size_t>(t)] < 1.0);
      REQUIRE(s.alpha[static_cast<size_t>(t)] == 1.0 - s.beta[static_cast<size_t>(t)]);
      REQUIRE(s.alpha_bar[static_cast<size_t>(t)] > 0.0);
      REQUIRE(s.alpha_bar[static_cast<size_t>(t)] <= 1.0);
      if (t > 0) {
        REQUIRE(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t) - 1]);
        REQUIRE(s.alpha_bar[static_cast<size_t>(t)] ==
                Catch::Approx(s.alpha_bar[static_cast<size_t>(t) - 1] * s.alpha[static_cast<size_t>(t)])
                    .epsilon(1e-14));
      }
    }
  }
}

TEST_CASE("build_schedule rejects invalid input") {
  REQUIRE_THROWS_AS(build_schedule(0, 0.1, 0.2), PreconditionError);
  REQUIRE_THROWS_AS(build_schedule(10, 0.0, 0.2), PreconditionError);
  REQUIRE_THROWS_AS(build_schedule(10, 0.3, 0.2), PreconditionError);
  REQUIRE_THROWS_AS(build_schedule(10, 0.1, 1.0), PreconditionError);
}

TEST_CASE("add_noise closed forms") {
  NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  Tensor z0 = Tensor::full({1, 2}, 1.f);
  Tensor zero = Tensor::zeros({1, 2});
  Tensor one = Tensor::full({1, 2}, 1.f);

  Tensor a = add_noise(z0, zero, 1, s);
  REQUIRE(a.data()[0] == Catch::Approx(std::sqrt(0.72)).epsilon(1e-6));

  // abar = 0.72, z0 = 1, eps = 1: sqrt(0.72) + sqrt(0.28) = 1.37768
  Tensor b = add_noise(z0, one, 1, s);
  REQUIRE(b.data()[0] == Catch::Approx(std::sqrt(0.72) + std::sqrt(0.28)).epsilon(1e-6));
  REQUIRE(b.data()[0] == Catch::Approx(1.37766).margin(5e-5));

  Tensor e = Tensor::from({1, 2}, {0.3f, -0.7f});
  Tensor c = add_noise(zero, e, 1, s);
  REQUIRE(c.data()[1] == Catch::Approx(std::sqrt(0.28) * -0.7).epsilon(1e-6));

  REQUIRE_THROWS_AS(add_noise(z0, Tensor::zeros({1, 3}), 1, s), PreconditionError);
  REQUIRE_THROWS_AS(add_noise(z0, zero, 2, s), PreconditionError);
}

TEST_CASE("predict_x0 inverts add_noise at every t") {
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  Tensor z0 = random_image(1, 7);
  Tensor eps = Tensor::zeros(z0.shape());
  Rng rng(8);
  rng.fill_normal(eps.data(), eps.numel());
  for (int t : {0, 1, 17, 250, 500, 998, 999}) {
    Tensor zt = add_noise(z0, eps, t, s);
    Tensor rec = predict_x0(zt, eps, t, s);
    for (size_t i = 0; i < z0.numel(); ++i) {
      REQUIRE(std::fabs(rec.data()[i] - z0.data()[i]) <
              1e-6f * std::max(1.f, std::fabs(z0.data()[i])) + 2e-5f);
    }
  }
}

TEST_CASE("predict_x0 closed forms and scalar oracle") {
  NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  Tensor zt = Tensor::from({1, 2}, {0.4f, -0.2f});
  Tensor zero = Tensor::zeros({1, 2});
  Tensor r = predict_x0(zt, zero, 1, s);
  REQUIRE(r.data()[0] == Catch::Approx(0.4 / std::sqrt(0.72)).epsilon(1e-6));

  Tensor eps = Tensor::from({1, 2}, {0.9f, 0.1f});
  Tensor p = predict_x0(zt, eps, 0, s);
  // separate scalar recomputation of the closed form
  for (int i = 0; i < 2; ++i) {
    const double expect = (zt.data()[i] - std::sqrt(1.0 - 0.9) * eps.data()[i]) / std::sqrt(0.9);
    REQUIRE(p.data()[i] == Catch::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("ddim_step clean endpoint returns the x0 estimate") {
  NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  Tensor zt = Tensor::from({1, 2}, {0.6f, -0.3f});
  Tensor eps = Tensor::from({1, 2}, {0.2f, 0.5f});
  Tensor out = ddim_step(zt, eps, 1, -1, s);
  Tensor x0 = predict_x0(zt, eps, 1, s);
  for (int i = 0; i < 2; ++i) REQUIRE(out.data()[i] == x0.data()[i]);
  REQUIRE_THROWS_AS(ddim_step(zt, eps, 1, 1, s), PreconditionError);
}

TEST_CASE("ddim_step matches hand-computed scalar form on a 2-pixel image") {
  NoiseSchedule s = build_schedule(2, 0.1, 0.2);
  Tensor zt = Tensor::from({1, 2}, {0.8f, -0.4f});
  Tensor eps = Tensor::from({1, 2}, {-0.1f, 0.6f});
  Tensor out = ddim_step(zt, eps, 1, 0, s);
  for (int i = 0; i < 2; ++i) {
    const double x0 = (zt.data()[i] - std::sqrt(0.28) * eps.data()[i]) / std::sqrt(0.72);
    const double expect = std::sqrt(0.9) * x0 + std::sqrt(0.1) * eps.data()[i];
    REQUIRE(out.data()[i] == Catch::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("full-ladder ddim with exact-eps stub recovers z0") {
  NoiseSchedule s = build_schedule(200, 1e-4, 0.02);
  Tensor z0 = random_image(2, 21);
  Tensor eps = Tensor::zeros(z0.shape());
  Rng rng(22);
  rng.fill_normal(eps.data(), eps.numel());
  Tensor start = add_noise(z0, eps, s.T - 1, s);
  FixedEpsStub stub;
  stub.eps = eps;
  std::vector<CaptionSlots> c(2);
  Tensor rec = ddim_generate(stub, c, start, inference_ladder(s.T, s.T), s);
  for (size_t i = 0; i < z0.numel(); ++i)
    REQUIRE(std::fabs(rec.data()[i] - z0.data()[i]) < 1e-5f);
}

TEST_CASE("sample with exact-eps stub converges to the target image") {
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  ExactEpsStub stub;
  stub.z0 = random_image(3, 31);
  stub.sched = &s;
  std::vector<CaptionSlots> c(3);
  Tensor out = sample(stub, c, 20, s, 77);
  for (size_t i = 0; i < out.numel(); ++i)
    REQUIRE(std::fabs(out.data()[i] - stub.z0.data()[i]) < 1e-4f);
}

TEST_CASE("sample shape contract and determinism across step counts") {
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  DenoiserConfig cfg{.channels = 4, .emb = 8, .T = 1000};
  Denoiser model(cfg, 5);
  std::vector<CaptionSlots> c(2);
  c[0].shape1 = 1;
  c[0].color1 = 2;
  c[0].relation = static_cast<int>(RelationKind::centered);
  for (int n : {1, 2, 4, 8}) {
    Tensor out = sample(model, c, n, s, 123);
    REQUIRE(out.shape() == std::vector<int>{2, 3, kCanvas, kCanvas});
    for (size_t i = 0; i < out.numel(); ++i) {
      REQUIRE(out.data()[i] <= 1.f);
      REQUIRE(out.data()[i] >= -1.f);
    }
  }
  Tensor a = sample(model, c, 8, s, 99);
  Tensor b = sample(model, c, 8, s, 99);
  REQUIRE(a.value_hash() == b.value_hash());
  Tensor d = sample(model, c, 8, s, 100);
  REQUIRE(a.value_hash() != d.value_hash());
  REQUIRE_THROWS_AS(sample(model, c, 0, s, 1), PreconditionError);
  REQUIRE_THROWS_AS(sample(model, c, 1001, s, 1), PreconditionError);
}

TEST_CASE("pretrain_loss is zero for the exact denoiser") {
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  std::vector<Tensor> z0;
  for (int i = 0; i < 4; ++i) z0.push_back(random_image3(100 + static_cast<uint64_t>(i)));
  ExactEpsStub stub;
  stub.z0 = stack_images(z0);
  stub.sched = &s;
  std::vector<CaptionSlots> c(4);
  Rng rng(55);
  Tensor loss = pretrain_loss(stub, z0, c, s, rng);
  REQUIRE(loss.item() < 1e-6f);
}

TEST_CASE("pretrain_loss of the zero model estimates the noise energy") {
  NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  std::vector<Tensor> z0(256, Tensor::zeros({3, kCanvas, kCanvas}));
  ZeroStub stub;
  std::vector<CaptionSlots> c(256);
  Rng rng(66);
  Tensor loss = pretrain_loss(stub, z0, c, s, rng);
  const double expect = 3.0 * kCanvas * kCanvas;
  REQUIRE(std::fabs(loss.item() - expect) / expect < 0.05);
}

TEST_CASE("pretrain_loss determinism") {
  NoiseSchedule s = build_schedule(100, 1e-3, 0.02);
  DenoiserConfig cfg{.channels = 4, .emb = 8, .T = 100};
  Denoiser model(cfg, 9);
  std::vector<Tensor> z0{random_image3(1), random_image3(2)};
  std::vector<CaptionSlots> c(2);
  Rng r1(7), r2(7);
  Tensor a = pretrain_loss(model, z0, c, s, r1);
  Tensor b = pretrain_loss(model, z0, c, s, r2);
  REQUIRE(a.item() == b.item());
  REQUIRE_THROWS_AS(pretrain_loss(model, {}, {}, s, r1), PreconditionError);
}

TEST_CASE("pretrain_loss gradient matches finite differences on a small denoiser") {
  NoiseSchedule s = build_schedule(50, 1e-3, 0.05);
  DenoiserConfig cfg{.channels = 4, .emb = 8, .T = 50};
  Denoiser model(cfg, 11);
  REQUIRE(model.params().total_count() <= 10000);
  std::vector<Tensor> z0{random_image3(3), random_image3(4)};
  std::vector<CaptionSlots> c(2);
  c[0].shape1 = 0;
  c[0].color1 = 1;
  c[0].relation = 2;
  auto loss = [&] {
    Rng rng(17);
    return pretrain_loss(model, z0, c, s, rng);
  };
  int checked = 0;
  Rng pick(23);
  auto& ps = model.params();
  for (int probe = 0; probe < 20; ++probe) {
    Tensor t = ps.tensors()[static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(ps.size()) - 1))];
    ps.zero_grad();
    auto res = testutil::fd_check(loss, t,
                                  testutil::probe_indices(t.numel(), 1, 500 + static_cast<uint64_t>(probe)));
    CAPTURE(probe, res.max_abs_err);
    REQUIRE(res.max_rel_err < 1e-3);
    checked += res.checked;
  }
  REQUIRE(checked == 20);
}

TEST_CASE("denoiser output is deterministic and shape preserving") {
  DenoiserConfig cfg{.channels = 4, .emb = 8, .T = 50};
  Denoiser model(cfg, 13);
  Tensor z = random_image(2, 40);
  std::vector<int> t{3, 44};
  std::vector<CaptionSlots> c(2);
  Tensor a = model.predict(z, t, c);
  Tensor b = model.predict(z, t, c);
  REQUIRE(a.shape() == z.shape());
  REQUIRE(a.value_hash() == b.value_hash());
}
