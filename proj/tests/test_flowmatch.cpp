#include <algorithm>
#include <limits>
#include <cmath>

#include "doctest.h"
#include "twinflow/flowmatch.hpp"

using namespace twinflow;

namespace {

ActionChunk const_chunk(int T, int D, float v, float hz = 20.f) {
  ActionChunk c(T, D, hz);
  std::fill(c.data.begin(), c.data.end(), v);
  return c;
}

}  // namespace

TEST_CASE("tau transform endpoints") {
  CHECK(tau_from_uniform(1.0) == doctest::Approx(0.0));      // X = 1
  CHECK(tau_from_uniform(0.0) == doctest::Approx(0.999));    // X = 0
}

TEST_CASE("tau sampler stays inside [0, 0.999] and has the Beta-derived mean") {
  Rng rng(123);
  const int N = 1000000;
  double acc = 0;
  for (int i = 0; i < N; ++i) {
    float t = sample_tau(rng);
    REQUIRE(t >= 0.f);
    REQUIRE(t <= 0.999f);
    acc += t;
  }
  // E[tau] = 0.999 * (1 - 1.5/2.5)
  CHECK(acc / N == doctest::Approx(0.3996).epsilon(0.005));
}

TEST_CASE("tau sampler empirical CDF matches the transformed Beta CDF") {
  Rng rng(7);
  const int N = 100000;
  std::vector<float> xs(N);
  for (int i = 0; i < N; ++i) xs[i] = sample_tau(rng);
  std::sort(xs.begin(), xs.end());
  double ks = 0;
  for (int i = 0; i < N; ++i) {
    double f = tau_cdf(xs[i]);
    ks = std::max(ks, std::abs(f - (i + 1.0) / N));
    ks = std::max(ks, std::abs(f - static_cast<double>(i) / N));
  }
  CHECK(ks <= 0.01);
}

TEST_CASE("make_flow_sample: forced endpoints and the defining identities") {
  Rng rng(5);
  ActionChunk a = const_chunk(2, 10, 0.f);
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<float>(rng.uniform(-1, 1));

  FlowSample s1 = make_flow_sample(a, rng, 1.0f);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(s1.a_tau.data[i] == a.data[i]);

  FlowSample s0 = make_flow_sample(a, rng, 0.0f);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(s0.a_tau.data[i] == s0.eps.data[i]);

  FlowSample s = make_flow_sample(a, rng);
  CHECK(s.check());

  // direct numbers: A=[2], eps=[0], tau=0.5 -> a_tau=1, u=-2
  float atau = 0.5f * 2.f + 0.5f * 0.f;
  CHECK(atau == 1.0f);
  CHECK(0.f - 2.f == -2.0f);
}

TEST_CASE("fm_loss: zero at match, one at unit offset, oracle on random pairs") {
  Rng rng(9);
  Tensor u = Tensor::randn({4, 10}, rng);
  CHECK(fm_loss(u, u) == doctest::Approx(0.0));
  Tensor v = u;
  for (auto& x : v.data) x += 1.f;
  CHECK(fm_loss(v, u) == doctest::Approx(1.0).epsilon(1e-6));

  Tensor w = Tensor::randn({4, 10}, rng);
  double acc = 0;
  for (std::size_t i = 0; i < w.data.size(); ++i) {
    double d = double(w.data[i]) - double(u.data[i]);
    acc += d * d;
  }
  CHECK(fm_loss(w, u) == doctest::Approx(acc / w.numel()).epsilon(1e-9));

  Tensor bad({3, 10});
  CHECK_THROWS_AS(fm_loss(bad, u), TwinflowError);
}

TEST_CASE("euler_sample: zero field returns the initial noise draw") {
  SamplerConfig cfg{10, 0.999f};
  Rng r1(42);
  ActionChunk out = euler_sample([](const Tensor& a, float) { return Tensor(a.shape); }, 3, 10, cfg, r1);
  Rng r2(42);
  Tensor noise({3, 10});
  for (auto& v : noise.data) v = static_cast<float>(r2.normal());
  for (std::size_t i = 0; i < noise.data.size(); ++i) CHECK(out.data[i] == noise.data[i]);
}

TEST_CASE("euler_sample: analytic point-mass flow is recovered exactly for any n") {
  Rng rng(17);
  Tensor target = Tensor::randn({2, 10}, rng);
  FlowField field = [&](const Tensor& a, float tau) {
    Tensor v(a.shape);
    for (std::size_t i = 0; i < v.data.size(); ++i)
      v.data[i] = (a.data[i] - target.data[i]) / (1.0f - tau);
    return v;
  };
  for (int n : {1, 5, 10}) {
    SamplerConfig cfg{n, 1.0f};
    Rng r(100 + n);
    ActionChunk out = euler_sample(field, 2, 10, cfg, r);
    double worst = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i)
      worst = std::max(worst, std::abs(double(out.data[i]) - double(target.data[i])));
    CHECK(worst < 1e-5);
  }
  // n=1 vs n=10 agree (trajectory linear in tau)
  Rng ra(55), rb(55);
  ActionChunk o1 = euler_sample(field, 2, 10, SamplerConfig{1, 1.0f}, ra);
  ActionChunk o10 = euler_sample(field, 2, 10, SamplerConfig{10, 1.0f}, rb);
  for (std::size_t i = 0; i < o1.data.size(); ++i)
    CHECK(std::abs(o1.data[i] - o10.data[i]) < 1e-5);
}

TEST_CASE("euler_sample: non-finite intermediate names the step") {
  SamplerConfig cfg{4, 0.999f};
  Rng r(3);
  FlowField field = [](const Tensor& a, float tau) {
    Tensor v(a.shape);
    if (tau > 0.4f)
      for (auto& x : v.data) x = std::numeric_limits<float>::infinity();
    return v;
  };
  CHECK_THROWS_WITH_AS(euler_sample(field, 1, 10, cfg, r),
                       doctest::Contains("step 2"), TwinflowError);
}

TEST_CASE("sampler config validation") {
  CHECK_THROWS_AS((SamplerConfig{0, 0.999f}.validate()), TwinflowError);
  CHECK_THROWS_AS((SamplerConfig{5, 1.5f}.validate()), TwinflowError);
  CHECK_NOTHROW((SamplerConfig{1, 1.0f}.validate()));
}
