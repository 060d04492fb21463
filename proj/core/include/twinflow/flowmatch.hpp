#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "twinflow/geometry.hpp"
#include "twinflow/graph.hpp"
#include "twinflow/rng.hpp"
#include "twinflow/tensor.hpp"

namespace twinflow {

// One training tuple of the linear noising path:
//   a_tau = tau * A + (1 - tau) * eps,   u = eps - A  (the regression target).
struct FlowSample {
  ActionChunk A;
  Tensor eps;
  float tau = 0;
  Tensor a_tau;
  Tensor u;

  // The defining identities hold bit-exactly because construction stores the
  // same float expressions this recomputes.
  bool check() const {
    for (std::size_t i = 0; i < eps.data.size(); ++i) {
      float a = A.data[i];
      float at = tau * a + (1.0f - tau) * eps.data[i];
      if (at != a_tau.data[i]) return false;
      if (eps.data[i] - a != u.data[i]) return false;
    }
    return true;
  }
};

struct SamplerConfig {
  int n_steps = 10;
  float tau_max = 0.999f;

  void validate() const {
    require(n_steps >= 1, "sampler needs n_steps >= 1");
    require(tau_max > 0.f && tau_max <= 1.f, "sampler tau_max must be in (0,1]");
  }
};

// tau = 0.999 * (1 - X), X ~ Beta(1.5, 1) by inverse CDF (F(x) = x^1.5).
inline float tau_from_uniform(double u) {
  double x = std::pow(u, 2.0 / 3.0);
  return static_cast<float>(0.999 * (1.0 - x));
}

inline float sample_tau(Rng& rng) { return tau_from_uniform(rng.uniform()); }

// CDF of the sampled tau, for distribution tests: P(tau <= t).
inline double tau_cdf(double t) {
  if (t <= 0) return 0;
  if (t >= 0.999) return 1;
  double x = 1.0 - t / 0.999;  // tau <= t  <=>  X >= x
  return 1.0 - std::pow(x, 1.5);
}

inline FlowSample make_flow_sample(const ActionChunk& a, Rng& rng, float forced_tau = -1.f) {
  require(static_cast<int>(a.data.size()) == a.T * a.D, "chunk storage mismatch");
  FlowSample s;
  s.A = a;
  s.tau = forced_tau >= 0.f ? forced_tau : sample_tau(rng);
  s.eps = Tensor({a.T, a.D});
  for (auto& v : s.eps.data) v = static_cast<float>(rng.normal());
  s.a_tau = Tensor({a.T, a.D});
  s.u = Tensor({a.T, a.D});
  for (std::size_t i = 0; i < s.eps.data.size(); ++i) {
    s.a_tau.data[i] = s.tau * a.data[i] + (1.0f - s.tau) * s.eps.data[i];
    s.u.data[i] = s.eps.data[i] - a.data[i];
  }
  require(s.a_tau.all_finite(), "non-finite flow sample");
  return s;
}

// Mean over all elements of the squared difference.
template <class Real>
double fm_loss(const TensorT<Real>& v_pred, const TensorT<Real>& u) {
  require(v_pred.same_shape(u), "fm_loss shape mismatch");
  require(v_pred.numel() > 0, "fm_loss on empty tensors");
  double acc = 0;
  for (std::size_t i = 0; i < u.data.size(); ++i) {
    double d = static_cast<double>(v_pred.data[i]) - static_cast<double>(u.data[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(u.numel());
}

template <class Real>
VarT<Real> fm_loss_graph(VarT<Real> v_pred, VarT<Real> u) {
  auto d = sub(v_pred, u);
  return mean_all(mul(d, d));
}

// Forward Euler over tau in {0, d, ..., tau_max - d}, d = tau_max / n.
// With the u = eps - A convention the data-directed step subtracts the field.
using FlowField = std::function<Tensor(const Tensor& a_tau, float tau)>;

inline ActionChunk euler_sample(const FlowField& v_field, int T, int D, const SamplerConfig& cfg,
                                Rng& rng, float frequency = kCanonicalHz) {
  cfg.validate();
  ActionChunk out(T, D, frequency);
  Tensor a({T, D});
  for (auto& v : a.data) v = static_cast<float>(rng.normal());
  float delta = cfg.tau_max / static_cast<float>(cfg.n_steps);
  for (int k = 0; k < cfg.n_steps; ++k) {
    float tau = delta * static_cast<float>(k);
    Tensor v = v_field(a, tau);
    require(v.same_shape(a), "flow field returned wrong shape");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] -= delta * v.data[i];
    if (!a.all_finite()) fail("non-finite sampler state at step " + std::to_string(k));
  }
  out.data = std::move(a.data);
  return out;
}

}  // namespace twinflow
