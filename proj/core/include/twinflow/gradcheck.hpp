#pragma once

#include <functional>
#include <string>

#include "twinflow/graph.hpp"
#include "twinflow/paramstore.hpp"
#include "twinflow/rng.hpp"

namespace twinflow {

template <class Real>
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central-difference check of the tape's adjoints. `build` constructs the
// scalar loss graph from the store; the analytic gradient comes from one
// backward sweep and each sampled coordinate costs two forward evaluations.
// Coordinates are subsampled per tensor (deterministically, by name) because
// full enumeration is quadratic in parameter count; samples_per_tensor <= 0
// checks every coordinate. Run with Real = double: float storage cannot
// resolve differences of order h against a 1e-4 target.
template <class Real>
GradCheckResult<Real> grad_check(
    const std::function<VarT<Real>(TapeT<Real>&, ParamStoreT<Real>&)>& build,
    ParamStoreT<Real>& params, double h, int samples_per_tensor = 0,
    std::uint64_t seed = 0x5eedULL) {
  require(h >= 1e-4 && h <= 1e-2, "grad_check step h must be in [1e-4, 1e-2]");

  GradMap<Real> analytic;
  {
    TapeT<Real> tape(true);
    VarT<Real> loss = build(tape, params);
    require(loss.val().numel() == 1, "grad_check target must be scalar");
    require(loss.val().all_finite(), "grad_check: non-finite objective");
    tape.backward(loss);
    tape.export_grads(analytic);
  }

  auto eval = [&]() -> double {
    TapeT<Real> tape(false);
    VarT<Real> loss = build(tape, params);
    double v = static_cast<double>(loss.val().data[0]);
    require(std::isfinite(v), "grad_check: non-finite objective");
    return v;
  };

  GradCheckResult<Real> res;
  Rng root(seed);
  for (const auto& [name, tensor] : params.entries()) {
    std::size_t n = tensor->numel();
    if (n == 0) continue;
    std::vector<std::size_t> coords;
    if (samples_per_tensor <= 0 || static_cast<std::size_t>(samples_per_tensor) >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng r = root.split(name);
      for (int k = 0; k < samples_per_tensor; ++k)
        coords.push_back(static_cast<std::size_t>(r.uniform() * static_cast<double>(n)) % n);
    }
    const auto git = analytic.find(name);
    for (std::size_t c : coords) {
      Real saved = tensor->data[c];
      tensor->data[c] = static_cast<Real>(static_cast<double>(saved) + h);
      double fp = eval();
      tensor->data[c] = static_cast<Real>(static_cast<double>(saved) - h);
      double fm = eval();
      tensor->data[c] = saved;
      double fd = (fp - fm) / (2.0 * h);
      double an = git == analytic.end() ? 0.0 : static_cast<double>(git->second.data[c]);
      double rel = std::abs(an - fd) / (std::abs(an) + std::abs(fd) + 1e-8);
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
      }
    }
  }
  return res;
}

}  // namespace twinflow
