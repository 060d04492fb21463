#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "twinflow/common.hpp"
#include "twinflow/rng.hpp"

namespace twinflow {

// Dense row-major tensor. The pipeline runs the float instantiation (values
// are stored in 32 bits everywhere, checkpoints included); the double
// instantiation backs finite-difference oracles where float storage cannot
// resolve the tolerances. Reductions accumulate in double in both cases.
template <class Real>
struct TensorT {
  std::vector<int> shape;
  std::vector<Real> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s, Real fill = Real(0)) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      require(d >= 0, "negative tensor dim");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Real& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  Real at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }
  Real* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols(); }
  const Real* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols(); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  static TensorT from(std::vector<int> s, std::initializer_list<double> vals) {
    TensorT t(std::move(s));
    require(t.numel() == vals.size(), "init list size mismatch");
    std::size_t i = 0;
    for (double v : vals) t.data[i++] = static_cast<Real>(v);
    return t;
  }

  static TensorT randn(std::vector<int> s, Rng& rng) {
    TensorT t(std::move(s));
    for (auto& v : t.data) v = static_cast<Real>(rng.normal());
    return t;
  }

  // Fan-in-scaled uniform init; the stream is addressed by parameter name so
  // checkpoints reproduce regardless of registration order.
  static TensorT init_uniform(std::vector<int> s, const Rng& stream, int fan_in) {
    TensorT t(std::move(s));
    Rng r = stream;  // copy; stream owner stays untouched
    double b = 1.0 / std::sqrt(static_cast<double>(fan_in < 1 ? 1 : fan_in));
    for (auto& v : t.data) v = static_cast<Real>(r.uniform(-b, b));
    return t;
  }
};

using Tensor = TensorT<float>;

template <class Real>
double linf_diff(const TensorT<Real>& a, const TensorT<Real>& b) {
  require(a.same_shape(b), "linf_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

// ---- raw kernels (no autodiff) ----------------------------------------

// C[M,N] = A[M,K] * B[K,N]; per-row double accumulators keep results
// deterministic and independent of vector width.
template <class Real>
void matmul_nn(const Real* a, const Real* b, Real* c, int M, int K, int N) {
  std::vector<double> acc(static_cast<std::size_t>(N));
  for (int i = 0; i < M; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const Real* arow = a + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) {
      double av = static_cast<double>(arow[k]);
      const Real* brow = b + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    Real* crow = c + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) crow[j] = static_cast<Real>(acc[j]);
  }
}

// C[M,N] = A[M,K] * B[N,K]^T
template <class Real>
void matmul_nt(const Real* a, const Real* b, Real* c, int M, int K, int N) {
  for (int i = 0; i < M; ++i) {
    const Real* arow = a + static_cast<std::size_t>(i) * K;
    Real* crow = c + static_cast<std::size_t>(i) * N;
    for (int j = 0; j < N; ++j) {
      const Real* brow = b + static_cast<std::size_t>(j) * K;
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
      crow[j] = static_cast<Real>(s);
    }
  }
}

// C[K,N] += or = A[M,K]^T * B[M,N]
template <class Real>
void matmul_tn(const Real* a, const Real* b, Real* c, int M, int K, int N, bool accumulate) {
  std::vector<double> acc(static_cast<std::size_t>(K) * N, 0.0);
  for (int m = 0; m < M; ++m) {
    const Real* arow = a + static_cast<std::size_t>(m) * K;
    const Real* brow = b + static_cast<std::size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      double av = static_cast<double>(arow[k]);
      double* accrow = acc.data() + static_cast<std::size_t>(k) * N;
      for (int j = 0; j < N; ++j) accrow[j] += av * static_cast<double>(brow[j]);
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i)
    c[i] = accumulate ? static_cast<Real>(static_cast<double>(c[i]) + acc[i]) : static_cast<Real>(acc[i]);
}

}  // namespace twinflow
