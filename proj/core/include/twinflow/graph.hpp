#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "twinflow/tensor.hpp"

namespace twinflow {

// Boolean visibility matrix (row = query, column = key).
struct Mask {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> visible;

  Mask() = default;
  Mask(int r, int c, bool fill = false)
      : rows(r), cols(c), visible(static_cast<std::size_t>(r) * c, fill ? 1 : 0) {}
  bool at(int i, int j) const { return visible[static_cast<std::size_t>(i) * cols + j] != 0; }
  void set(int i, int j, bool v) { visible[static_cast<std::size_t>(i) * cols + j] = v ? 1 : 0; }
};

// ---- raw row kernels, shared by the tape ops and their oracles ----------

// Max-subtracted softmax over the visible entries of one row; hidden entries
// come out exactly zero. Throws on a fully hidden row.
template <class Real>
void masked_softmax_row(const Real* scores, const std::uint8_t* vis, Real* out, int n) {
  double mx = 0.0;
  bool any = false;
  for (int j = 0; j < n; ++j) {
    if (!vis[j]) continue;
    double s = static_cast<double>(scores[j]);
    if (!any || s > mx) mx = s;
    any = true;
  }
  if (!any) fail("empty attention row");
  double z = 0.0;
  for (int j = 0; j < n; ++j) {
    if (vis[j]) z += std::exp(static_cast<double>(scores[j]) - mx);
  }
  for (int j = 0; j < n; ++j) {
    out[j] = vis[j] ? static_cast<Real>(std::exp(static_cast<double>(scores[j]) - mx) / z) : Real(0);
  }
}

template <class Real>
TensorT<Real> masked_softmax(const TensorT<Real>& scores, const Mask& mask) {
  require(scores.rows() == mask.rows && scores.cols() == mask.cols, "masked_softmax shape mismatch");
  TensorT<Real> out(scores.shape);
  for (int i = 0; i < scores.rows(); ++i)
    masked_softmax_row(scores.row(i), mask.visible.data() + static_cast<std::size_t>(i) * mask.cols,
                       out.row(i), scores.cols());
  return out;
}

// y = gain * (x - mean) / sqrt(var + eps) + bias, biased variance.
template <class Real>
void layer_norm_row(const Real* x, const Real* gain, const Real* bias, Real eps, Real* out, int n) {
  double mu = 0.0;
  for (int j = 0; j < n; ++j) mu += static_cast<double>(x[j]);
  mu /= n;
  double var = 0.0;
  for (int j = 0; j < n; ++j) {
    double d = static_cast<double>(x[j]) - mu;
    var += d * d;
  }
  var /= n;
  double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
  for (int j = 0; j < n; ++j)
    out[j] = static_cast<Real>(static_cast<double>(gain[j]) * (static_cast<double>(x[j]) - mu) * inv +
                               static_cast<double>(bias[j]));
}

template <class Real>
TensorT<Real> layer_norm(const TensorT<Real>& x, const TensorT<Real>& gain, const TensorT<Real>& bias,
                         Real eps) {
  require(static_cast<int>(gain.numel()) == x.cols() && static_cast<int>(bias.numel()) == x.cols(),
          "layer_norm affine dims mismatch");
  require(eps > Real(0), "layer_norm eps must be positive");
  TensorT<Real> out(x.shape);
  for (int i = 0; i < x.rows(); ++i)
    layer_norm_row(x.row(i), gain.data.data(), bias.data.data(), eps, out.row(i), x.cols());
  return out;
}

// ---- reverse-mode tape ---------------------------------------------------

template <class Real>
class TapeT;

template <class Real>
struct VarT {
  int id = -1;
  TapeT<Real>* tape = nullptr;

  const TensorT<Real>& val() const;
  int rows() const { return val().rows(); }
  int cols() const { return val().cols(); }
};

// Define-by-run tape. Nodes are appended in evaluation order, so a single
// reverse sweep is a valid topological order. A tape is confined to one
// thread; parameters referenced by leaves are read-only for its lifetime.
template <class Real>
class TapeT {
public:
  using Var = VarT<Real>;

  explicit TapeT(bool record_grad = true) : record_(record_grad) {}

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  const TensorT<Real>& value(int id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  TensorT<Real>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = TensorT<Real>(value(id).shape);
    return n.grad;
  }

  Var leaf(TensorT<Real> v) {
    int id = push(std::move(v), false);
    return Var{id, this};
  }
  // Borrowing leaf; `t` must outlive the tape.
  Var leaf_ref(const TensorT<Real>& t, bool requires_grad = false) {
    Node n;
    n.external = &t;
    n.needs_grad = requires_grad && record_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1, this};
  }
  // Named trainable leaf; one node per name per tape.
  Var param(const std::string& name, const TensorT<Real>& t) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return Var{it->second, this};
    Var v = leaf_ref(t, true);
    param_nodes_.emplace(name, v.id);
    param_order_.emplace_back(name, v.id);
    return v;
  }

  void backward(Var loss) {
    require(value(loss.id).numel() == 1, "backward expects a scalar");
    for (auto& n : nodes_)
      if (n.grad.numel()) std::fill(n.grad.data.begin(), n.grad.data.end(), Real(0));
    grad(loss.id).data[0] = Real(1);
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.needs_grad && n.backward && n.grad.numel()) n.backward(*this, n.grad, value(id));
    }
  }

  // acc[name] += d loss / d param, allocating zeros on first touch.
  void export_grads(std::map<std::string, TensorT<Real>>& acc) {
    for (const auto& [name, id] : param_order_) {
      Node& n = nodes_[id];
      if (n.grad.numel() == 0) continue;
      auto it = acc.find(name);
      if (it == acc.end()) it = acc.emplace(name, TensorT<Real>(value(id).shape)).first;
      for (std::size_t k = 0; k < n.grad.data.size(); ++k) it->second.data[k] += n.grad.data[k];
    }
  }

  // ---- op constructors ----

  Var make(TensorT<Real> value, std::initializer_list<Var> parents,
           std::function<void(TapeT&, const TensorT<Real>&, const TensorT<Real>&)> bwd, const char* what) {
    if (!value.all_finite()) fail(std::string("non-finite values from op ") + what);
    bool req = false;
    if (record_)
      for (const Var& p : parents) req = req || nodes_[p.id].needs_grad;
    int id = push(std::move(value), req);
    if (req) nodes_[id].backward = std::move(bwd);
    return Var{id, this};
  }

  Var make(TensorT<Real> value, const std::vector<Var>& parents,
           std::function<void(TapeT&, const TensorT<Real>&, const TensorT<Real>&)> bwd, const char* what) {
    if (!value.all_finite()) fail(std::string("non-finite values from op ") + what);
    bool req = false;
    if (record_)
      for (const Var& p : parents) req = req || nodes_[p.id].needs_grad;
    int id = push(std::move(value), req);
    if (req) nodes_[id].backward = std::move(bwd);
    return Var{id, this};
  }

private:
  struct Node {
    TensorT<Real> value;
    const TensorT<Real>* external = nullptr;
    TensorT<Real> grad;
    bool needs_grad = false;
    std::function<void(TapeT&, const TensorT<Real>&, const TensorT<Real>&)> backward;
  };

  int push(TensorT<Real> v, bool req) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = req;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> param_nodes_;
  std::vector<std::pair<std::string, int>> param_order_;
  bool record_ = true;
};

template <class Real>
const TensorT<Real>& VarT<Real>::val() const {
  return tape->value(id);
}

// ---- differentiable ops --------------------------------------------------

template <class Real>
VarT<Real> add(VarT<Real> a, VarT<Real> b) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& bv = b.val();
  require(av.same_shape(bv), "add shape mismatch");
  TensorT<Real> out(av.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
  return t->make(std::move(out), {a, b},
                 [a, b](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   auto& gb = tp.grad(b.id);
                   for (std::size_t i = 0; i < g.data.size(); ++i) {
                     ga.data[i] += g.data[i];
                     gb.data[i] += g.data[i];
                   }
                 },
                 "add");
}

template <class Real>
VarT<Real> sub(VarT<Real> a, VarT<Real> b) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& bv = b.val();
  require(av.same_shape(bv), "sub shape mismatch");
  TensorT<Real> out(av.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] - bv.data[i];
  return t->make(std::move(out), {a, b},
                 [a, b](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   auto& gb = tp.grad(b.id);
                   for (std::size_t i = 0; i < g.data.size(); ++i) {
                     ga.data[i] += g.data[i];
                     gb.data[i] -= g.data[i];
                   }
                 },
                 "sub");
}

template <class Real>
VarT<Real> mul(VarT<Real> a, VarT<Real> b) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& bv = b.val();
  require(av.same_shape(bv), "mul shape mismatch");
  TensorT<Real> out(av.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
  return t->make(std::move(out), {a, b},
                 [a, b](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   const auto& av2 = a.val();
                   const auto& bv2 = b.val();
                   auto& ga = tp.grad(a.id);
                   auto& gb = tp.grad(b.id);
                   for (std::size_t i = 0; i < g.data.size(); ++i) {
                     ga.data[i] += g.data[i] * bv2.data[i];
                     gb.data[i] += g.data[i] * av2.data[i];
                   }
                 },
                 "mul");
}

template <class Real>
VarT<Real> scale(VarT<Real> a, double c) {
  auto* t = a.tape;
  const auto& av = a.val();
  TensorT<Real> out(av.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<Real>(static_cast<double>(av.data[i]) * c);
  return t->make(std::move(out), {a},
                 [a, c](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   for (std::size_t i = 0; i < g.data.size(); ++i)
                     ga.data[i] += static_cast<Real>(static_cast<double>(g.data[i]) * c);
                 },
                 "scale");
}

// [N,D] + [1,D] row broadcast
template <class Real>
VarT<Real> add_rowvec(VarT<Real> a, VarT<Real> v) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& vv = v.val();
  require(static_cast<int>(vv.numel()) == av.cols(), "add_rowvec dims mismatch");
  TensorT<Real> out(av.shape);
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + vv.data[j];
  return t->make(std::move(out), {a, v},
                 [a, v](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   auto& gv = tp.grad(v.id);
                   for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
                   int cols = g.cols();
                   for (int i = 0; i < g.rows(); ++i)
                     for (int j = 0; j < cols; ++j) gv.data[j] += g.at(i, j);
                 },
                 "add_rowvec");
}

template <class Real>
VarT<Real> matmul(VarT<Real> a, VarT<Real> b) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& bv = b.val();
  require(av.cols() == bv.rows(), "matmul inner dims mismatch");
  TensorT<Real> out({av.rows(), bv.cols()});
  matmul_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows(), av.cols(), bv.cols());
  return t->make(std::move(out), {a, b},
                 [a, b](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   const auto& av2 = a.val();
                   const auto& bv2 = b.val();
                   auto& ga = tp.grad(a.id);
                   auto& gb = tp.grad(b.id);
                   // dA = g * B^T
                   TensorT<Real> da({av2.rows(), av2.cols()});
                   matmul_nt(g.data.data(), bv2.data.data(), da.data.data(), g.rows(), g.cols(),
                             av2.cols());
                   for (std::size_t i = 0; i < da.data.size(); ++i) ga.data[i] += da.data[i];
                   // dB += A^T * g
                   TensorT<Real> db({av2.cols(), g.cols()});
                   matmul_tn(av2.data.data(), g.data.data(), db.data.data(), av2.rows(), av2.cols(),
                             g.cols(), false);
                   for (std::size_t i = 0; i < db.data.size(); ++i) gb.data[i] += db.data[i];
                 },
                 "matmul");
}

template <class Real>
VarT<Real> tanh_act(VarT<Real> a) {
  auto* t = a.tape;
  const auto& av = a.val();
  TensorT<Real> out(av.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<Real>(std::tanh(static_cast<double>(av.data[i])));
  return t->make(std::move(out), {a},
                 [a](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>& y) {
                   auto& ga = tp.grad(a.id);
                   for (std::size_t i = 0; i < g.data.size(); ++i)
                     ga.data[i] += g.data[i] * (Real(1) - y.data[i] * y.data[i]);
                 },
                 "tanh");
}

template <class Real>
VarT<Real> row_sum(VarT<Real> a) {
  auto* t = a.tape;
  const auto& av = a.val();
  TensorT<Real> out({av.rows(), 1});
  for (int i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < av.cols(); ++j) s += static_cast<double>(av.at(i, j));
    out.data[i] = static_cast<Real>(s);
  }
  return t->make(std::move(out), {a},
                 [a](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   int cols = a.val().cols();
                   for (int i = 0; i < g.rows(); ++i)
                     for (int j = 0; j < cols; ++j) ga.at(i, j) += g.data[i];
                 },
                 "row_sum");
}

// y_ij = a_ij / d_i  with d of shape [N,1]
template <class Real>
VarT<Real> div_colvec(VarT<Real> a, VarT<Real> d) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& dv = d.val();
  require(dv.rows() == av.rows() && dv.cols() == 1, "div_colvec dims mismatch");
  TensorT<Real> out(av.shape);
  for (int i = 0; i < av.rows(); ++i) {
    double inv = 1.0 / static_cast<double>(dv.data[i]);
    for (int j = 0; j < av.cols(); ++j)
      out.at(i, j) = static_cast<Real>(static_cast<double>(av.at(i, j)) * inv);
  }
  return t->make(std::move(out), {a, d},
                 [a, d](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   const auto& av2 = a.val();
                   const auto& dv2 = d.val();
                   auto& ga = tp.grad(a.id);
                   auto& gd = tp.grad(d.id);
                   for (int i = 0; i < g.rows(); ++i) {
                     double inv = 1.0 / static_cast<double>(dv2.data[i]);
                     double acc = 0.0;
                     for (int j = 0; j < g.cols(); ++j) {
                       double gij = static_cast<double>(g.at(i, j));
                       ga.at(i, j) += static_cast<Real>(gij * inv);
                       acc += gij * static_cast<double>(av2.at(i, j));
                     }
                     gd.data[i] -= static_cast<Real>(acc * inv * inv);
                   }
                 },
                 "div_colvec");
}

// y_ij = a_ij * c_i  with c of shape [N,1]
template <class Real>
VarT<Real> mul_colvec(VarT<Real> a, VarT<Real> c) {
  auto* t = a.tape;
  const auto& av = a.val();
  const auto& cv = c.val();
  require(cv.rows() == av.rows() && cv.cols() == 1, "mul_colvec dims mismatch");
  TensorT<Real> out(av.shape);
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) * cv.data[i];
  return t->make(std::move(out), {a, c},
                 [a, c](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   const auto& av2 = a.val();
                   const auto& cv2 = c.val();
                   auto& ga = tp.grad(a.id);
                   auto& gc = tp.grad(c.id);
                   for (int i = 0; i < g.rows(); ++i) {
                     double acc = 0.0;
                     for (int j = 0; j < g.cols(); ++j) {
                       ga.at(i, j) += g.at(i, j) * cv2.data[i];
                       acc += static_cast<double>(g.at(i, j)) * static_cast<double>(av2.at(i, j));
                     }
                     gc.data[i] += static_cast<Real>(acc);
                   }
                 },
                 "mul_colvec");
}

// y_ij = a_ij * s_j for a constant per-column factor (no gradient into s).
template <class Real>
VarT<Real> scale_cols(VarT<Real> a, std::vector<Real> s) {
  auto* t = a.tape;
  const auto& av = a.val();
  require(static_cast<int>(s.size()) == av.cols(), "scale_cols dims mismatch");
  TensorT<Real> out(av.shape);
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) * s[j];
  return t->make(std::move(out), {a},
                 [a, s = std::move(s)](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   for (int i = 0; i < g.rows(); ++i)
                     for (int j = 0; j < g.cols(); ++j) ga.at(i, j) += g.at(i, j) * s[j];
                 },
                 "scale_cols");
}

template <class Real>
VarT<Real> concat_rows(const std::vector<VarT<Real>>& parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  auto* t = parts[0].tape;
  int cols = parts[0].val().cols();
  int rows = 0;
  for (const auto& p : parts) {
    require(p.val().cols() == cols, "concat_rows column mismatch");
    rows += p.val().rows();
  }
  TensorT<Real> out({rows, cols});
  int r = 0;
  for (const auto& p : parts) {
    const auto& pv = p.val();
    std::copy(pv.data.begin(), pv.data.end(), out.row(r));
    r += pv.rows();
  }
  std::vector<VarT<Real>> ps = parts;
  return t->make(std::move(out), parts,
                 [ps](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   int r0 = 0;
                   for (const auto& p : ps) {
                     auto& gp = tp.grad(p.id);
                     int n = p.val().rows() * p.val().cols();
                     const Real* src = g.data.data() + static_cast<std::size_t>(r0) * g.cols();
                     for (int k = 0; k < n; ++k) gp.data[k] += src[k];
                     r0 += p.val().rows();
                   }
                 },
                 "concat_rows");
}

template <class Real>
VarT<Real> slice_rows(VarT<Real> a, int r0, int r1) {
  auto* t = a.tape;
  const auto& av = a.val();
  require(0 <= r0 && r0 < r1 && r1 <= av.rows(), "slice_rows out of range");
  TensorT<Real> out({r1 - r0, av.cols()});
  std::copy(av.row(r0), av.row(r0) + out.numel(), out.data.begin());
  return t->make(std::move(out), {a},
                 [a, r0](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   Real* dst = ga.row(r0);
                   for (std::size_t k = 0; k < g.data.size(); ++k) dst[k] += g.data[k];
                 },
                 "slice_rows");
}

template <class Real>
VarT<Real> slice_cols(VarT<Real> a, int c0, int c1) {
  auto* t = a.tape;
  const auto& av = a.val();
  require(0 <= c0 && c0 < c1 && c1 <= av.cols(), "slice_cols out of range");
  TensorT<Real> out({av.rows(), c1 - c0});
  for (int i = 0; i < av.rows(); ++i)
    std::copy(av.row(i) + c0, av.row(i) + c1, out.row(i));
  return t->make(std::move(out), {a},
                 [a, c0](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   for (int i = 0; i < g.rows(); ++i)
                     for (int j = 0; j < g.cols(); ++j) ga.at(i, c0 + j) += g.at(i, j);
                 },
                 "slice_cols");
}

template <class Real>
VarT<Real> concat_cols(const std::vector<VarT<Real>>& parts) {
  require(!parts.empty(), "concat_cols needs at least one part");
  auto* t = parts[0].tape;
  int rows = parts[0].val().rows();
  int cols = 0;
  for (const auto& p : parts) {
    require(p.val().rows() == rows, "concat_cols row mismatch");
    cols += p.val().cols();
  }
  TensorT<Real> out({rows, cols});
  int c = 0;
  for (const auto& p : parts) {
    const auto& pv = p.val();
    for (int i = 0; i < rows; ++i) std::copy(pv.row(i), pv.row(i) + pv.cols(), out.row(i) + c);
    c += pv.cols();
  }
  std::vector<VarT<Real>> ps = parts;
  return t->make(std::move(out), parts,
                 [ps](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   int c0 = 0;
                   for (const auto& p : ps) {
                     auto& gp = tp.grad(p.id);
                     int pc = p.val().cols();
                     for (int i = 0; i < g.rows(); ++i)
                       for (int j = 0; j < pc; ++j) gp.at(i, j) += g.at(i, c0 + j);
                     c0 += pc;
                   }
                 },
                 "concat_cols");
}

template <class Real>
VarT<Real> transpose(VarT<Real> a) {
  auto* t = a.tape;
  const auto& av = a.val();
  TensorT<Real> out({av.cols(), av.rows()});
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out.at(j, i) = av.at(i, j);
  return t->make(std::move(out), {a},
                 [a](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   for (int i = 0; i < g.rows(); ++i)
                     for (int j = 0; j < g.cols(); ++j) ga.at(j, i) += g.at(i, j);
                 },
                 "transpose");
}

// Rows of an embedding table; gradients scatter-add back.
template <class Real>
VarT<Real> gather_rows(VarT<Real> table, std::vector<int> ids) {
  auto* t = table.tape;
  const auto& tv = table.val();
  TensorT<Real> out({static_cast<int>(ids.size()), tv.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows index out of range");
    std::copy(tv.row(ids[i]), tv.row(ids[i]) + tv.cols(), out.row(static_cast<int>(i)));
  }
  return t->make(std::move(out), {table},
                 [table, ids = std::move(ids)](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& gt = tp.grad(table.id);
                   for (std::size_t i = 0; i < ids.size(); ++i)
                     for (int j = 0; j < g.cols(); ++j)
                       gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
                 },
                 "gather_rows");
}

template <class Real>
VarT<Real> mean_all(VarT<Real> a) {
  auto* t = a.tape;
  const auto& av = a.val();
  require(av.numel() > 0, "mean_all on empty tensor");
  double s = 0.0;
  for (Real v : av.data) s += static_cast<double>(v);
  TensorT<Real> out({1, 1});
  out.data[0] = static_cast<Real>(s / static_cast<double>(av.numel()));
  double inv = 1.0 / static_cast<double>(av.numel());
  return t->make(std::move(out), {a},
                 [a, inv](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   auto& ga = tp.grad(a.id);
                   Real gv = static_cast<Real>(static_cast<double>(g.data[0]) * inv);
                   for (auto& x : ga.data) x += gv;
                 },
                 "mean_all");
}

template <class Real>
VarT<Real> masked_softmax(VarT<Real> scores, Mask mask) {
  auto* t = scores.tape;
  TensorT<Real> out = masked_softmax(scores.val(), mask);
  return t->make(std::move(out), {scores},
                 [scores, mask = std::move(mask)](TapeT<Real>& tp, const TensorT<Real>& g,
                                                  const TensorT<Real>& y) {
                   auto& gs = tp.grad(scores.id);
                   int cols = y.cols();
                   for (int i = 0; i < y.rows(); ++i) {
                     double dot = 0.0;
                     for (int j = 0; j < cols; ++j)
                       dot += static_cast<double>(g.at(i, j)) * static_cast<double>(y.at(i, j));
                     for (int j = 0; j < cols; ++j) {
                       if (!mask.at(i, j)) continue;
                       gs.at(i, j) += static_cast<Real>(static_cast<double>(y.at(i, j)) *
                                                        (static_cast<double>(g.at(i, j)) - dot));
                     }
                   }
                 },
                 "masked_softmax");
}

template <class Real>
VarT<Real> layer_norm(VarT<Real> x, VarT<Real> gain, VarT<Real> bias, Real eps) {
  auto* t = x.tape;
  TensorT<Real> out = layer_norm(x.val(), gain.val(), bias.val(), eps);
  return t->make(std::move(out), {x, gain, bias},
                 [x, gain, bias, eps](TapeT<Real>& tp, const TensorT<Real>& g, const TensorT<Real>&) {
                   const auto& xv = x.val();
                   const auto& gv = gain.val();
                   auto& gx = tp.grad(x.id);
                   auto& gg = tp.grad(gain.id);
                   auto& gb = tp.grad(bias.id);
                   int D = xv.cols();
                   for (int i = 0; i < xv.rows(); ++i) {
                     double mu = 0.0;
                     for (int j = 0; j < D; ++j) mu += static_cast<double>(xv.at(i, j));
                     mu /= D;
                     double var = 0.0;
                     for (int j = 0; j < D; ++j) {
                       double d = static_cast<double>(xv.at(i, j)) - mu;
                       var += d * d;
                     }
                     var /= D;
                     double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
                     // dxhat_j = g_j * gain_j; then the usual two-correction form
                     double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                     for (int j = 0; j < D; ++j) {
                       double xhat = (static_cast<double>(xv.at(i, j)) - mu) * inv;
                       double dxhat = static_cast<double>(g.at(i, j)) * static_cast<double>(gv.data[j]);
                       sum_dxhat += dxhat;
                       sum_dxhat_xhat += dxhat * xhat;
                       gg.data[j] += static_cast<Real>(static_cast<double>(g.at(i, j)) * xhat);
                       gb.data[j] += g.at(i, j);
                     }
                     for (int j = 0; j < D; ++j) {
                       double xhat = (static_cast<double>(xv.at(i, j)) - mu) * inv;
                       double dxhat = static_cast<double>(g.at(i, j)) * static_cast<double>(gv.data[j]);
                       gx.at(i, j) += static_cast<Real>(
                           inv * (dxhat - sum_dxhat / D - xhat * sum_dxhat_xhat / D));
                     }
                   }
                 },
                 "layer_norm");
}

}  // namespace twinflow
