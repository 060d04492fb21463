#pragma once

#include <string>
#include <vector>

#include "twinflow/graph.hpp"
#include "twinflow/paramstore.hpp"

namespace twinflow {

// Token-segment bookkeeping for the canonical sequence order
// [shared | left | right]. Local indices within the two arm segments align
// by position; cross-arm visibility is defined on those local indices.
struct ModalitySegments {
  int n_shared = 0;
  int n_left = 0;
  int n_right = 0;

  int total() const { return n_shared + n_left + n_right; }
  void validate() const {
    require(n_shared >= 0 && n_left >= 0 && n_right >= 0, "segment counts must be >= 0");
  }
};

struct JointMask {
  ModalitySegments seg;
  Mask visible;
};

// Visibility rules:
//  (a) shared queries see all shared keys and no arm keys;
//  (b) arm queries see all shared keys;
//  (c) within an arm, key j visible to query i iff j <= i (local, inclusive);
//  (d) across arms, key j visible to query i iff j <= i (local, inclusive).
// The inclusive cross triangle is what makes a mirrored twin reproduce the
// single branch: the other arm's visible keys duplicate the own-arm set.
JointMask build_joint_mask(const ModalitySegments& seg);

// ---- attention re-weighting ------------------------------------------

// Scales the shared-key columns of one attention row by alpha and
// renormalizes. Exposed in double for algebraic identity checks; the tensor
// and graph paths below use the same formula.
void reweight_row_f64(double* row, const std::uint8_t* shared_col, int n, double alpha);

// Per-key shared flags for a segment layout.
std::vector<std::uint8_t> shared_key_flags(const ModalitySegments& seg);

// Plain-tensor form. alpha == 1 returns the input unchanged.
template <class Real>
TensorT<Real> reweight_attention(const TensorT<Real>& attn, const ModalitySegments& seg, Real alpha) {
  require(alpha > Real(0), "reweight alpha must be positive");
  if (alpha == Real(1)) return attn;
  require(attn.cols() == seg.total(), "reweight: attention width != token count");
  std::vector<std::uint8_t> flags = shared_key_flags(seg);
  TensorT<Real> out(attn.shape);
  std::vector<double> row(attn.cols());
  for (int i = 0; i < attn.rows(); ++i) {
    for (int j = 0; j < attn.cols(); ++j) row[j] = static_cast<double>(attn.at(i, j));
    reweight_row_f64(row.data(), flags.data(), attn.cols(), static_cast<double>(alpha));
    for (int j = 0; j < attn.cols(); ++j) out.at(i, j) = static_cast<Real>(row[j]);
  }
  return out;
}

// Graph form, written as the residual update A + (A' - A) so gradients flow
// through both the raw and renormalized weights.
template <class Real>
VarT<Real> reweight_attention_graph(VarT<Real> attn, const std::vector<std::uint8_t>& shared_col,
                                    Real alpha) {
  if (alpha == Real(1)) return attn;
  std::vector<Real> colscale(shared_col.size());
  for (std::size_t j = 0; j < shared_col.size(); ++j) colscale[j] = shared_col[j] ? alpha : Real(1);
  auto scaled = scale_cols(attn, std::move(colscale));
  auto renorm = div_colvec(scaled, row_sum(scaled));
  return add(attn, sub(renorm, attn));
}

// ---- block parameters --------------------------------------------------

// Parameter names for one transformer block (one arm's set).
struct BlockParamNames {
  std::string wq, wk, wv, wo;
  std::string ln_attn_g, ln_attn_b, ln_ffn_g, ln_ffn_b;
  std::string ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static BlockParamNames at(const std::string& prefix);
  std::vector<std::string> all() const;
};

// Registers one block's tensors: projections [E,E], norms [1,E],
// FFN [E,F] / [F,E].
template <class Real>
void register_block_params(ParamStoreT<Real>& ps, const BlockParamNames& n, int embed, int ffn_hidden,
                           const Rng& init_root) {
  auto u = [&](const std::string& name, std::vector<int> shape, int fan_in) {
    ps.add(name, TensorT<Real>::init_uniform(std::move(shape), init_root.split(name), fan_in));
  };
  u(n.wq, {embed, embed}, embed);
  u(n.wk, {embed, embed}, embed);
  u(n.wv, {embed, embed}, embed);
  u(n.wo, {embed, embed}, embed);
  ps.add(n.ln_attn_g, TensorT<Real>({1, embed}, Real(1)));
  ps.add(n.ln_attn_b, TensorT<Real>({1, embed}));
  ps.add(n.ln_ffn_g, TensorT<Real>({1, embed}, Real(1)));
  ps.add(n.ln_ffn_b, TensorT<Real>({1, embed}));
  u(n.ffn_w1, {embed, ffn_hidden}, embed);
  ps.add(n.ffn_b1, TensorT<Real>({1, ffn_hidden}));
  u(n.ffn_w2, {ffn_hidden, embed}, ffn_hidden);
  ps.add(n.ffn_b2, TensorT<Real>({1, embed}));
}

// Tape-bound handles for one block's tensors.
template <class Real>
struct BlockVars {
  VarT<Real> wq, wk, wv, wo;
  VarT<Real> ln_attn_g, ln_attn_b, ln_ffn_g, ln_ffn_b;
  VarT<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static BlockVars bind(TapeT<Real>& t, const ParamStoreT<Real>& ps, const BlockParamNames& n) {
    BlockVars v;
    v.wq = t.param(n.wq, ps.get(n.wq));
    v.wk = t.param(n.wk, ps.get(n.wk));
    v.wv = t.param(n.wv, ps.get(n.wv));
    v.wo = t.param(n.wo, ps.get(n.wo));
    v.ln_attn_g = t.param(n.ln_attn_g, ps.get(n.ln_attn_g));
    v.ln_attn_b = t.param(n.ln_attn_b, ps.get(n.ln_attn_b));
    v.ln_ffn_g = t.param(n.ln_ffn_g, ps.get(n.ln_ffn_g));
    v.ln_ffn_b = t.param(n.ln_ffn_b, ps.get(n.ln_ffn_b));
    v.ffn_w1 = t.param(n.ffn_w1, ps.get(n.ffn_w1));
    v.ffn_b1 = t.param(n.ffn_b1, ps.get(n.ffn_b1));
    v.ffn_w2 = t.param(n.ffn_w2, ps.get(n.ffn_w2));
    v.ffn_b2 = t.param(n.ffn_b2, ps.get(n.ffn_b2));
    return v;
  }
};

template <class Real>
struct RouterVars {
  VarT<Real> w;  // [E, 2]
  VarT<Real> b;  // [1, 2]
};

// ---- building blocks -----------------------------------------------------

template <class Real>
VarT<Real> ffn_forward(VarT<Real> x, const BlockVars<Real>& p) {
  auto h = tanh_act(add_rowvec(matmul(x, p.ffn_w1), p.ffn_b1));
  return add_rowvec(matmul(h, p.ffn_w2), p.ffn_b2);
}

// Output averaging of two components (lambda = 1/2); simulates a shared
// layer without touching the parameters.
template <class Real, class FnL, class FnR>
VarT<Real> merged_apply(VarT<Real> x, FnL&& comp_left, FnR&& comp_right) {
  return scale(add(comp_left(x), comp_right(x)), 0.5);
}

// Gate-routed mix of the two arm experts: g = softmax(router(x)),
// out = g0 * ffn_left(x) + g1 * ffn_right(x).
template <class Real>
VarT<Real> moe_ffn(VarT<Real> x, const BlockVars<Real>& ffn_left, const BlockVars<Real>& ffn_right,
                   const RouterVars<Real>& router) {
  auto logits = add_rowvec(matmul(x, router.w), router.b);
  Mask all(logits.val().rows(), logits.val().cols(), true);
  auto gates = masked_softmax(logits, all);
  auto out_l = mul_colvec(ffn_forward(x, ffn_left), slice_cols(gates, 0, 1));
  auto out_r = mul_colvec(ffn_forward(x, ffn_right), slice_cols(gates, 1, 2));
  return add(out_l, out_r);
}

// One token stream inside a joint block. p_b == nullptr: plain arm stream.
// p_b != nullptr: merged stream (output-averaged projections and norms);
// router selects gated FFN mixing, otherwise the FFN is output-averaged too.
template <class Real>
struct StreamSpec {
  VarT<Real> x;
  const BlockVars<Real>* p_a = nullptr;
  const BlockVars<Real>* p_b = nullptr;
  const RouterVars<Real>* router = nullptr;
};

struct JointBlockOptions {
  int heads = 4;
  bool reweight = false;
  double alpha = 2.0;
  double ln_eps = 1e-5;
};

// One transformer block over the concatenation of the streams:
// modality-specific Q/K/V, one global masked softmax (optionally re-weighted
// toward shared keys), modality-specific output path
//   h = x + LN(attn_out W_O),  y = h + LN(FFN(h)).
template <class Real>
std::vector<VarT<Real>> joint_block(const std::vector<StreamSpec<Real>>& streams, const Mask& mask,
                                    const std::vector<std::uint8_t>& shared_cols,
                                    const JointBlockOptions& opt) {
  require(!streams.empty(), "joint_block needs at least one stream");
  TapeT<Real>* tape = streams[0].x.tape;
  int embed = streams[0].x.val().cols();
  require(embed % opt.heads == 0, "embed dim must divide head count");
  int dk = embed / opt.heads;

  auto project = [&](const StreamSpec<Real>& s, VarT<Real> BlockVars<Real>::*w) {
    if (!s.p_b) return matmul(s.x, s.p_a->*w);
    return merged_apply(
        s.x, [&](VarT<Real> v) { return matmul(v, s.p_a->*w); },
        [&](VarT<Real> v) { return matmul(v, s.p_b->*w); });
  };

  std::vector<VarT<Real>> qs, ks, vs;
  int total = 0;
  for (const auto& s : streams) {
    require(s.x.val().cols() == embed, "stream embed dim mismatch");
    qs.push_back(project(s, &BlockVars<Real>::wq));
    ks.push_back(project(s, &BlockVars<Real>::wk));
    vs.push_back(project(s, &BlockVars<Real>::wv));
    total += s.x.val().rows();
  }
  require(mask.rows == total && mask.cols == total, "mask size != token count");
  require(static_cast<int>(shared_cols.size()) == total, "shared flags size != token count");

  VarT<Real> q = concat_rows(qs), k = concat_rows(ks), v = concat_rows(vs);
  double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<VarT<Real>> head_outs;
  for (int h = 0; h < opt.heads; ++h) {
    auto qh = slice_cols(q, h * dk, (h + 1) * dk);
    auto kh = slice_cols(k, h * dk, (h + 1) * dk);
    auto vh = slice_cols(v, h * dk, (h + 1) * dk);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    auto attn = masked_softmax(scores, mask);
    if (opt.reweight)
      attn = reweight_attention_graph(attn, shared_cols, static_cast<Real>(opt.alpha));
    head_outs.push_back(matmul(attn, vh));
  }
  VarT<Real> attn_out = concat_cols(head_outs);

  std::vector<VarT<Real>> outs;
  int row0 = 0;
  Real eps = static_cast<Real>(opt.ln_eps);
  for (const auto& s : streams) {
    int n = s.x.val().rows();
    if (n == 0) {
      outs.push_back(s.x);
      continue;
    }
    auto a = slice_rows(attn_out, row0, row0 + n);
    row0 += n;
    VarT<Real> o, normed, f, fn;
    if (!s.p_b) {
      o = matmul(a, s.p_a->wo);
      normed = layer_norm(o, s.p_a->ln_attn_g, s.p_a->ln_attn_b, eps);
      auto hdd = add(s.x, normed);
      f = ffn_forward(hdd, *s.p_a);
      fn = layer_norm(f, s.p_a->ln_ffn_g, s.p_a->ln_ffn_b, eps);
      outs.push_back(add(hdd, fn));
    } else {
      o = merged_apply(
          a, [&](VarT<Real> t) { return matmul(t, s.p_a->wo); },
          [&](VarT<Real> t) { return matmul(t, s.p_b->wo); });
      normed = merged_apply(
          o, [&](VarT<Real> t) { return layer_norm(t, s.p_a->ln_attn_g, s.p_a->ln_attn_b, eps); },
          [&](VarT<Real> t) { return layer_norm(t, s.p_b->ln_attn_g, s.p_b->ln_attn_b, eps); });
      auto hdd = add(s.x, normed);
      if (s.router) {
        f = moe_ffn(hdd, *s.p_a, *s.p_b, *s.router);
      } else {
        f = merged_apply(
            hdd, [&](VarT<Real> t) { return ffn_forward(t, *s.p_a); },
            [&](VarT<Real> t) { return ffn_forward(t, *s.p_b); });
      }
      fn = merged_apply(
          f, [&](VarT<Real> t) { return layer_norm(t, s.p_a->ln_ffn_g, s.p_a->ln_ffn_b, eps); },
          [&](VarT<Real> t) { return layer_norm(t, s.p_b->ln_ffn_g, s.p_b->ln_ffn_b, eps); });
      outs.push_back(add(hdd, fn));
    }
  }
  (void)tape;
  return outs;
}

// Spec-facing three-stream block: shared tokens through output-averaged
// components (gated FFN when a router is given), arm tokens through their
// own sets, one global softmax under `mask`.
template <class Real>
struct JointAttentionOut {
  VarT<Real> shared, left, right;
};

template <class Real>
JointAttentionOut<Real> joint_attention(VarT<Real> x_shared, VarT<Real> x_left, VarT<Real> x_right,
                                        const BlockVars<Real>& left, const BlockVars<Real>& right,
                                        const RouterVars<Real>* router, const JointMask& mask,
                                        const JointBlockOptions& opt) {
  require(x_shared.val().rows() == mask.seg.n_shared && x_left.val().rows() == mask.seg.n_left &&
              x_right.val().rows() == mask.seg.n_right,
          "joint_attention: mask built from different segments");
  std::vector<StreamSpec<Real>> streams = {
      {x_shared, &left, &right, router},
      {x_left, &left, nullptr, nullptr},
      {x_right, &right, nullptr, nullptr},
  };
  auto outs = joint_block(streams, mask.visible, shared_key_flags(mask.seg), opt);
  return {outs[0], outs[1], outs[2]};
}

}  // namespace twinflow
