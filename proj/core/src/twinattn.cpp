#include "twinflow/twinattn.hpp"

namespace twinflow {

JointMask build_joint_mask(const ModalitySegments& seg) {
  seg.validate();
  int s = seg.n_shared, l = seg.n_left, r = seg.n_right;
  int n = seg.total();
  JointMask jm;
  jm.seg = seg;
  jm.visible = Mask(n, n, false);

  // shared queries: rule (a)
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) jm.visible.set(i, j, true);

  auto arm_rows = [&](int q0, int nq, int own0, int other0, int nother) {
    for (int li = 0; li < nq; ++li) {
      int i = q0 + li;
      for (int j = 0; j < s; ++j) jm.visible.set(i, j, true);  // rule (b)
      for (int lj = 0; lj <= li; ++lj) jm.visible.set(i, own0 + lj, true);  // rule (c)
      for (int lj = 0; lj <= li && lj < nother; ++lj)
        jm.visible.set(i, other0 + lj, true);  // rule (d)
    }
  };
  arm_rows(s, l, s, s + l, r);
  arm_rows(s + l, r, s + l, s, l);
  return jm;
}

std::vector<std::uint8_t> shared_key_flags(const ModalitySegments& seg) {
  std::vector<std::uint8_t> flags(seg.total(), 0);
  for (int j = 0; j < seg.n_shared; ++j) flags[j] = 1;
  return flags;
}

void reweight_row_f64(double* row, const std::uint8_t* shared_col, int n, double alpha) {
  double z = 0;
  for (int j = 0; j < n; ++j) z += row[j] * (shared_col[j] ? alpha : 1.0);
  if (z <= 0) fail("reweight: nonpositive row mass");
  for (int j = 0; j < n; ++j) row[j] = row[j] * (shared_col[j] ? alpha : 1.0) / z;
}

BlockParamNames BlockParamNames::at(const std::string& prefix) {
  BlockParamNames n;
  n.wq = prefix + "wq";
  n.wk = prefix + "wk";
  n.wv = prefix + "wv";
  n.wo = prefix + "wo";
  n.ln_attn_g = prefix + "ln_attn_g";
  n.ln_attn_b = prefix + "ln_attn_b";
  n.ln_ffn_g = prefix + "ln_ffn_g";
  n.ln_ffn_b = prefix + "ln_ffn_b";
  n.ffn_w1 = prefix + "ffn_w1";
  n.ffn_b1 = prefix + "ffn_b1";
  n.ffn_w2 = prefix + "ffn_w2";
  n.ffn_b2 = prefix + "ffn_b2";
  return n;
}

std::vector<std::string> BlockParamNames::all() const {
  return {wq, wk, wv, wo, ln_attn_g, ln_attn_b, ln_ffn_g, ln_ffn_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2};
}

}  // namespace twinflow
