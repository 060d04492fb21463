#pragma once

#include <string>
#include <vector>

#include "twinflow/flowmatch.hpp"
#include "twinflow/geometry.hpp"
#include "twinflow/twinattn.hpp"

namespace twinflow {

struct ModelConfig {
  int embed = 64;
  int heads = 4;
  int blocks = 4;
  int ffn_hidden = 128;
  int feat_dim = 16;
  int vocab = 32;
  int max_instr = 8;
  int chunk_len = 20;
  int head_blocks = 2;
  int tau_feat = 16;
  // 1: one pooled ego token; 5: one token per scene slot (3 objects, 2
  // targets), which lets attention bind instruction words to entities
  int ego_tokens = 5;
  float ln_eps = 1e-5f;
  float alpha = 2.0f;  // shared-key re-weighting factor
  int sample_steps = 10;

  void validate() const {
    require(embed > 0 && heads > 0 && embed % heads == 0, "bad embed/head config");
    require(blocks > 0 && head_blocks > 0 && ffn_hidden > 0, "bad depth config");
    require(feat_dim > 0 && vocab > 0 && max_instr > 0, "bad feature config");
    require(chunk_len >= 1 && tau_feat >= 2 && tau_feat % 2 == 0, "bad chunk/tau config");
    require(ego_tokens == 1 || ego_tokens == 5, "ego_tokens must be 1 or 5");
    if (ego_tokens == 5) require(feat_dim >= 15, "slot tokens need the 16-wide ego layout");
  }
};

// Per-dimension affine normalization, computed from the finetuning dataset
// and carried inside checkpoints. Applied to actions and proprioception.
struct NormStats {
  std::vector<float> action_mean, action_std;    // D_total
  std::vector<float> proprio_mean, proprio_std;  // 10, shared by both arms

  static NormStats identity(int action_dim) {
    NormStats n;
    n.action_mean.assign(action_dim, 0.f);
    n.action_std.assign(action_dim, 1.f);
    n.proprio_mean.assign(kPoseDim, 0.f);
    n.proprio_std.assign(kPoseDim, 1.f);
    return n;
  }

  std::vector<float> normalize_proprio(const std::vector<float>& d) const {
    require(d.size() == proprio_mean.size(), "proprio dim mismatch");
    std::vector<float> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      out[i] = (d[i] - proprio_mean[i]) / std::max(proprio_std[i], 1e-6f);
    return out;
  }

  Tensor normalize_chunk(const ActionChunk& c) const {
    require(static_cast<std::size_t>(c.D) == action_mean.size(), "action dim mismatch");
    Tensor t({c.T, c.D});
    for (int i = 0; i < c.T; ++i)
      for (int j = 0; j < c.D; ++j)
        t.at(i, j) = (c.at(i, j) - action_mean[j]) / std::max(action_std[j], 1e-6f);
    return t;
  }

  void denormalize_into(ActionChunk& c) const {
    for (int i = 0; i < c.T; ++i)
      for (int j = 0; j < c.D; ++j)
        c.at(i, j) = c.at(i, j) * std::max(action_std[j], 1e-6f) + action_mean[j];
  }
};

// Ablation switches of the twin architecture.
struct TwinFlags {
  bool joint_attention = true;
  bool moe = true;
  bool reweight = true;
};

struct ObservationSingle {
  std::vector<int> instruction;
  std::vector<float> ego_feat;
  std::vector<float> wrist_feat;
  std::vector<float> proprio;  // current 10-D EEF pose
  // vocabulary ids naming each scene slot (colors, sides); lets the encoder
  // tie slot tokens to the word embeddings they are referred to by
  std::vector<int> slot_words;
};

// Right arm block first, then left, matching the twin action layout.
struct ObservationTwin {
  std::vector<int> instruction;
  std::vector<float> ego_feat;
  std::vector<float> wrist_r, proprio_r;
  std::vector<float> wrist_l, proprio_l;
  std::vector<int> slot_words;
};

namespace names {
inline const std::string kEnc = "enc.";
inline const std::string kHead = "head.";
inline const std::string kBackbone = "bb.";
inline const std::string kProprio = "prop.";
inline const std::string kRouter = "moe.";

inline std::string backbone_block(const std::string& arm, int i) {
  // single: "bb.0." ; twin: "bb.R.0." / "bb.L.0."
  return arm.empty() ? kBackbone + std::to_string(i) + "." : kBackbone + arm + "." + std::to_string(i) + ".";
}
inline std::string head_block(int i) { return kHead + "blk" + std::to_string(i) + "."; }
}  // namespace names

template <class Real>
struct SinglePolicyT {
  ModelConfig cfg;
  NormStats norm = NormStats::identity(kPoseDim);
  ParamStoreT<Real> params;
};

template <class Real>
struct TwinPolicyT {
  ModelConfig cfg;
  NormStats norm = NormStats::identity(2 * kPoseDim);
  TwinFlags flags;
  ParamStoreT<Real> params;
};

using SinglePolicy = SinglePolicyT<float>;
using TwinPolicy = TwinPolicyT<float>;

// ---- construction ---------------------------------------------------------

template <class Real>
void register_encoder_and_head(ParamStoreT<Real>& ps, const ModelConfig& c, const Rng& init) {
  auto u = [&](const std::string& name, std::vector<int> shape, int fan_in) {
    ps.add(name, TensorT<Real>::init_uniform(std::move(shape), init.split(name), fan_in));
  };
  u("enc.instr_emb", {c.vocab, c.embed}, c.embed);
  u("enc.instr_pos", {c.max_instr, c.embed}, c.embed);
  if (c.ego_tokens == 1) {
    u("enc.ego_w", {c.feat_dim, c.embed}, c.feat_dim);
  } else {
    u("enc.ego_w", {3, c.embed}, 3);  // per-slot [present, x, y]
    u("enc.ego_slot", {c.ego_tokens, c.embed}, c.embed);
    u("enc.ego_match", {2, c.embed}, c.embed);  // slot named by the instruction or not
  }
  ps.add("enc.ego_b", TensorT<Real>({1, c.embed}));
  u("enc.wrist_w", {c.feat_dim, c.embed}, c.feat_dim);
  ps.add("enc.wrist_b", TensorT<Real>({1, c.embed}));
  u("enc.readout", {1, c.embed}, c.embed);

  u("head.w_in", {kPoseDim, c.embed}, kPoseDim);
  ps.add("head.w_in_b", TensorT<Real>({1, c.embed}));
  u("head.w_out", {c.embed, kPoseDim}, c.embed);
  ps.add("head.w_out_b", TensorT<Real>({1, kPoseDim}));
  u("head.tau_w", {c.tau_feat, c.embed}, c.tau_feat);
  ps.add("head.tau_b", TensorT<Real>({1, c.embed}));
  u("head.tau_w2", {c.embed, c.embed}, c.embed);
  ps.add("head.tau_b2", TensorT<Real>({1, c.embed}));
  u("head.pos", {c.chunk_len, c.embed}, c.embed);
  u("head.arm", {2, c.embed}, c.embed);
  for (int i = 0; i < c.head_blocks; ++i)
    register_block_params(ps, BlockParamNames::at(names::head_block(i)), c.embed, c.ffn_hidden, init);
}

template <class Real>
void register_proprio(ParamStoreT<Real>& ps, const ModelConfig& c, const std::string& arm,
                      const Rng& init) {
  std::string p = arm.empty() ? names::kProprio : names::kProprio + arm + ".";
  // the init stream is addressed by the single-policy name so both twin arms
  // start from the same values a fresh single would have
  ps.add(p + "w", TensorT<Real>::init_uniform({kPoseDim, c.embed}, init.split("prop.w"), kPoseDim));
  ps.add(p + "b", TensorT<Real>({1, c.embed}));
}

template <class Real>
SinglePolicyT<Real> make_single_policy(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SinglePolicyT<Real> pol;
  pol.cfg = cfg;
  pol.norm = NormStats::identity(kPoseDim);
  Rng init = Rng(seed).split("init");
  register_encoder_and_head(pol.params, cfg, init);
  register_proprio(pol.params, cfg, "", init);
  for (int i = 0; i < cfg.blocks; ++i)
    register_block_params(pol.params, BlockParamNames::at(names::backbone_block("", i)), cfg.embed,
                          cfg.ffn_hidden, init);
  return pol;
}

// Single -> twin: encoder and action head are aliased (the same tensors, not
// copies); the backbone and proprio encoder are copied per arm; routers are
// zero so the gates start at exactly (1/2, 1/2).
template <class Real>
TwinPolicyT<Real> duplicate(const SinglePolicyT<Real>& single) {
  TwinPolicyT<Real> twin;
  twin.cfg = single.cfg;
  twin.flags = TwinFlags{};
  twin.norm = NormStats::identity(2 * kPoseDim);
  for (int j = 0; j < kPoseDim; ++j) {
    twin.norm.action_mean[j] = twin.norm.action_mean[kPoseDim + j] = single.norm.action_mean[j];
    twin.norm.action_std[j] = twin.norm.action_std[kPoseDim + j] = single.norm.action_std[j];
  }
  twin.norm.proprio_mean = single.norm.proprio_mean;
  twin.norm.proprio_std = single.norm.proprio_std;

  for (const auto& [name, ptr] : single.params.entries()) {
    if (name.rfind(names::kEnc, 0) == 0 || name.rfind(names::kHead, 0) == 0) {
      twin.params.alias(name, ptr);
    }
  }
  for (const std::string arm : {"R", "L"}) {
    for (int i = 0; i < single.cfg.blocks; ++i) {
      BlockParamNames src = BlockParamNames::at(names::backbone_block("", i));
      BlockParamNames dst = BlockParamNames::at(names::backbone_block(arm, i));
      auto s = src.all();
      auto d = dst.all();
      for (std::size_t k = 0; k < s.size(); ++k) twin.params.add(d[k], single.params.get(s[k]));
    }
    twin.params.add(names::kProprio + arm + ".w", single.params.get("prop.w"));
    twin.params.add(names::kProprio + arm + ".b", single.params.get("prop.b"));
  }
  for (int i = 0; i < single.cfg.blocks; ++i) {
    twin.params.add(names::kRouter + std::to_string(i) + ".w", TensorT<Real>({single.cfg.embed, 2}));
    twin.params.add(names::kRouter + std::to_string(i) + ".b", TensorT<Real>({1, 2}));
  }
  return twin;
}

// ---- encoding --------------------------------------------------------------

template <class Real>
TensorT<Real> to_tensor(const std::vector<float>& v, int cols) {
  require(static_cast<int>(v.size()) == cols, "feature dim mismatch");
  TensorT<Real> t({1, cols});
  for (int i = 0; i < cols; ++i) t.data[i] = static_cast<Real>(v[i]);
  return t;
}

template <class Real>
VarT<Real> encode_feature(TapeT<Real>& t, const ParamStoreT<Real>& ps, const std::vector<float>& feat,
                          const std::string& w, const std::string& b, int dim) {
  auto x = t.leaf(to_tensor<Real>(feat, dim));
  return add_rowvec(matmul(x, t.param(w, ps.get(w))), t.param(b, ps.get(b)));
}

// [instr tokens, ego token(s)] -- the shared segment. Unknown ids are errors.
template <class Real>
VarT<Real> encode_shared(TapeT<Real>& t, const ParamStoreT<Real>& ps, const ModelConfig& cfg,
                         const std::vector<int>& instruction, const std::vector<float>& ego,
                         const std::vector<int>& slot_words) {
  require(static_cast<int>(instruction.size()) <= cfg.max_instr, "instruction too long");
  for (int id : instruction)
    require(id >= 0 && id < cfg.vocab, "unknown instruction id " + std::to_string(id));

  VarT<Real> ego_toks;
  if (cfg.ego_tokens == 1) {
    ego_toks = encode_feature(t, ps, ego, "enc.ego_w", "enc.ego_b", cfg.feat_dim);
  } else {
    // one token per scene slot so attention can address entities directly
    require(static_cast<int>(ego.size()) == cfg.feat_dim, "ego feature dim mismatch");
    TensorT<Real> slots({cfg.ego_tokens, 3});
    for (int s = 0; s < cfg.ego_tokens; ++s)
      for (int j = 0; j < 3; ++j) slots.at(s, j) = static_cast<Real>(ego[3 * s + j]);
    std::vector<int> ids(cfg.ego_tokens);
    for (int s = 0; s < cfg.ego_tokens; ++s) ids[s] = s;
    auto proj = add_rowvec(matmul(t.leaf(std::move(slots)), t.param("enc.ego_w", ps.get("enc.ego_w"))),
                           t.param("enc.ego_b", ps.get("enc.ego_b")));
    ego_toks = add(proj, gather_rows(t.param("enc.ego_slot", ps.get("enc.ego_slot")), ids));
    if (!slot_words.empty()) {
      require(static_cast<int>(slot_words.size()) == cfg.ego_tokens, "slot_words size mismatch");
      for (int id : slot_words) require(id >= 0 && id < cfg.vocab, "slot word outside vocabulary");
      // tie each slot to the word it is referred to by, and mark whether the
      // instruction mentions it (binding computed at the vocabulary level)
      ego_toks = add(ego_toks, gather_rows(t.param("enc.instr_emb", ps.get("enc.instr_emb")), slot_words));
      std::vector<int> match(cfg.ego_tokens, 0);
      for (int sidx = 0; sidx < cfg.ego_tokens; ++sidx)
        for (int word : instruction)
          if (word == slot_words[sidx]) match[sidx] = 1;
      ego_toks = add(ego_toks, gather_rows(t.param("enc.ego_match", ps.get("enc.ego_match")), match));
    }
  }
  if (instruction.empty()) return ego_toks;
  std::vector<int> pos_ids(instruction.size());
  for (std::size_t i = 0; i < instruction.size(); ++i) pos_ids[i] = static_cast<int>(i);
  auto words = gather_rows(t.param("enc.instr_emb", ps.get("enc.instr_emb")), instruction);
  auto pos = gather_rows(t.param("enc.instr_pos", ps.get("enc.instr_pos")), pos_ids);
  return concat_rows<Real>({add(words, pos), ego_toks});
}

// [wrist, proprio, readout] -- one arm segment; returns the segment and the
// proprio encoding (reused as head conditioning).
template <class Real>
struct ArmTokens {
  VarT<Real> tokens;
  VarT<Real> d_enc;
};

template <class Real>
ArmTokens<Real> encode_arm(TapeT<Real>& t, const ParamStoreT<Real>& ps, const ModelConfig& cfg,
                           const NormStats& norm, const std::vector<float>& wrist,
                           const std::vector<float>& proprio, const std::string& prop_prefix) {
  auto wrist_tok = encode_feature(t, ps, wrist, "enc.wrist_w", "enc.wrist_b", cfg.feat_dim);
  auto d = norm.normalize_proprio(proprio);
  auto d_tok = encode_feature(t, ps, d, prop_prefix + "w", prop_prefix + "b", kPoseDim);
  auto readout = t.param("enc.readout", ps.get("enc.readout"));
  return {concat_rows<Real>({wrist_tok, d_tok, readout}), d_tok};
}

inline constexpr int kArmTokens = 3;

template <class Real>
struct EncodedSingle {
  VarT<Real> shared, arm, d_enc;
  ModalitySegments seg;
};

template <class Real>
EncodedSingle<Real> encode_single(TapeT<Real>& t, const SinglePolicyT<Real>& pol,
                                  const ObservationSingle& obs) {
  EncodedSingle<Real> e;
  e.shared = encode_shared(t, pol.params, pol.cfg, obs.instruction, obs.ego_feat, obs.slot_words);
  auto arm = encode_arm(t, pol.params, pol.cfg, pol.norm, obs.wrist_feat, obs.proprio, names::kProprio);
  e.arm = arm.tokens;
  e.d_enc = arm.d_enc;
  e.seg = ModalitySegments{e.shared.val().rows(), kArmTokens, 0};
  return e;
}

// ---- forward passes -------------------------------------------------------

template <class Real>
struct SingleForwardOut {
  VarT<Real> h;      // readout hidden [1, E]
  VarT<Real> d_enc;  // proprio encoding [1, E]
  int tokens = 0;
};

template <class Real>
SingleForwardOut<Real> forward_single(TapeT<Real>& t, const SinglePolicyT<Real>& pol,
                                      const ObservationSingle& obs) {
  auto e = encode_single(t, pol, obs);
  JointMask mask = build_joint_mask(ModalitySegments{e.seg.n_shared, e.seg.n_left, 0});
  auto x = concat_rows<Real>({e.shared, e.arm});
  std::vector<std::uint8_t> no_shared(mask.visible.rows, 0);
  JointBlockOptions opt;
  opt.heads = pol.cfg.heads;
  opt.reweight = false;
  opt.ln_eps = pol.cfg.ln_eps;
  for (int i = 0; i < pol.cfg.blocks; ++i) {
    auto bv = BlockVars<Real>::bind(t, pol.params, BlockParamNames::at(names::backbone_block("", i)));
    x = joint_block<Real>({{x, &bv, nullptr, nullptr}}, mask.visible, no_shared, opt)[0];
  }
  int n = x.val().rows();
  return {slice_rows(x, n - 1, n), e.d_enc, n};
}

template <class Real>
struct TwinForwardOut {
  VarT<Real> h_r, h_l;
  VarT<Real> d_r, d_l;
  int tokens = 0;  // token count census for the ablation reports
};

// Visibility for the MoE-OFF layout [sharedL | left | sharedR | right]:
// each arm sees its own shared copy as a prefix; arm triangles (and cross-arm
// triangles when joint attention is on) follow the usual rules.
Mask build_duplicated_shared_mask(int n_shared, int n_arm, bool cross_arm);

template <class Real>
TwinForwardOut<Real> twin_forward(TapeT<Real>& t, const TwinPolicyT<Real>& pol,
                                  const ObservationTwin& obs) {
  const ModelConfig& cfg = pol.cfg;
  require(obs.proprio_r.size() == obs.proprio_l.size() && obs.wrist_r.size() == obs.wrist_l.size(),
          "twin observation arm dims differ");
  auto shared = encode_shared(t, pol.params, cfg, obs.instruction, obs.ego_feat, obs.slot_words);
  auto right = encode_arm(t, pol.params, cfg, pol.norm, obs.wrist_r, obs.proprio_r,
                          names::kProprio + "R.");
  auto left = encode_arm(t, pol.params, cfg, pol.norm, obs.wrist_l, obs.proprio_l,
                         names::kProprio + "L.");
  int s = shared.val().rows();

  JointBlockOptions opt;
  opt.heads = cfg.heads;
  opt.alpha = cfg.alpha;
  // re-weighting restores shared-key mass against cross-arm dilution; with
  // joint attention off there is no dilution and alpha stays 1
  opt.reweight = pol.flags.reweight && pol.flags.joint_attention;
  opt.ln_eps = cfg.ln_eps;

  VarT<Real> xs = shared, xl = left.tokens, xr = right.tokens;
  if (pol.flags.moe) {
    JointMask mask = build_joint_mask(ModalitySegments{s, kArmTokens, kArmTokens});
    if (!pol.flags.joint_attention) {
      for (int i = s; i < s + kArmTokens; ++i)
        for (int j = s + kArmTokens; j < s + 2 * kArmTokens; ++j) mask.visible.set(i, j, false);
      for (int i = s + kArmTokens; i < s + 2 * kArmTokens; ++i)
        for (int j = s; j < s + kArmTokens; ++j) mask.visible.set(i, j, false);
    }
    auto flags = shared_key_flags(mask.seg);
    for (int i = 0; i < cfg.blocks; ++i) {
      auto bl = BlockVars<Real>::bind(t, pol.params, BlockParamNames::at(names::backbone_block("L", i)));
      auto br = BlockVars<Real>::bind(t, pol.params, BlockParamNames::at(names::backbone_block("R", i)));
      RouterVars<Real> router{
          t.param(names::kRouter + std::to_string(i) + ".w", pol.params.get(names::kRouter + std::to_string(i) + ".w")),
          t.param(names::kRouter + std::to_string(i) + ".b", pol.params.get(names::kRouter + std::to_string(i) + ".b"))};
      auto outs = joint_block<Real>(
          {{xs, &bl, &br, &router}, {xl, &bl, nullptr, nullptr}, {xr, &br, nullptr, nullptr}},
          mask.visible, flags, opt);
      xs = outs[0];
      xl = outs[1];
      xr = outs[2];
    }
  } else {
    // shared tokens duplicated into both arm streams
    Mask mask = build_duplicated_shared_mask(s, kArmTokens, pol.flags.joint_attention);
    std::vector<std::uint8_t> flags(2 * (s + kArmTokens), 0);
    for (int j = 0; j < s; ++j) flags[j] = flags[s + kArmTokens + j] = 1;
    VarT<Real> xsl = xs, xsr = xs;
    for (int i = 0; i < cfg.blocks; ++i) {
      auto bl = BlockVars<Real>::bind(t, pol.params, BlockParamNames::at(names::backbone_block("L", i)));
      auto br = BlockVars<Real>::bind(t, pol.params, BlockParamNames::at(names::backbone_block("R", i)));
      auto outs = joint_block<Real>({{xsl, &bl, nullptr, nullptr},
                                     {xl, &bl, nullptr, nullptr},
                                     {xsr, &br, nullptr, nullptr},
                                     {xr, &br, nullptr, nullptr}},
                                    mask, flags, opt);
      xsl = outs[0];
      xl = outs[1];
      xsr = outs[2];
      xr = outs[3];
    }
  }
  TwinForwardOut<Real> out;
  out.h_r = slice_rows(xr, kArmTokens - 1, kArmTokens);
  out.h_l = slice_rows(xl, kArmTokens - 1, kArmTokens);
  out.d_r = right.d_enc;
  out.d_l = left.d_enc;
  out.tokens = pol.flags.moe ? s + 2 * kArmTokens : 2 * s + 2 * kArmTokens;
  return out;
}

// ---- action head (DiT-lite) ------------------------------------------------

// Geometric frequency ladder up to 1000: the reference flow varies on a
// (1 - tau) ~ 1e-3 scale near the top of the schedule.
inline std::vector<float> tau_embedding(float tau, int width) {
  std::vector<float> e(width);
  int half = width / 2;
  for (int k = 0; k < half; ++k) {
    double w = half > 1 ? std::pow(1000.0, static_cast<double>(k) / (half - 1)) : 1.0;
    e[2 * k] = static_cast<float>(std::sin(w * tau));
    e[2 * k + 1] = static_cast<float>(std::cos(w * tau));
  }
  return e;
}

// Small transformer over [conditioning tokens | chunk tokens]. Conditioning
// is additive context: tau embedding plus per-arm readout hiddens and proprio
// encodings; chunk rows carry position and arm embeddings. All tokens attend
// to everything.
template <class Real>
VarT<Real> action_head(TapeT<Real>& t, const ParamStoreT<Real>& ps, const ModelConfig& cfg,
                       const std::vector<VarT<Real>>& h_list, const std::vector<VarT<Real>>& d_list,
                       VarT<Real> a_tau, float tau) {
  int arms = static_cast<int>(h_list.size());
  require(arms >= 1 && arms <= 2 && d_list.size() == h_list.size(), "head expects 1 or 2 arms");
  int T = a_tau.val().rows();
  int D = a_tau.val().cols();
  require(D == arms * kPoseDim, "chunk width != arms * 10");
  require(T >= 1 && T <= cfg.chunk_len, "chunk length outside head positions");
  require(tau >= 0.f && tau <= 1.f, "tau outside [0,1]");

  auto tau_raw = add_rowvec(
      matmul(t.leaf(to_tensor<Real>(tau_embedding(tau, cfg.tau_feat), cfg.tau_feat)),
             t.param("head.tau_w", ps.get("head.tau_w"))),
      t.param("head.tau_b", ps.get("head.tau_b")));
  auto tau_tok = add_rowvec(matmul(tanh_act(tau_raw), t.param("head.tau_w2", ps.get("head.tau_w2"))),
                            t.param("head.tau_b2", ps.get("head.tau_b2")));

  auto arm_emb = t.param("head.arm", ps.get("head.arm"));
  auto pos_emb = t.param("head.pos", ps.get("head.pos"));
  std::vector<int> pos_ids(T);
  for (int i = 0; i < T; ++i) pos_ids[i] = i;

  std::vector<VarT<Real>> seq = {tau_tok};
  for (int a = 0; a < arms; ++a) {
    auto arm_row = slice_rows(arm_emb, a, a + 1);
    seq.push_back(add(h_list[a], arm_row));
    seq.push_back(add(d_list[a], arm_row));
  }
  const int cond = 1 + 2 * arms;

  auto w_in = t.param("head.w_in", ps.get("head.w_in"));
  auto w_in_b = t.param("head.w_in_b", ps.get("head.w_in_b"));
  for (int a = 0; a < arms; ++a) {
    auto block = arms == 1 ? a_tau : slice_cols(a_tau, a * kPoseDim, (a + 1) * kPoseDim);
    auto tok = add_rowvec(matmul(block, w_in), w_in_b);
    tok = add(tok, gather_rows(pos_emb, pos_ids));
    // every chunk token carries the timestep and its arm's embedding
    tok = add_rowvec(tok, tau_tok);
    auto arm_row = slice_rows(arm_emb, a, a + 1);
    TensorT<Real> ones({T, 1}, Real(1));
    tok = add(tok, matmul(t.leaf(std::move(ones)), arm_row));
    seq.push_back(tok);
  }

  auto x = concat_rows(seq);
  int total = x.val().rows();
  Mask full(total, total, true);
  std::vector<std::uint8_t> no_shared(total, 0);
  JointBlockOptions opt;
  opt.heads = cfg.heads;
  opt.reweight = false;
  opt.ln_eps = cfg.ln_eps;
  for (int i = 0; i < cfg.head_blocks; ++i) {
    auto bv = BlockVars<Real>::bind(t, ps, BlockParamNames::at(names::head_block(i)));
    x = joint_block<Real>({{x, &bv, nullptr, nullptr}}, full, no_shared, opt)[0];
  }

  auto w_out = t.param("head.w_out", ps.get("head.w_out"));
  auto w_out_b = t.param("head.w_out_b", ps.get("head.w_out_b"));
  std::vector<VarT<Real>> flows;
  for (int a = 0; a < arms; ++a) {
    auto rows = slice_rows(x, cond + a * T, cond + (a + 1) * T);
    flows.push_back(add_rowvec(matmul(rows, w_out), w_out_b));
  }
  return arms == 1 ? flows[0] : concat_cols(flows);
}

// ---- loss graphs and sampling ----------------------------------------------

template <class Real>
VarT<Real> single_loss_graph(TapeT<Real>& t, const SinglePolicyT<Real>& pol,
                             const ObservationSingle& obs, const TensorT<Real>& a_tau, float tau,
                             const TensorT<Real>& u) {
  auto fwd = forward_single(t, pol, obs);
  auto flow = action_head(t, pol.params, pol.cfg, {fwd.h}, {fwd.d_enc}, t.leaf_ref(a_tau), tau);
  return fm_loss_graph(flow, t.leaf_ref(u));
}

template <class Real>
VarT<Real> twin_loss_graph(TapeT<Real>& t, const TwinPolicyT<Real>& pol, const ObservationTwin& obs,
                           const TensorT<Real>& a_tau, float tau, const TensorT<Real>& u) {
  auto fwd = twin_forward(t, pol, obs);
  auto flow = action_head(t, pol.params, pol.cfg, {fwd.h_r, fwd.h_l}, {fwd.d_r, fwd.d_l},
                          t.leaf_ref(a_tau), tau);
  return fm_loss_graph(flow, t.leaf_ref(u));
}

// Euler sampling in normalized action space; the returned chunk is
// denormalized. The backbone runs once per prediction; only the head runs
// per integration step.
ActionChunk predict_chunk(const SinglePolicy& pol, const ObservationSingle& obs,
                          const SamplerConfig& cfg, Rng& rng);
ActionChunk predict_chunk(const TwinPolicy& pol, const ObservationTwin& obs,
                          const SamplerConfig& cfg, Rng& rng);

}  // namespace twinflow
