#include "twinflow/policy.hpp"

namespace twinflow {

Mask build_duplicated_shared_mask(int n_shared, int n_arm, bool cross_arm) {
  int half = n_shared + n_arm;
  Mask m(2 * half, 2 * half, false);
  for (int side = 0; side < 2; ++side) {
    int s0 = side * half;        // own shared copy
    int a0 = s0 + n_shared;      // own arm tokens
    int oa0 = (1 - side) * half + n_shared;  // other arm tokens
    for (int i = 0; i < n_shared; ++i)
      for (int j = 0; j < n_shared; ++j) m.set(s0 + i, s0 + j, true);
    for (int li = 0; li < n_arm; ++li) {
      int q = a0 + li;
      for (int j = 0; j < n_shared; ++j) m.set(q, s0 + j, true);
      for (int lj = 0; lj <= li; ++lj) m.set(q, a0 + lj, true);
      if (cross_arm)
        for (int lj = 0; lj <= li; ++lj) m.set(q, oa0 + lj, true);
    }
  }
  return m;
}

namespace {

template <class Policy, class Obs, class HeadFn>
ActionChunk sample_with_head(const Policy& pol, const Obs& obs, const SamplerConfig& cfg, Rng& rng,
                             int arms, HeadFn&& make_head_inputs) {
  cfg.validate();
  int T = pol.cfg.chunk_len;
  int D = arms * kPoseDim;

  // backbone once; h and d do not depend on the integration state
  TapeT<float> tape(false);
  std::vector<Tensor> cond = make_head_inputs(tape);

  FlowField field = [&](const Tensor& a_tau, float tau) {
    TapeT<float> ht(false);
    std::vector<VarT<float>> h_list, d_list;
    for (int a = 0; a < arms; ++a) {
      h_list.push_back(ht.leaf_ref(cond[2 * a]));
      d_list.push_back(ht.leaf_ref(cond[2 * a + 1]));
    }
    auto flow = action_head(ht, pol.params, pol.cfg, h_list, d_list, ht.leaf_ref(a_tau), tau);
    return flow.val();
  };

  ActionChunk chunk = euler_sample(field, T, D, cfg, rng, kCanonicalHz);
  pol.norm.denormalize_into(chunk);
  return chunk;
}

}  // namespace

ActionChunk predict_chunk(const SinglePolicy& pol, const ObservationSingle& obs,
                          const SamplerConfig& cfg, Rng& rng) {
  return sample_with_head(pol, obs, cfg, rng, 1, [&](TapeT<float>& tape) {
    auto fwd = forward_single(tape, pol, obs);
    return std::vector<Tensor>{fwd.h.val(), fwd.d_enc.val()};
  });
}

ActionChunk predict_chunk(const TwinPolicy& pol, const ObservationTwin& obs,
                          const SamplerConfig& cfg, Rng& rng) {
  return sample_with_head(pol, obs, cfg, rng, 2, [&](TapeT<float>& tape) {
    auto fwd = twin_forward(tape, pol, obs);
    return std::vector<Tensor>{fwd.h_r.val(), fwd.d_r.val(), fwd.h_l.val(), fwd.d_l.val()};
  });
}

}  // namespace twinflow
