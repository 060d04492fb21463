#pragma once

#include <string>
#include <vector>

#include "twinflow/policy.hpp"
#include "twinflow/sim.hpp"

namespace twinflow {

// One stored trajectory: observations at the recording frequency, actions
// already resampled to the canonical control rate.
struct StoredEpisode {
  std::string instruction;
  std::vector<int> instr_ids;
  Tensor obs;      // [n_obs, obs_dim] at env_hz
  Tensor actions;  // [n_act, act_dim] at act_hz
  float env_hz = 10.f;
  float act_hz = kCanonicalHz;
  bool success = false;
  std::uint64_t seed = 0;
};

struct DatasetMeta {
  std::string task;
  int arms = 1;
  int obs_dim = 0;
  int act_dim = 0;
  float frequency = kCanonicalHz;  // action rate after frequency matching
  float env_hz = 10.f;
  int episodes = 0;
  double expert_success = 0.0;
  NormStats stats = NormStats::identity(kPoseDim);
  std::string config_hash;
};

class Dataset {
public:
  DatasetMeta meta;
  std::vector<StoredEpisode> episodes;

  static StoredEpisode from_episode(const Episode& ep, float target_hz);

  // per-dimension action and (pooled over arms) proprio statistics
  void compute_stats();

  void save(const std::string& dir) const;
  static Dataset load(const std::string& dir);

  // Uniform window: an episode, then an observation index inside it. The
  // action chunk starts at the matching high-rate index and pads by
  // repeating the final action.
  struct Window {
    const StoredEpisode* ep = nullptr;
    int start_obs = 0;
  };
  Window sample_window(Rng& rng) const;
  ActionChunk window_chunk(const Window& w, int chunk_len) const;
  std::vector<float> window_obs(const Window& w) const;

  int action_stride() const;  // act samples per obs step
};

// Training tuple with the noising path already applied in normalized space.
struct PreparedSample {
  bool twin = false;
  ObservationSingle os;
  ObservationTwin ot;
  Tensor a_tau;
  float tau = 0;
  Tensor u;
};

std::vector<PreparedSample> prepare_batch(const Dataset& data, const NormStats& norm, int batch,
                                          int chunk_len, Rng& rng);

// Expert demonstrations, frequency-matched to target_hz. Unsolvable seeds
// are skipped and counted; extra seeds are drawn until `episodes` succeed.
Dataset generate_dataset(const TaskSpec& task, int episodes, std::uint64_t seed, float target_hz,
                         int* failures = nullptr);

}  // namespace twinflow
