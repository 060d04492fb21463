#pragma once

#include <string>

#include "twinflow/policy.hpp"

namespace twinflow {

// Checkpoint = <prefix>.json manifest + <prefix>.bin little-endian float32
// blob. Tensors aliased between names are stored once; their manifest
// entries point at the same offset.
void save_checkpoint(const SinglePolicy& pol, const std::string& prefix);
void save_checkpoint(const TwinPolicy& pol, const std::string& prefix);

struct LoadedPolicy {
  std::string kind;  // "single" | "twin"
  SinglePolicy single;
  TwinPolicy twin;

  bool is_twin() const { return kind == "twin"; }
};

LoadedPolicy load_checkpoint(const std::string& prefix);
bool checkpoint_exists(const std::string& prefix);
std::string checkpoint_hash(const std::string& prefix);

// Generic store-level writer used by both overloads; exposed for tests.
void save_store(const ParamStore& ps, const std::string& prefix, const std::string& kind,
                const ModelConfig& cfg, const NormStats& norm, const TwinFlags* flags);

}  // namespace twinflow
