#pragma once

#include <optional>
#include <string>

#include "twinflow/common.hpp"

namespace twinflow {

// A required upstream artifact (dataset, checkpoint) is absent; the CLI maps
// this to exit code 3 and the message names the stage to run first.
class MissingArtifactError : public TwinflowError {
public:
  explicit MissingArtifactError(const std::string& msg) : TwinflowError(msg) {}
};

namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissing = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

// Each command takes the raw JSON config text (schema-validated, unknown
// keys rejected) and returns a process exit code. All printing goes to
// stdout/stderr.
int gen_data(const std::string& config_json, const Overrides& ov = {});
int pretrain_single(const std::string& config_json, const Overrides& ov = {});
int duplicate_single(const std::string& config_json, const Overrides& ov = {});
int finetune_twin(const std::string& config_json, const Overrides& ov = {});
int eval_policy(const std::string& config_json, const Overrides& ov = {});
int ablate(const std::string& config_json, const Overrides& ov = {});
int data_sweep(const std::string& config_json, const Overrides& ov = {});

// Dispatch by subcommand name; reads the config file.
int run_command(const std::string& command, const std::string& config_path, const Overrides& ov);

}  // namespace cli
}  // namespace twinflow
