#include <optional>
#include <string>

#include "CLI11.hpp"
#include "twinflow/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"twinflow: compose two single-arm flow policies into a bimanual policy"};
  app.require_subcommand(1);

  struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
  };

  static const char* kCommands[] = {"gen-data", "pretrain-single", "duplicate",
                                    "finetune-twin", "eval", "ablate", "data-sweep"};
  static const char* kHelp[] = {
      "generate expert demonstration datasets",
      "train the single-arm policy",
      "turn a single checkpoint into a twin checkpoint",
      "finetune a twin checkpoint on bimanual demonstrations",
      "closed-loop evaluation of a checkpoint on a task",
      "run the component-removal ladder and emit a report",
      "train on nested demo subsets and emit the data-efficiency curve",
  };

  std::map<std::string, Args> args;
  for (std::size_t i = 0; i < std::size(kCommands); ++i) {
    auto* sub = app.add_subcommand(kCommands[i], kHelp[i]);
    Args& a = args[kCommands[i]];
    sub->add_option("--config", a.config, "JSON run config")->required();
    sub->add_option("--seed", a.seed, "override the config seed");
    sub->add_option("--out", a.out, "override the output directory");
  }

  CLI11_PARSE(app, argc, argv);

  for (auto* sub : app.get_subcommands()) {
    const Args& a = args[sub->get_name()];
    twinflow::cli::Overrides ov;
    ov.seed = a.seed;
    ov.out = a.out;
    return twinflow::cli::run_command(sub->get_name(), a.config, ov);
  }
  return twinflow::cli::kExitConfig;
}
