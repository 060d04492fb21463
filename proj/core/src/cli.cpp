#include "twinflow/cli.hpp"

#include <cstdio>
#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "twinflow/checkpoint.hpp"
#include "twinflow/dataset.hpp"
#include "twinflow/report.hpp"
#include "twinflow/train.hpp"

namespace twinflow {
namespace cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config plumbing ----------------------------------------------------

void validate_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    require(allowed.count(key) != 0, "unknown key '" + key + "' in " + where);
}

json parse_config(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), "config is not valid JSON");
  return j;
}

std::string config_hash(const json& j) { return hex64(fnv1a(j.dump())); }

std::uint64_t seed_of(const json& j, const Overrides& ov) {
  if (ov.seed) return *ov.seed;
  return j.value("seed", 0ull);
}

std::string out_of(const json& j, const Overrides& ov) {
  if (ov.out) return *ov.out;
  require(j.contains("out"), "config needs an 'out' directory (or pass --out)");
  return j.at("out").get<std::string>();
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  if (!j.contains("model")) return c;
  const json& m = j.at("model");
  validate_keys(m, {"embed", "heads", "blocks", "ffn_hidden", "feat_dim", "vocab", "max_instr",
                    "chunk_len", "head_blocks", "tau_feat", "ego_tokens", "ln_eps", "alpha", "sample_steps"},
                "model");
  c.embed = m.value("embed", c.embed);
  c.heads = m.value("heads", c.heads);
  c.blocks = m.value("blocks", c.blocks);
  c.ffn_hidden = m.value("ffn_hidden", c.ffn_hidden);
  c.feat_dim = m.value("feat_dim", c.feat_dim);
  c.vocab = m.value("vocab", c.vocab);
  c.max_instr = m.value("max_instr", c.max_instr);
  c.chunk_len = m.value("chunk_len", c.chunk_len);
  c.head_blocks = m.value("head_blocks", c.head_blocks);
  c.tau_feat = m.value("tau_feat", c.tau_feat);
  c.ego_tokens = m.value("ego_tokens", c.ego_tokens);
  c.ln_eps = m.value("ln_eps", c.ln_eps);
  c.alpha = m.value("alpha", c.alpha);
  c.sample_steps = m.value("sample_steps", c.sample_steps);
  c.validate();
  return c;
}

TrainConfig train_config_from(const json& j, std::uint64_t seed, int default_steps) {
  TrainConfig c;
  c.total_steps = default_steps;
  c.seed = seed;
  if (!j.contains("train")) return c;
  const json& t = j.at("train");
  validate_keys(t, {"lr", "warmup_ratio", "total_steps", "batch_size", "grad_clip", "weight_decay",
                    "adam_eps", "beta1", "beta2", "schedule"},
                "train");
  c.lr = t.value("lr", c.lr);
  c.warmup_ratio = t.value("warmup_ratio", c.warmup_ratio);
  c.total_steps = t.value("total_steps", c.total_steps);
  c.batch_size = t.value("batch_size", c.batch_size);
  c.grad_clip = t.value("grad_clip", c.grad_clip);
  c.weight_decay = t.value("weight_decay", c.weight_decay);
  c.adam_eps = t.value("adam_eps", c.adam_eps);
  c.beta1 = t.value("beta1", c.beta1);
  c.beta2 = t.value("beta2", c.beta2);
  c.schedule = t.value("schedule", c.schedule);
  c.validate();
  return c;
}

TwinFlags flags_from(const json& j, TwinFlags base) {
  if (!j.contains("flags")) return base;
  const json& f = j.at("flags");
  validate_keys(f, {"joint_attention", "moe", "reweight"}, "flags");
  base.joint_attention = f.value("joint_attention", base.joint_attention);
  base.moe = f.value("moe", base.moe);
  base.reweight = f.value("reweight", base.reweight);
  return base;
}

// ---- run directory lock -------------------------------------------------

class RunLock {
public:
  explicit RunLock(const std::string& dir) : path_(fs::path(dir) / ".twinflow.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require(fd_ >= 0, "output directory is locked by another run: " + dir);
    std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      ::unlink(path_.c_str());
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

private:
  std::string path_;
  int fd_ = -1;
};

// ---- shared helpers -------------------------------------------------------

Dataset load_dataset_or_die(const std::string& dir, const std::string& stage) {
  if (!fs::exists(fs::path(dir) / "meta.json"))
    throw MissingArtifactError("missing artifact for " + stage + ": dataset '" + dir +
                               "' (run gen-data first)");
  return Dataset::load(dir);
}

LoadedPolicy load_policy_or_die(const std::string& prefix, const std::string& stage,
                                const std::string& upstream) {
  if (!checkpoint_exists(prefix))
    throw MissingArtifactError("missing artifact for " + stage + ": checkpoint '" + prefix +
                               "' (run " + upstream + " first)");
  return load_checkpoint(prefix);
}

MetricsSink jsonl_sink(std::ofstream& f) {
  return [&f](const MetricsRecord& r) {
    json line{{"step", r.step}, {"loss", r.loss}, {"lr", r.lr},
              {"grad_norm", r.grad_norm}, {"wall_ms", r.wall_ms}};
    f << line.dump() << "\n";
  };
}

TaskSpec task_from_config(const json& j) {
  TaskSpec task = TaskSpec::standard(task_from_string(j.at("task").get<std::string>()));
  return task;
}

int eval_horizon(const json& j, const TaskSpec& task) {
  return j.value("horizon", 2 * task.horizon);
}

struct FinetuneRun {
  std::string name;
  TwinFlags flags;
  bool scratch = false;
};

// duplicate (or fresh-init for scratch), finetune, eval with shared seeds
struct RunOutcome {
  double rate = 0;
  double initial_loss = 0;
  int tokens = 0;
  std::string ckpt_hash;
};

RunOutcome run_finetune_eval(const FinetuneRun& run, const SinglePolicy& pretrained,
                             const Dataset& data, const TaskSpec& task, const TrainConfig& tc,
                             std::uint64_t train_seed, std::uint64_t eval_seed, int rollouts,
                             int horizon, const std::vector<PreparedSample>& probe_batch,
                             const std::string& out_prefix) {
  TwinPolicy twin;
  if (run.scratch) {
    auto fresh = make_single_policy<float>(pretrained.cfg, 0xabcdef01u ^ train_seed);
    twin = duplicate(fresh);
  } else {
    twin = duplicate(pretrained);
  }
  twin.flags = run.flags;

  RunOutcome out;
  twin.norm = data.meta.stats;
  out.initial_loss = batch_loss(twin, probe_batch);
  {
    TapeT<float> t(false);
    auto fwd = twin_forward(t, twin, probe_batch.front().ot);
    out.tokens = fwd.tokens;
  }

  TrainConfig cfg = tc;
  cfg.seed = train_seed;
  train_policy(twin, data, cfg);
  save_checkpoint(twin, out_prefix);
  out.ckpt_hash = checkpoint_hash(out_prefix);
  EvalResult ev = evaluate(make_rollout(twin), task, rollouts, eval_seed, horizon);
  out.rate = ev.success_rate;
  return out;
}

std::string csv_line(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ",";
    s += cells[i];
  }
  return s + "\n";
}

}  // namespace

// ---- commands --------------------------------------------------------------

int gen_data_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"task", "tasks", "episodes", "seed", "out", "env_hz", "target_hz"}, "gen-data");
  std::uint64_t seed = seed_of(cfg, ov);
  std::string out = out_of(cfg, ov);
  float target_hz = cfg.value("target_hz", kCanonicalHz);
  RunLock lock(out);

  struct Part {
    TaskSpec task;
    int episodes;
  };
  std::vector<Part> parts;
  if (cfg.contains("tasks")) {
    require(!cfg.contains("task") && !cfg.contains("episodes"),
            "use either 'task'+'episodes' or 'tasks', not both");
    for (const auto& t : cfg.at("tasks")) {
      validate_keys(t, {"task", "episodes"}, "tasks[]");
      TaskSpec task = TaskSpec::standard(task_from_string(t.at("task").get<std::string>()));
      if (cfg.contains("env_hz")) task.env_hz = cfg.at("env_hz").get<float>();
      parts.push_back({task, t.at("episodes").get<int>()});
    }
  } else {
    TaskSpec task = TaskSpec::standard(task_from_string(cfg.at("task").get<std::string>()));
    if (cfg.contains("env_hz")) task.env_hz = cfg.at("env_hz").get<float>();
    parts.push_back({task, cfg.value("episodes", 50)});
  }

  Dataset all;
  int failures = 0;
  int requested = 0;
  std::string task_names;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    int f = 0;
    Dataset d = generate_dataset(parts[p].task, parts[p].episodes, seed + p * 7919, target_hz, &f);
    failures += f;
    requested += parts[p].episodes;
    require(all.episodes.empty() || all.meta.arms == d.meta.arms,
            "mixed datasets must share the arm count");
    if (!task_names.empty()) task_names += "+";
    task_names += d.meta.task;
    for (auto& ep : d.episodes) all.episodes.push_back(std::move(ep));
    all.meta = d.meta;
  }
  all.meta.task = task_names;
  all.meta.episodes = static_cast<int>(all.episodes.size());
  all.meta.expert_success = static_cast<double>(requested) / (requested + failures);
  all.meta.config_hash = config_hash(cfg);
  all.compute_stats();
  all.save(out);

  std::printf("gen-data: wrote %d episodes (%s) to %s\n", all.meta.episodes, task_names.c_str(),
              out.c_str());
  std::printf("gen-data: expert audit %.4f (%d unsolved seeds skipped)\n", all.meta.expert_success,
              failures);
  if (all.meta.expert_success < 0.95) {
    std::fprintf(stderr, "gen-data: expert audit below 0.95\n");
    return kExitFailure;
  }
  return kExitOk;
}

int pretrain_single_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"data", "out", "seed", "model", "train"}, "pretrain-single");
  std::uint64_t seed = seed_of(cfg, ov);
  std::string out = out_of(cfg, ov);
  Dataset data = load_dataset_or_die(cfg.at("data").get<std::string>(), "pretrain-single");
  require(data.meta.arms == 1, "pretrain-single expects a single-arm dataset");
  RunLock lock(out);

  ModelConfig mc = model_config_from(cfg);
  require(mc.feat_dim == world::kFeatDim, "model feat_dim must match the simulator features");
  TrainConfig tc = train_config_from(cfg, seed, 5000);
  tc.warmup_ratio = cfg.contains("train") && cfg.at("train").contains("warmup_ratio")
                        ? tc.warmup_ratio
                        : 0.01f;  // single-policy default

  auto pol = make_single_policy<float>(mc, seed);
  std::ofstream mf(fs::path(out) / "metrics.jsonl");
  TrainResult res = train_policy(pol, data, tc, jsonl_sink(mf));
  std::string prefix = (fs::path(out) / "single").string();
  save_checkpoint(pol, prefix);
  std::printf("pretrain-single: %d steps, final loss %.5f\n", tc.total_steps, res.final_loss);
  std::printf("pretrain-single: checkpoint %s (hash %s, config %s)\n", prefix.c_str(),
              checkpoint_hash(prefix).c_str(), config_hash(cfg).c_str());
  return kExitOk;
}

int duplicate_single_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"single", "out", "seed", "flags"}, "duplicate");
  std::string out = out_of(cfg, ov);
  LoadedPolicy lp =
      load_policy_or_die(cfg.at("single").get<std::string>(), "duplicate", "pretrain-single");
  require(!lp.is_twin(), "duplicate expects a single-policy checkpoint");
  RunLock lock(out);

  TwinPolicy twin = duplicate(lp.single);
  twin.flags = flags_from(cfg, TwinFlags{});
  std::string prefix = (fs::path(out) / "twin").string();
  save_checkpoint(twin, prefix);
  std::printf("duplicate: twin checkpoint %s (hash %s)\n", prefix.c_str(),
              checkpoint_hash(prefix).c_str());
  std::printf("duplicate: params single=%zu twin=%zu (encoder and head shared)\n",
              lp.single.params.scalar_count(), twin.params.scalar_count());
  return kExitOk;
}

int finetune_twin_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"twin", "data", "out", "seed", "train", "flags"}, "finetune-twin");
  std::uint64_t seed = seed_of(cfg, ov);
  std::string out = out_of(cfg, ov);
  LoadedPolicy lp = load_policy_or_die(cfg.at("twin").get<std::string>(), "finetune-twin", "duplicate");
  require(lp.is_twin(), "finetune-twin expects a twin checkpoint");
  Dataset data = load_dataset_or_die(cfg.at("data").get<std::string>(), "finetune-twin");
  require(data.meta.arms == 2, "finetune-twin expects a bimanual dataset");
  RunLock lock(out);

  lp.twin.flags = flags_from(cfg, lp.twin.flags);
  TrainConfig tc = train_config_from(cfg, seed, 3000);
  std::ofstream mf(fs::path(out) / "metrics.jsonl");
  TrainResult res = train_policy(lp.twin, data, tc, jsonl_sink(mf));
  std::string prefix = (fs::path(out) / "twin_ft").string();
  save_checkpoint(lp.twin, prefix);
  std::printf("finetune-twin: %d steps, final loss %.5f\n", tc.total_steps, res.final_loss);
  std::printf("finetune-twin: checkpoint %s (hash %s, config %s)\n", prefix.c_str(),
              checkpoint_hash(prefix).c_str(), config_hash(cfg).c_str());
  return kExitOk;
}

int eval_policy_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"policy", "task", "rollouts", "horizon", "seed", "out", "exec_prefix"}, "eval");
  std::uint64_t seed = seed_of(cfg, ov);
  std::string out = out_of(cfg, ov);
  LoadedPolicy lp = load_policy_or_die(cfg.at("policy").get<std::string>(), "eval",
                                       "pretrain-single or finetune-twin");
  TaskSpec task = task_from_config(cfg);
  int rollouts = cfg.value("rollouts", 20);
  int horizon = eval_horizon(cfg, task);
  int exec_prefix = cfg.value("exec_prefix", 0);
  require((task.arms() == 2) == lp.is_twin(), "policy arm count does not match the task");
  RunLock lock(out);

  EvalResult res = lp.is_twin() ? evaluate(make_rollout(lp.twin), task, rollouts, seed, horizon, exec_prefix)
                                : evaluate(make_rollout(lp.single), task, rollouts, seed, horizon, exec_prefix);

  std::ofstream ef(fs::path(out) / "eval.jsonl");
  for (const auto& ep : res.episodes) {
    json line{{"seed", ep.seed}, {"success", ep.success}, {"steps", ep.steps}};
    ef << line.dump() << "\n";
  }
  json summary{{"task", to_string(task.kind)},
               {"rollouts", rollouts},
               {"horizon", horizon},
               {"success_rate", res.success_rate},
               {"seed", seed},
               {"config_hash", config_hash(cfg)},
               {"checkpoint_hash", checkpoint_hash(cfg.at("policy").get<std::string>())}};
  write_text_file((fs::path(out) / "summary.json").string(), summary.dump(2) + "\n");
  std::printf("eval: %s success rate %.3f over %d rollouts (seed %llu)\n", to_string(task.kind),
              res.success_rate, rollouts, static_cast<unsigned long long>(seed));
  return kExitOk;
}

namespace {

std::vector<std::uint64_t> train_seeds_from(const json& cfg, std::uint64_t seed) {
  std::vector<std::uint64_t> seeds;
  if (cfg.contains("train_seeds")) {
    for (const auto& s : cfg.at("train_seeds")) seeds.push_back(s.get<std::uint64_t>());
  } else {
    int n = cfg.value("n_seeds", 3);
    for (int i = 0; i < n; ++i) seeds.push_back(seed + 101 * (i + 1));
  }
  require(!seeds.empty(), "need at least one training seed");
  return seeds;
}

}  // namespace

int ablate_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"single", "data", "task", "out", "seed", "train", "rollouts", "horizon",
                      "train_seeds", "n_seeds"},
                "ablate");
  std::uint64_t seed = seed_of(cfg, ov);
  std::string out = out_of(cfg, ov);
  LoadedPolicy lp = load_policy_or_die(cfg.at("single").get<std::string>(), "ablate", "pretrain-single");
  require(!lp.is_twin(), "ablate expects the pretrained single checkpoint");
  Dataset data = load_dataset_or_die(cfg.at("data").get<std::string>(), "ablate");
  TaskSpec task = task_from_config(cfg);
  int rollouts = cfg.value("rollouts", 100);
  int horizon = eval_horizon(cfg, task);
  TrainConfig tc = train_config_from(cfg, seed, 3000);
  std::vector<std::uint64_t> train_seeds = train_seeds_from(cfg, seed);
  RunLock lock(out);

  // the ladder removes components cumulatively; scratch keeps the full
  // architecture but drops pretraining
  std::vector<FinetuneRun> ladder = {
      {"full", {true, true, true}, false},
      {"wo_reweight", {true, true, false}, false},
      {"wo_reweight_moe", {true, false, false}, false},
      {"wo_reweight_moe_jointattn", {false, false, false}, false},
      {"scratch", {true, true, true}, true},
  };

  // one probe batch shared by every rung (paired comparison)
  Rng probe_rng = Rng(seed).split("ablate-probe");
  auto probe = prepare_batch(data, data.meta.stats, 32, lp.single.cfg.chunk_len, probe_rng);

  std::string csv = csv_line({"rung", "train_seed", "initial_loss", "tokens", "success_rate",
                              "checkpoint_hash"});
  std::vector<double> mean_rates;
  std::vector<std::string> labels;
  std::printf("ablate: %zu rungs x %zu seeds, %d rollouts each\n", ladder.size(),
              train_seeds.size(), rollouts);
  for (const auto& rung : ladder) {
    double rate_sum = 0;
    for (std::size_t si = 0; si < train_seeds.size(); ++si) {
      std::string prefix =
          (fs::path(out) / "runs" / (rung.name + "_s" + std::to_string(si)) / "twin_ft").string();
      RunOutcome R = run_finetune_eval(rung, lp.single, data, task, tc, train_seeds[si],
                                       seed + 17, rollouts, horizon, probe, prefix);
      rate_sum += R.rate;
      csv += csv_line({rung.name, std::to_string(train_seeds[si]), format_double(R.initial_loss),
                       std::to_string(R.tokens), format_double(R.rate), R.ckpt_hash});
      std::printf("  %-28s seed %llu: init_loss %.4f tokens %d rate %.3f\n", rung.name.c_str(),
                  static_cast<unsigned long long>(train_seeds[si]), R.initial_loss, R.tokens,
                  R.rate);
    }
    mean_rates.push_back(rate_sum / train_seeds.size());
    labels.push_back(rung.name);
  }

  csv += "# config_hash," + config_hash(cfg) + "\n";
  csv += "# single_checkpoint," + checkpoint_hash(cfg.at("single").get<std::string>()) + "\n";
  write_text_file((fs::path(out) / "ablate.csv").string(), csv);
  write_text_file((fs::path(out) / "ablate.svg").string(),
                  svg_bar_chart("ablation ladder: " + std::string(to_string(task.kind)), labels,
                                mean_rates, "success rate"));
  std::printf("ablate: wrote %s and %s\n", (fs::path(out) / "ablate.csv").c_str(),
              (fs::path(out) / "ablate.svg").c_str());
  return kExitOk;
}

int data_sweep_impl(const std::string& config_json, const Overrides& ov) {
  json cfg = parse_config(config_json);
  validate_keys(cfg, {"single", "data", "task", "out", "seed", "train", "rollouts", "horizon",
                      "train_seeds", "n_seeds", "subset_sizes"},
                "data-sweep");
  std::uint64_t seed = seed_of(cfg, ov);
  std::string out = out_of(cfg, ov);
  LoadedPolicy lp =
      load_policy_or_die(cfg.at("single").get<std::string>(), "data-sweep", "pretrain-single");
  Dataset data = load_dataset_or_die(cfg.at("data").get<std::string>(), "data-sweep");
  TaskSpec task = task_from_config(cfg);
  int rollouts = cfg.value("rollouts", 100);
  int horizon = eval_horizon(cfg, task);
  TrainConfig tc = train_config_from(cfg, seed, 3000);
  std::vector<std::uint64_t> train_seeds = train_seeds_from(cfg, seed);
  std::vector<int> sizes = cfg.contains("subset_sizes")
                               ? cfg.at("subset_sizes").get<std::vector<int>>()
                               : std::vector<int>{20, 35, 50};
  for (int n : sizes)
    require(n >= 1 && n <= static_cast<int>(data.episodes.size()),
            "subset size exceeds the dataset");
  RunLock lock(out);

  std::string csv = csv_line({"episodes", "train_seed", "success_rate", "checkpoint_hash"});
  std::vector<double> xs, means;
  std::printf("data-sweep: sizes x seeds = %zu x %zu\n", sizes.size(), train_seeds.size());
  for (int n : sizes) {
    // nested subsets: the first n episodes in dataset order
    Dataset subset;
    subset.meta = data.meta;
    subset.episodes.assign(data.episodes.begin(), data.episodes.begin() + n);
    subset.meta.episodes = n;
    subset.compute_stats();

    Rng probe_rng = Rng(seed).split("sweep-probe");
    auto probe = prepare_batch(subset, subset.meta.stats, 8, lp.single.cfg.chunk_len, probe_rng);
    double rate_sum = 0;
    for (std::size_t si = 0; si < train_seeds.size(); ++si) {
      std::string prefix = (fs::path(out) / "runs" /
                            ("n" + std::to_string(n) + "_s" + std::to_string(si)) / "twin_ft")
                               .string();
      FinetuneRun run{"full", TwinFlags{}, false};
      RunOutcome R = run_finetune_eval(run, lp.single, subset, task, tc, train_seeds[si], seed + 17,
                                       rollouts, horizon, probe, prefix);
      rate_sum += R.rate;
      csv += csv_line({std::to_string(n), std::to_string(train_seeds[si]), format_double(R.rate),
                       R.ckpt_hash});
      std::printf("  n=%-3d seed %llu: rate %.3f\n", n,
                  static_cast<unsigned long long>(train_seeds[si]), R.rate);
    }
    xs.push_back(n);
    means.push_back(rate_sum / train_seeds.size());
  }

  csv += "# config_hash," + config_hash(cfg) + "\n";
  csv += "# single_checkpoint," + checkpoint_hash(cfg.at("single").get<std::string>()) + "\n";
  write_text_file((fs::path(out) / "sweep.csv").string(), csv);
  write_text_file((fs::path(out) / "sweep.svg").string(),
                  svg_line_chart("demonstrations vs success: " + std::string(to_string(task.kind)),
                                 xs, means, "demonstrations", "success rate"));
  std::printf("data-sweep: wrote %s and %s\n", (fs::path(out) / "sweep.csv").c_str(),
              (fs::path(out) / "sweep.svg").c_str());
  return kExitOk;
}


namespace {

int guarded(int (*fn)(const std::string&, const Overrides&), const std::string& text,
            const Overrides& ov) {
  try {
    return fn(text, ov);
  } catch (const MissingArtifactError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitMissing;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const TwinflowError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fatal: %s\n", e.what());
    return kExitFailure;
  }
}

}  // namespace

int gen_data(const std::string& t, const Overrides& ov) { return guarded(gen_data_impl, t, ov); }
int pretrain_single(const std::string& t, const Overrides& ov) { return guarded(pretrain_single_impl, t, ov); }
int duplicate_single(const std::string& t, const Overrides& ov) { return guarded(duplicate_single_impl, t, ov); }
int finetune_twin(const std::string& t, const Overrides& ov) { return guarded(finetune_twin_impl, t, ov); }
int eval_policy(const std::string& t, const Overrides& ov) { return guarded(eval_policy_impl, t, ov); }
int ablate(const std::string& t, const Overrides& ov) { return guarded(ablate_impl, t, ov); }
int data_sweep(const std::string& t, const Overrides& ov) { return guarded(data_sweep_impl, t, ov); }

int run_command(const std::string& command, const std::string& config_path, const Overrides& ov) {
  std::ifstream f(config_path);
  if (!f.good()) {
    std::fprintf(stderr, "cannot read config file: %s\n", config_path.c_str());
    return kExitConfig;
  }
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (command == "gen-data") return gen_data(text, ov);
  if (command == "pretrain-single") return pretrain_single(text, ov);
  if (command == "duplicate") return duplicate_single(text, ov);
  if (command == "finetune-twin") return finetune_twin(text, ov);
  if (command == "eval") return eval_policy(text, ov);
  if (command == "ablate") return ablate(text, ov);
  if (command == "data-sweep") return data_sweep(text, ov);
  std::fprintf(stderr, "unknown command: %s\n", command.c_str());
  return kExitConfig;
}

}  // namespace cli
}  // namespace twinflow
