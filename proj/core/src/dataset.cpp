#include "twinflow/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace twinflow {

namespace fs = std::filesystem;
using nlohmann::json;

StoredEpisode Dataset::from_episode(const Episode& ep, float target_hz) {
  StoredEpisode s;
  s.instruction = ep.instruction;
  s.instr_ids = ep.instr_ids;
  s.env_hz = ep.env_hz;
  s.act_hz = target_hz;
  s.success = ep.success;
  s.seed = ep.seed;

  int obs_dim = static_cast<int>(ep.obs.front().size());
  s.obs = Tensor({static_cast<int>(ep.obs.size()), obs_dim});
  for (std::size_t t = 0; t < ep.obs.size(); ++t)
    std::copy(ep.obs[t].begin(), ep.obs[t].end(), s.obs.row(static_cast<int>(t)));

  ActionChunk resampled = resample_chunk(ep.action_chunk(), target_hz);
  s.actions = Tensor({resampled.T, resampled.D});
  s.actions.data = resampled.data;
  return s;
}

void Dataset::compute_stats() {
  require(!episodes.empty(), "cannot compute stats of an empty dataset");
  int act_dim = episodes[0].actions.cols();
  int arms = act_dim / kPoseDim;
  int obs_dim = episodes[0].obs.cols();

  std::vector<double> a_sum(act_dim, 0), a_sq(act_dim, 0);
  std::vector<double> p_sum(kPoseDim, 0), p_sq(kPoseDim, 0);
  std::size_t a_n = 0, p_n = 0;
  for (const auto& ep : episodes) {
    for (int t = 0; t < ep.actions.rows(); ++t)
      for (int j = 0; j < act_dim; ++j) {
        double v = ep.actions.at(t, j);
        a_sum[j] += v;
        a_sq[j] += v * v;
      }
    a_n += ep.actions.rows();
    // proprio blocks pooled over arms: flat layout [ego | (wrist prop) x arms]
    for (int t = 0; t < ep.obs.rows(); ++t) {
      for (int a = 0; a < arms; ++a) {
        int off = world::kFeatDim + a * (world::kFeatDim + kPoseDim) + world::kFeatDim;
        require(off + kPoseDim <= obs_dim, "obs layout mismatch");
        for (int j = 0; j < kPoseDim; ++j) {
          double v = ep.obs.at(t, off + j);
          p_sum[j] += v;
          p_sq[j] += v * v;
        }
        ++p_n;
      }
    }
  }
  meta.stats = NormStats::identity(act_dim);
  for (int j = 0; j < act_dim; ++j) {
    double mu = a_sum[j] / static_cast<double>(a_n);
    double var = std::max(0.0, a_sq[j] / static_cast<double>(a_n) - mu * mu);
    meta.stats.action_mean[j] = static_cast<float>(mu);
    meta.stats.action_std[j] = static_cast<float>(std::sqrt(var) < 1e-6 ? 1.0 : std::sqrt(var));
  }
  for (int j = 0; j < kPoseDim; ++j) {
    double mu = p_sum[j] / static_cast<double>(p_n);
    double var = std::max(0.0, p_sq[j] / static_cast<double>(p_n) - mu * mu);
    meta.stats.proprio_mean[j] = static_cast<float>(mu);
    meta.stats.proprio_std[j] = static_cast<float>(std::sqrt(var) < 1e-6 ? 1.0 : std::sqrt(var));
  }
}

namespace {

json stats_to_json(const NormStats& s) {
  return json{{"action_mean", s.action_mean},
              {"action_std", s.action_std},
              {"proprio_mean", s.proprio_mean},
              {"proprio_std", s.proprio_std}};
}

NormStats stats_from_json(const json& j) {
  NormStats s;
  s.action_mean = j.at("action_mean").get<std::vector<float>>();
  s.action_std = j.at("action_std").get<std::vector<float>>();
  s.proprio_mean = j.at("proprio_mean").get<std::vector<float>>();
  s.proprio_std = j.at("proprio_std").get<std::vector<float>>();
  return s;
}

void write_blob(std::ofstream& f, const Tensor& t) {
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

constexpr std::uint32_t kRecMagic = 0x7446E501u;

}  // namespace

void Dataset::save(const std::string& dir) const {
  fs::create_directories(dir);
  json m{{"task", meta.task},
         {"arms", meta.arms},
         {"obs_dim", meta.obs_dim},
         {"act_dim", meta.act_dim},
         {"frequency", meta.frequency},
         {"env_hz", meta.env_hz},
         {"episodes", meta.episodes},
         {"expert_success", meta.expert_success},
         {"normalization", stats_to_json(meta.stats)},
         {"config_hash", meta.config_hash}};
  std::ofstream mf(fs::path(dir) / "meta.json");
  mf << m.dump(2) << "\n";

  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const StoredEpisode& ep = episodes[i];
    json h{{"instruction", ep.instruction}, {"instr_ids", ep.instr_ids},
           {"n_obs", ep.obs.rows()},        {"obs_dim", ep.obs.cols()},
           {"n_act", ep.actions.rows()},    {"act_dim", ep.actions.cols()},
           {"env_hz", ep.env_hz},           {"act_hz", ep.act_hz},
           {"success", ep.success},         {"seed", ep.seed}};
    std::string hs = h.dump();
    char name[32];
    std::snprintf(name, sizeof(name), "episode_%05zu.rec", i);
    std::ofstream f(fs::path(dir) / name, std::ios::binary);
    std::uint32_t magic = kRecMagic, len = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&magic), 4);
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_blob(f, ep.obs);
    write_blob(f, ep.actions);
  }
}

Dataset Dataset::load(const std::string& dir) {
  require(fs::exists(fs::path(dir) / "meta.json"), "dataset meta.json not found in " + dir);
  Dataset d;
  json m = json::parse(std::ifstream(fs::path(dir) / "meta.json"));
  d.meta.task = m.at("task").get<std::string>();
  d.meta.arms = m.at("arms").get<int>();
  d.meta.obs_dim = m.at("obs_dim").get<int>();
  d.meta.act_dim = m.at("act_dim").get<int>();
  d.meta.frequency = m.at("frequency").get<float>();
  d.meta.env_hz = m.at("env_hz").get<float>();
  d.meta.episodes = m.at("episodes").get<int>();
  d.meta.expert_success = m.at("expert_success").get<double>();
  d.meta.stats = stats_from_json(m.at("normalization"));
  d.meta.config_hash = m.value("config_hash", "");

  for (int i = 0; i < d.meta.episodes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "episode_%05d.rec", i);
    std::ifstream f(fs::path(dir) / name, std::ios::binary);
    require(f.good(), std::string("missing episode record ") + name);
    std::uint32_t magic = 0, len = 0;
    f.read(reinterpret_cast<char*>(&magic), 4);
    f.read(reinterpret_cast<char*>(&len), 4);
    require(magic == kRecMagic, std::string("bad episode record magic in ") + name);
    std::string hs(len, '\0');
    f.read(hs.data(), len);
    json h = json::parse(hs);
    StoredEpisode ep;
    ep.instruction = h.at("instruction").get<std::string>();
    ep.instr_ids = h.at("instr_ids").get<std::vector<int>>();
    ep.env_hz = h.at("env_hz").get<float>();
    ep.act_hz = h.at("act_hz").get<float>();
    ep.success = h.at("success").get<bool>();
    ep.seed = h.at("seed").get<std::uint64_t>();
    ep.obs = Tensor({h.at("n_obs").get<int>(), h.at("obs_dim").get<int>()});
    ep.actions = Tensor({h.at("n_act").get<int>(), h.at("act_dim").get<int>()});
    f.read(reinterpret_cast<char*>(ep.obs.data.data()),
           static_cast<std::streamsize>(ep.obs.data.size() * sizeof(float)));
    f.read(reinterpret_cast<char*>(ep.actions.data.data()),
           static_cast<std::streamsize>(ep.actions.data.size() * sizeof(float)));
    require(f.good(), std::string("truncated episode record ") + name);
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

int Dataset::action_stride() const {
  float ratio = meta.frequency / meta.env_hz;
  int stride = static_cast<int>(ratio + 0.5f);
  require(std::abs(ratio - stride) < 1e-6 && stride >= 1, "action rate must be a multiple of obs rate");
  return stride;
}

Dataset::Window Dataset::sample_window(Rng& rng) const {
  require(!episodes.empty(), "empty dataset");
  const StoredEpisode& ep = episodes[rng.uniform_int(0, static_cast<int>(episodes.size()) - 1)];
  int start = rng.uniform_int(0, ep.obs.rows() - 1);
  return {&ep, start};
}

ActionChunk Dataset::window_chunk(const Window& w, int chunk_len) const {
  const StoredEpisode& ep = *w.ep;
  int stride = action_stride();
  int start = w.start_obs * stride;
  ActionChunk c(chunk_len, ep.actions.cols(), ep.act_hz);
  for (int t = 0; t < chunk_len; ++t) {
    int src = std::min(start + t, ep.actions.rows() - 1);  // repeat the final action
    std::copy(ep.actions.row(src), ep.actions.row(src) + ep.actions.cols(), c.row(t));
  }
  return c;
}

std::vector<float> Dataset::window_obs(const Window& w) const {
  const StoredEpisode& ep = *w.ep;
  return std::vector<float>(ep.obs.row(w.start_obs), ep.obs.row(w.start_obs) + ep.obs.cols());
}

Dataset generate_dataset(const TaskSpec& task, int episodes, std::uint64_t seed, float target_hz,
                         int* failures) {
  Dataset d;
  int failed = 0;
  std::uint64_t next = 0;
  Rng seeder = Rng(seed).split("data");
  while (static_cast<int>(d.episodes.size()) < episodes) {
    std::uint64_t ep_seed = (static_cast<std::uint64_t>(seeder.next_u32()) << 20) ^ next;
    ++next;
    try {
      Episode ep = scripted_expert(task, ep_seed);
      d.episodes.push_back(Dataset::from_episode(ep, target_hz));
    } catch (const TwinflowError&) {
      ++failed;
      require(failed < episodes * 2 + 100, "expert failure rate too high while generating data");
    }
  }
  d.meta.task = to_string(task.kind);
  d.meta.arms = task.arms();
  d.meta.obs_dim = d.episodes[0].obs.cols();
  d.meta.act_dim = d.episodes[0].actions.cols();
  d.meta.frequency = target_hz;
  d.meta.env_hz = task.env_hz;
  d.meta.episodes = static_cast<int>(d.episodes.size());
  d.meta.expert_success =
      static_cast<double>(episodes) / static_cast<double>(episodes + failed);
  d.compute_stats();
  if (failures) *failures = failed;
  return d;
}

std::vector<PreparedSample> prepare_batch(const Dataset& data, const NormStats& norm, int batch,
                                          int chunk_len, Rng& rng) {
  std::vector<PreparedSample> out;
  out.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    auto w = data.sample_window(rng);
    PreparedSample s;
    s.twin = data.meta.arms == 2;
    auto flat = data.window_obs(w);
    if (s.twin)
      s.ot = SimEnv::unflatten_twin(flat, w.ep->instr_ids);
    else
      s.os = SimEnv::unflatten_single(flat, w.ep->instr_ids);

    ActionChunk chunk = data.window_chunk(w, chunk_len);
    Tensor a_norm = norm.normalize_chunk(chunk);
    ActionChunk norm_chunk(chunk.T, chunk.D, chunk.frequency);
    norm_chunk.data = a_norm.data;
    FlowSample fs = make_flow_sample(norm_chunk, rng);
    s.a_tau = std::move(fs.a_tau);
    s.tau = fs.tau;
    s.u = std::move(fs.u);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace twinflow
