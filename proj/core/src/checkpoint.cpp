#include "twinflow/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

namespace twinflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
  return json{{"embed", c.embed},
              {"heads", c.heads},
              {"blocks", c.blocks},
              {"ffn_hidden", c.ffn_hidden},
              {"feat_dim", c.feat_dim},
              {"vocab", c.vocab},
              {"max_instr", c.max_instr},
              {"chunk_len", c.chunk_len},
              {"head_blocks", c.head_blocks},
              {"tau_feat", c.tau_feat},
              {"ego_tokens", c.ego_tokens},
              {"ln_eps", c.ln_eps},
              {"alpha", c.alpha},
              {"sample_steps", c.sample_steps}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.embed = j.at("embed").get<int>();
  c.heads = j.at("heads").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.feat_dim = j.at("feat_dim").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.max_instr = j.at("max_instr").get<int>();
  c.chunk_len = j.at("chunk_len").get<int>();
  c.head_blocks = j.at("head_blocks").get<int>();
  c.tau_feat = j.at("tau_feat").get<int>();
  c.ego_tokens = j.value("ego_tokens", 1);
  c.ln_eps = j.at("ln_eps").get<float>();
  c.alpha = j.at("alpha").get<float>();
  c.sample_steps = j.at("sample_steps").get<int>();
  return c;
}

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

}  // namespace

void save_store(const ParamStore& ps, const std::string& prefix, const std::string& kind,
                const ModelConfig& cfg, const NormStats& norm, const TwinFlags* flags) {
  std::vector<char> blob;
  std::map<const Tensor*, std::pair<std::size_t, std::string>> seen;  // tensor -> offset, first name
  json tensors = json::array();
  for (const auto& [name, ptr] : ps.entries()) {
    json entry{{"name", name}, {"shape", ptr->shape}, {"dtype", "f32"}};
    auto it = seen.find(ptr.get());
    if (it != seen.end()) {
      entry["offset"] = it->second.first;
      entry["alias_of"] = it->second.second;
    } else {
      std::size_t off = blob.size();
      const char* raw = reinterpret_cast<const char*>(ptr->data.data());
      blob.insert(blob.end(), raw, raw + ptr->data.size() * sizeof(float));
      seen.emplace(ptr.get(), std::make_pair(off, name));
      entry["offset"] = off;
    }
    entry["bytes"] = ptr->data.size() * sizeof(float);
    tensors.push_back(std::move(entry));
  }

  std::uint64_t blob_hash = fnv1a(blob.data(), blob.size());
  json manifest{{"format", "twinflow-ckpt-v1"},
                {"kind", kind},
                {"config", config_to_json(cfg)},
                {"normalization", stats_to_json(norm)},
                {"tensors", tensors},
                {"blob_bytes", blob.size()},
                {"content_hash", hex64(blob_hash)}};
  if (flags) {
    manifest["flags"] = json{{"joint_attention", flags->joint_attention},
                             {"moe", flags->moe},
                             {"reweight", flags->reweight}};
    // encoder and action head tensors are the pretrained single's, shared by
    // construction at duplication
    manifest["shared_groups"] = json::array({"enc.", "head."});
  }

  fs::path p(prefix);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream bf(prefix + ".bin", std::ios::binary);
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  require(bf.good(), "failed writing checkpoint blob " + prefix + ".bin");
  std::ofstream mf(prefix + ".json");
  mf << manifest.dump(2) << "\n";
  require(mf.good(), "failed writing checkpoint manifest " + prefix + ".json");
}

void save_checkpoint(const SinglePolicy& pol, const std::string& prefix) {
  save_store(pol.params, prefix, "single", pol.cfg, pol.norm, nullptr);
}

void save_checkpoint(const TwinPolicy& pol, const std::string& prefix) {
  save_store(pol.params, prefix, "twin", pol.cfg, pol.norm, &pol.flags);
}

bool checkpoint_exists(const std::string& prefix) {
  return fs::exists(prefix + ".json") && fs::exists(prefix + ".bin");
}

LoadedPolicy load_checkpoint(const std::string& prefix) {
  require(checkpoint_exists(prefix), "checkpoint not found: " + prefix);
  json manifest = json::parse(std::ifstream(prefix + ".json"));
  require(manifest.at("format") == "twinflow-ckpt-v1", "unknown checkpoint format");

  std::ifstream bf(prefix + ".bin", std::ios::binary);
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  require(blob.size() == manifest.at("blob_bytes").get<std::size_t>(), "checkpoint blob truncated");
  require(hex64(fnv1a(blob.data(), blob.size())) == manifest.at("content_hash").get<std::string>(),
          "checkpoint content hash mismatch");

  LoadedPolicy out;
  out.kind = manifest.at("kind").get<std::string>();
  ModelConfig cfg = config_from_json(manifest.at("config"));
  NormStats norm = stats_from_json(manifest.at("normalization"));

  ParamStore ps;
  std::map<std::string, ParamStore::TensorPtr> by_name;
  for (const auto& entry : manifest.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    if (entry.contains("alias_of")) {
      ps.alias(name, by_name.at(entry.at("alias_of").get<std::string>()));
      continue;
    }
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    std::size_t off = entry.at("offset").get<std::size_t>();
    require(off + t.data.size() * sizeof(float) <= blob.size(), "tensor offset out of range");
    std::memcpy(t.data.data(), blob.data() + off, t.data.size() * sizeof(float));
    by_name[name] = ps.add(name, std::move(t));
  }

  if (out.kind == "twin") {
    out.twin.cfg = cfg;
    out.twin.norm = norm;
    const auto& f = manifest.at("flags");
    out.twin.flags.joint_attention = f.at("joint_attention").get<bool>();
    out.twin.flags.moe = f.at("moe").get<bool>();
    out.twin.flags.reweight = f.at("reweight").get<bool>();
    out.twin.params = std::move(ps);
  } else {
    out.single.cfg = cfg;
    out.single.norm = norm;
    out.single.params = std::move(ps);
  }
  return out;
}

std::string checkpoint_hash(const std::string& prefix) {
  require(checkpoint_exists(prefix), "checkpoint not found: " + prefix);
  json manifest = json::parse(std::ifstream(prefix + ".json"));
  return manifest.at("content_hash").get<std::string>();
}

}  // namespace twinflow
