#include "twinflow/train.hpp"

#include <chrono>
#include <cmath>

#include "twinflow/common.hpp"

namespace twinflow {

double lr_at(int step, const TrainConfig& cfg) {
  require(step >= 0 && step <= cfg.total_steps, "step outside schedule");
  if (cfg.schedule == "constant") return cfg.lr;
  int warm = static_cast<int>(std::lround(cfg.warmup_ratio * cfg.total_steps));
  if (warm > 0 && step <= warm) return cfg.lr * static_cast<double>(step) / warm;
  double prog = cfg.total_steps == warm
                    ? 1.0
                    : static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
  return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog));
}

void AdamW::step(ParamStore& params, const GradMap<float>& grads, double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor(p.shape)).first;
      v_.emplace(name, Tensor(p.shape));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      double gi = g.data[i];
      double mi = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * gi;
      double vi = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * gi * gi;
      m.data[i] = static_cast<float>(mi);
      v.data[i] = static_cast<float>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.adam_eps);
      double decayed = p.data[i] - lr * cfg_.weight_decay * p.data[i];
      p.data[i] = static_cast<float>(decayed - lr * update);
    }
  }
}

double clip_global_norm(GradMap<float>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (float v : g.data) sq += static_cast<double>(v) * v;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v = static_cast<float>(v * s);
  }
  return norm;
}

namespace {

template <class Policy>
VarT<float> sample_loss(TapeT<float>& tape, const Policy& pol, const PreparedSample& s);

template <>
VarT<float> sample_loss(TapeT<float>& tape, const SinglePolicy& pol, const PreparedSample& s) {
  return single_loss_graph(tape, pol, s.os, s.a_tau, s.tau, s.u);
}
template <>
VarT<float> sample_loss(TapeT<float>& tape, const TwinPolicy& pol, const PreparedSample& s) {
  return twin_loss_graph(tape, pol, s.ot, s.a_tau, s.tau, s.u);
}

template <class Policy>
double batch_loss_impl(const Policy& pol, const std::vector<PreparedSample>& batch) {
  require(!batch.empty(), "empty batch");
  std::vector<double> losses(batch.size(), 0.0);
  parallel_for(batch.size(), [&](std::size_t i) {
    TapeT<float> tape(false);
    losses[i] = sample_loss(tape, pol, batch[i]).val().data[0];
  });
  double acc = 0;
  for (double l : losses) acc += l;
  return acc / static_cast<double>(batch.size());
}

template <class Policy>
double batch_grads_impl(const Policy& pol, const std::vector<PreparedSample>& batch,
                        GradMap<float>& grads) {
  require(!batch.empty(), "empty batch");
  std::vector<double> losses(batch.size(), 0.0);
  std::vector<GradMap<float>> partial(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    TapeT<float> tape(true);
    auto loss = sample_loss(tape, pol, batch[i]);
    losses[i] = loss.val().data[0];
    tape.backward(loss);
    tape.export_grads(partial[i]);
  });
  grads.clear();
  for (std::size_t i = 0; i < batch.size(); ++i) {  // fixed merge order
    for (auto& [name, g] : partial[i]) {
      auto it = grads.find(name);
      if (it == grads.end())
        it = grads.emplace(name, Tensor(g.shape)).first;
      for (std::size_t k = 0; k < g.data.size(); ++k) it->second.data[k] += g.data[k];
    }
  }
  float inv = 1.0f / static_cast<float>(batch.size());
  for (auto& [name, g] : grads)
    for (auto& v : g.data) v *= inv;
  double acc = 0;
  for (double l : losses) acc += l;
  return acc / static_cast<double>(batch.size());
}

template <class Policy>
TrainResult train_impl(Policy& pol, const Dataset& data, const TrainConfig& cfg,
                       const MetricsSink& sink) {
  cfg.validate();
  require(!data.episodes.empty(), "training dataset is empty");
  require(data.meta.act_dim == static_cast<int>(pol.norm.action_mean.size()),
          "dataset action dim does not match the policy");
  pol.norm = data.meta.stats;

  AdamW opt(cfg);
  Rng root = Rng(cfg.seed).split("train");
  TrainResult res;
  auto t0 = std::chrono::steady_clock::now();
  for (int step = 0; step < cfg.total_steps; ++step) {
    Rng batch_rng = root.split(static_cast<std::uint64_t>(step));
    auto batch = prepare_batch(data, pol.norm, cfg.batch_size, pol.cfg.chunk_len, batch_rng);
    GradMap<float> grads;
    double loss = batch_grads_impl(pol, batch, grads);
    if (!std::isfinite(loss)) fail("non-finite loss at step " + std::to_string(step));
    double norm = clip_global_norm(grads, cfg.grad_clip);
    double lr = lr_at(step, cfg);
    opt.step(pol.params, grads, lr);

    MetricsRecord rec;
    rec.step = step;
    rec.loss = loss;
    rec.lr = lr;
    rec.grad_norm = norm;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.metrics.push_back(rec);
    if (sink) sink(rec);
    res.final_loss = loss;
  }
  return res;
}

}  // namespace

double batch_loss(const SinglePolicy& pol, const std::vector<PreparedSample>& batch) {
  return batch_loss_impl(pol, batch);
}
double batch_loss(const TwinPolicy& pol, const std::vector<PreparedSample>& batch) {
  return batch_loss_impl(pol, batch);
}
double batch_grads(const SinglePolicy& pol, const std::vector<PreparedSample>& batch,
                   GradMap<float>& grads) {
  return batch_grads_impl(pol, batch, grads);
}
double batch_grads(const TwinPolicy& pol, const std::vector<PreparedSample>& batch,
                   GradMap<float>& grads) {
  return batch_grads_impl(pol, batch, grads);
}

TrainResult train_policy(SinglePolicy& pol, const Dataset& data, const TrainConfig& cfg,
                         const MetricsSink& sink) {
  require(data.meta.arms == 1, "single policy expects a single-arm dataset");
  return train_impl(pol, data, cfg, sink);
}
TrainResult train_policy(TwinPolicy& pol, const Dataset& data, const TrainConfig& cfg,
                         const MetricsSink& sink) {
  require(data.meta.arms == 2, "twin policy expects a bimanual dataset");
  return train_impl(pol, data, cfg, sink);
}

// ---- evaluation -------------------------------------------------------

RolloutFactory make_rollout(const SinglePolicy& pol) {
  SamplerConfig sc{pol.cfg.sample_steps, 0.999f};
  return [&pol, sc](const SimEnv&) -> RolloutPolicy {
    return [&pol, sc](const SimEnv& env, Rng& rng) {
      return predict_chunk(pol, env.observe_single(), sc, rng);
    };
  };
}

RolloutFactory make_rollout(const TwinPolicy& pol) {
  SamplerConfig sc{pol.cfg.sample_steps, 0.999f};
  return [&pol, sc](const SimEnv&) -> RolloutPolicy {
    return [&pol, sc](const SimEnv& env, Rng& rng) {
      return predict_chunk(pol, env.observe_twin(), sc, rng);
    };
  };
}

RolloutFactory make_expert_rollout() {
  return [](const SimEnv& env0) -> RolloutPolicy {
    auto ctrl = std::make_shared<ExpertController>(env0.task(), env0.state(), 1);
    return [ctrl](const SimEnv& env, Rng&) -> ActionChunk {
      // one second of commands from a deterministic mirror of the env
      const TaskSpec& task = env.task();
      int steps = static_cast<int>(task.env_hz + 0.5f);
      SimEnv mirror(task, 0);
      mirror.mutable_state() = env.state();
      ActionChunk chunk(steps, env.arms() * kPoseDim, task.env_hz);
      for (int t = 0; t < steps; ++t) {
        std::vector<float> act = ctrl->tick(mirror.state());
        std::copy(act.begin(), act.end(), chunk.row(t));
        mirror.step(act.data(), static_cast<int>(act.size()));
      }
      return chunk;
    };
  };
}

EvalResult evaluate(const RolloutFactory& factory, const TaskSpec& task, int n_rollouts,
                    std::uint64_t seed, int horizon, int exec_prefix) {
  require(n_rollouts >= 1, "need at least one rollout");
  std::vector<std::uint64_t> seeds(n_rollouts);
  for (int i = 0; i < n_rollouts; ++i) seeds[i] = seed * 1000003ull + i;
  return evaluate_seeds(factory, task, seeds, seed, horizon, exec_prefix);
}

EvalResult evaluate_seeds(const RolloutFactory& factory, const TaskSpec& task,
                          const std::vector<std::uint64_t>& episode_seeds, std::uint64_t noise_seed,
                          int horizon, int exec_prefix) {
  require(!episode_seeds.empty(), "need at least one rollout");
  EvalResult res;
  res.episodes.resize(episode_seeds.size());
  Rng root = Rng(noise_seed).split("eval");
  parallel_for(episode_seeds.size(), [&](std::size_t i) {
    std::uint64_t ep_seed = episode_seeds[i];
    SimEnv env(task, ep_seed);
    RolloutPolicy policy = factory(env);
    Rng rng = root.split(i);
    EpisodeLog log;
    log.seed = ep_seed;
    int steps = 0;
    while (steps < horizon && !env.succeeded()) {
      ActionChunk chunk = policy(env, rng);
      ActionChunk exec = chunk.frequency == task.env_hz ? chunk : resample_chunk(chunk, task.env_hz);
      int prefix = exec_prefix > 0 ? std::min(exec_prefix, exec.T) : exec.T;
      for (int t = 0; t < prefix && steps < horizon; ++t) {
        env.step(exec.row(t), exec.D);
        ++steps;
        if (env.succeeded()) break;
      }
    }
    log.success = env.succeeded();
    log.steps = steps;
    res.episodes[i] = log;
  });
  int ok = 0;
  for (const auto& e : res.episodes) ok += e.success ? 1 : 0;
  res.success_rate = static_cast<double>(ok) / static_cast<double>(episode_seeds.size());
  return res;
}

}  // namespace twinflow
