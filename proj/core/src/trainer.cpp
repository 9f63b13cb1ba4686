#include "stagehand/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "stagehand/environment.hpp"
#include "stagehand/random.hpp"

namespace stagehand {

TrainSettings resolve_settings(const ConfigSpec& config, bool paper_scale) {
  TrainSettings s{config.environment, config.trainer, config.network};
  if (paper_scale) return s;
  auto& t = s.trainer;
  t.num_envs = std::min(t.num_envs, kDeskEnvs);
  t.num_timesteps = std::min(t.num_timesteps, kDeskTimesteps);
  t.episode_length = std::min(t.episode_length, kDeskEpisodeLength);
  t.batch_size = std::min(t.batch_size, kDeskBatchSize);
  t.num_minibatches = std::min(t.num_minibatches, kDeskMinibatches);
  while (t.num_envs > 1 && (t.batch_size * t.num_minibatches) % t.num_envs != 0) t.num_envs /= 2;
  s.network.policy_hidden_layer_sizes = {64, 64};
  s.network.value_hidden_layer_sizes = {64, 64};
  return s;
}

void apply_overrides(TrainSettings& settings, const TrainOverrides& overrides) {
  auto& t = settings.trainer;
  if (overrides.num_timesteps) t.num_timesteps = *overrides.num_timesteps;
  if (overrides.num_evals) t.num_evals = *overrides.num_evals;
  if (overrides.episode_length) t.episode_length = *overrides.episode_length;
  if (overrides.num_envs) {
    t.num_envs = *overrides.num_envs;
    while (t.num_envs > 1 && (t.batch_size * t.num_minibatches) % t.num_envs != 0) t.num_envs /= 2;
  }
}

double EvalRecord::at(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) throw Error(ErrorCode::InvalidArgument, "metrics record has no '" + key + "'");
  return it->second;
}

std::string metrics_line(const EvalRecord& record) {
  nlohmann::json j = nlohmann::json::object();
  j["step"] = record.step;
  for (const auto& [k, v] : record.values) j[k] = v;
  return j.dump();
}

EvalRecord parse_metrics_line(const std::string& line) {
  EvalRecord r;
  try {
    const auto j = nlohmann::json::parse(line);
    for (const auto& [k, v] : j.items()) {
      if (k == "step") {
        r.step = v.get<long long>();
      } else {
        r.values[k] = v.get<double>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("metrics line: ") + e.what());
  }
  return r;
}

std::vector<EvalRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_metrics_line(line));
  }
  return out;
}

namespace {

enum Salt : std::uint64_t { kInitSalt = 0x1417, kEpisodeSalt = 0xE915, kEvalSalt = 0xE7A1, kSceneSalt = 0x5CE7 };

std::vector<WalkerEnv> make_envs(const TrainSettings& s, const RandomizeSpec* randomize, std::uint64_t seed,
                                 long count) {
  std::vector<WalkerEnv> envs;
  envs.reserve(static_cast<std::size_t>(count));
  const std::uint64_t scene_seed = hash_words({seed, kSceneSalt});
  for (long e = 0; e < count; ++e) {
    SceneParameters scene = randomize ? resample_per_env(*randomize, desk_nominal_scene(), scene_seed,
                                                         static_cast<std::uint64_t>(e))
                                      : desk_nominal_scene();
    envs.emplace_back(s.environment, s.trainer.episode_length, std::move(scene));
  }
  return envs;
}

Eigen::MatrixXd observe_all(const std::vector<WalkerEnv>& envs, const std::vector<EnvState>& states) {
  Eigen::MatrixXd obs(static_cast<long>(kObservationDim), static_cast<long>(envs.size()));
  for (std::size_t e = 0; e < envs.size(); ++e) {
    envs[e].observe(states[e], std::span<double>(obs.col(static_cast<long>(e)).data(), kObservationDim));
  }
  return obs;
}

void check_resume(const PolicyParams& p, const TrainSettings& s) {
  std::vector<long> ps{static_cast<long>(kObservationDim)};
  ps.insert(ps.end(), s.network.policy_hidden_layer_sizes.begin(), s.network.policy_hidden_layer_sizes.end());
  ps.push_back(static_cast<long>(kActionDim));
  std::vector<long> vs{static_cast<long>(kObservationDim)};
  vs.insert(vs.end(), s.network.value_hidden_layer_sizes.begin(), s.network.value_hidden_layer_sizes.end());
  vs.push_back(1);
  auto show = [](const std::vector<long>& v) {
    std::string out;
    for (long x : v) out += (out.empty() ? "" : "x") + std::to_string(x);
    return out;
  };
  if (p.policy.sizes() != ps || p.value.sizes() != vs ||
      p.policy.act != activation_from_name(s.network.activation)) {
    throw Error(ErrorCode::CheckpointShapeMismatch, "checkpoint network " + show(p.policy.sizes()) + "/" +
                                                        show(p.value.sizes()) + " does not match config " +
                                                        show(ps) + "/" + show(vs));
  }
}

struct Transition {
  Eigen::MatrixXd obs;       // obs_dim x (N * T)
  Eigen::MatrixXd pre_tanh;  // act_dim x (N * T)
  Eigen::VectorXd log_prob;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

}  // namespace

EvalBatch evaluate_policy(const PolicyParams& params, const TrainSettings& settings, const RewardProgram& reward,
                          const RandomizeSpec* randomize, std::uint64_t seed, std::map<std::string, double>* totals) {
  const long n = settings.trainer.num_envs;
  const std::vector<WalkerEnv> envs = make_envs(settings, randomize, seed, n);
  std::vector<EnvState> states;
  for (long e = 0; e < n; ++e) states.push_back(envs[e].reset(hash_words({seed, kEvalSalt, static_cast<std::uint64_t>(e)})));

  EvalBatch batch;
  batch.t_max = settings.trainer.episode_length;
  batch.episodes.resize(static_cast<std::size_t>(n));
  std::vector<double> episode_reward(static_cast<std::size_t>(n), 0.0);
  std::vector<std::vector<double>> term_sums(static_cast<std::size_t>(n), std::vector<double>(reward.terms.size(), 0.0));
  std::vector<bool> active(static_cast<std::size_t>(n), true);
  Bindings bindings;
  std::vector<double> action(kActionDim);
  long live = n;
  while (live > 0) {
    const Eigen::MatrixXd obs = observe_all(envs, states);
    const Eigen::MatrixXd mean_action = params.policy.forward(params.prepare(obs)).array().tanh().matrix();
    for (long e = 0; e < n; ++e) {
      if (!active[e]) continue;
      for (std::size_t j = 0; j < kActionDim; ++j) action[j] = mean_action(static_cast<long>(j), e);
      for (long r = 0; r < settings.trainer.action_repeat && !states[e].done; ++r) {
        envs[e].step(states[e], action);
        envs[e].export_bindings(states[e], bindings);
        const RewardValues values = eval_total(reward, bindings);
        episode_reward[e] += values.total;
        for (std::size_t k = 0; k < values.per_term.size(); ++k) term_sums[e][k] += values.per_term[k];
        batch.episodes[e].steps.push_back(eval_step_from_bindings(bindings));
      }
      if (states[e].done) {
        active[e] = false;
        --live;
      }
    }
  }
  if (totals) {
    double rew = 0.0, len = 0.0;
    std::vector<double> terms(reward.terms.size(), 0.0);
    for (long e = 0; e < n; ++e) {
      rew += episode_reward[e];
      len += static_cast<double>(states[e].step);
      for (std::size_t k = 0; k < terms.size(); ++k) terms[k] += term_sums[e][k];
    }
    (*totals)["eval/episode_reward"] = rew / static_cast<double>(n);
    (*totals)["eval/episode_length"] = len / static_cast<double>(n);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      (*totals)["eval/" + reward.terms[k].name] = terms[k] / static_cast<double>(n);
    }
  }
  return batch;
}

StageResult train_settings(const TrainSettings& settings, const RewardProgram& reward, const RandomizeSpec* randomize,
                           long stage_index, const TrainOptions& options) {
  const TrainerConfig& tc = settings.trainer;
  const std::uint64_t seed = options.seed.value_or(tc.seed);
  const long n_envs = tc.num_envs;
  const long unroll = tc.unroll_length;
  if (n_envs < 1 || unroll < 1 || tc.num_minibatches < 1 || tc.batch_size < 1 || tc.num_evals < 1) {
    throw Error(ErrorCode::InvalidArgument, "trainer sizes must be positive");
  }
  const long trajectories = tc.batch_size * tc.num_minibatches;
  if (trajectories % n_envs != 0) {
    throw Error(ErrorCode::InvalidArgument, "batch_size * num_minibatches must be a multiple of num_envs");
  }
  const long unrolls_per_iter = trajectories / n_envs;
  const long long steps_per_iter = static_cast<long long>(trajectories) * unroll * tc.action_repeat;
  const long long iterations = std::max<long long>(1, (tc.num_timesteps + steps_per_iter - 1) / steps_per_iter);

  TrainRng rng(hash_words({seed, kInitSalt}));
  const Activation act = activation_from_name(settings.network.activation);
  PolicyParams params;
  if (options.resume) {
    check_resume(options.resume->params, settings);
    params = options.resume->params;
  } else {
    params = make_policy(static_cast<long>(kObservationDim), static_cast<long>(kActionDim),
                         settings.network.policy_hidden_layer_sizes, settings.network.value_hidden_layer_sizes, act,
                         tc.normalize_observations, rng);
  }
  params.normalize_observations = tc.normalize_observations;
  Adam adam(flatten(params).size(), tc.learning_rate);
  const LossParams loss_params{tc.clipping_epsilon, tc.value_loss_coef, tc.entropy_cost, true};

  const std::vector<WalkerEnv> envs = make_envs(settings, randomize, seed, n_envs);
  std::vector<EnvState> states;
  std::vector<std::uint64_t> episode_count(static_cast<std::size_t>(n_envs), 0);
  auto reset_env = [&](long e) {
    states[e] = envs[e].reset(hash_words({seed, kEpisodeSalt, static_cast<std::uint64_t>(e), episode_count[e]++}));
  };
  states.resize(static_cast<std::size_t>(n_envs));
  for (long e = 0; e < n_envs; ++e) reset_env(e);

  // Evaluations fall before iteration k * iterations / (num_evals - 1); the last follows training.
  std::vector<long long> eval_at;
  if (tc.num_evals == 1) {
    eval_at.push_back(iterations);
  } else {
    for (long k = 0; k < tc.num_evals; ++k) eval_at.push_back(k * iterations / (tc.num_evals - 1));
  }

  StageResult result;
  result.stage = stage_index;
  result.timestep_budget = tc.num_timesteps;
  LossTerms last_loss;
  std::size_t next_eval = 0;
  long long env_steps = 0;
  auto run_evals = [&](long long iteration) {
    while (next_eval < eval_at.size() && eval_at[next_eval] == iteration) {
      EvalRecord record;
      record.step = env_steps;
      result.final_eval = evaluate_policy(params, settings, reward, randomize, seed, &record.values);
      record.values["loss/policy"] = last_loss.policy;
      record.values["loss/value"] = last_loss.value;
      record.values["loss/entropy"] = last_loss.entropy;
      result.metrics.push_back(record);
      if (options.on_eval) options.on_eval(record);
      ++next_eval;
    }
  };

  Bindings bindings;
  std::vector<double> action(kActionDim);
  const long samples = unrolls_per_iter * n_envs * unroll;
  for (long long it = 0; it < iterations; ++it) {
    run_evals(it);

    Transition tr;
    tr.obs.resize(static_cast<long>(kObservationDim), samples);
    tr.pre_tanh.resize(static_cast<long>(kActionDim), samples);
    tr.log_prob.resize(samples);
    tr.advantages.resize(samples);
    tr.returns.resize(samples);
    const Eigen::VectorXd sd = params.log_std.array().exp();

    for (long u = 0; u < unrolls_per_iter; ++u) {
      const long base = u * n_envs * unroll;
      Eigen::MatrixXd values_in(static_cast<long>(kObservationDim), n_envs * (unroll + 1));
      std::vector<double> rewards(static_cast<std::size_t>(n_envs * unroll));
      std::vector<double> dones(static_cast<std::size_t>(n_envs * unroll));
      for (long t = 0; t < unroll; ++t) {
        const Eigen::MatrixXd obs = observe_all(envs, states);
        const Eigen::MatrixXd mu = params.policy.forward(params.prepare(obs));
        Eigen::MatrixXd pre(mu.rows(), mu.cols());
        for (long e = 0; e < n_envs; ++e) {
          for (long j = 0; j < mu.rows(); ++j) pre(j, e) = mu(j, e) + sd[j] * rng.normal();
        }
        const Eigen::VectorXd lp = gaussian_log_prob(pre, mu, params.log_std);
        for (long e = 0; e < n_envs; ++e) {
          // Sample layout: env-major within an unroll, so each env's steps are contiguous.
          const long col = base + e * unroll + t;
          tr.obs.col(col) = obs.col(e);
          tr.pre_tanh.col(col) = pre.col(e);
          tr.log_prob[col] = lp[e];
          values_in.col(e * (unroll + 1) + t) = obs.col(e);
          for (std::size_t j = 0; j < kActionDim; ++j) action[j] = std::tanh(pre(static_cast<long>(j), e));
          double r = 0.0;
          for (long rep = 0; rep < tc.action_repeat && !states[e].done; ++rep) {
            envs[e].step(states[e], action);
            envs[e].export_bindings(states[e], bindings);
            r += eval_total(reward, bindings).total;
            ++env_steps;
          }
          rewards[e * unroll + t] = r * tc.reward_scaling;
          dones[e * unroll + t] = states[e].done ? 1.0 : 0.0;
          if (states[e].done) reset_env(e);
        }
      }
      const Eigen::MatrixXd last_obs = observe_all(envs, states);
      for (long e = 0; e < n_envs; ++e) values_in.col(e * (unroll + 1) + unroll) = last_obs.col(e);
      const Eigen::MatrixXd v = params.value.forward(params.prepare(values_in));
      for (long e = 0; e < n_envs; ++e) {
        const std::span<const double> r(rewards.data() + e * unroll, static_cast<std::size_t>(unroll));
        const std::span<const double> d(dones.data() + e * unroll, static_cast<std::size_t>(unroll));
        const std::span<const double> vals(v.data() + e * (unroll + 1), static_cast<std::size_t>(unroll + 1));
        const GaeResult g = gae(r, vals, d, tc.discounting, tc.gae_lambda);
        for (long t = 0; t < unroll; ++t) {
          tr.advantages[base + e * unroll + t] = g.advantages[t];
          tr.returns[base + e * unroll + t] = g.returns[t];
        }
      }
    }
    if (params.normalize_observations) params.obs_stats.update(tr.obs);

    const long mb_size = samples / tc.num_minibatches;
    std::vector<long> order(static_cast<std::size_t>(samples));
    LossTerms sum;
    long count = 0;
    for (long epoch = 0; epoch < tc.num_updates_per_batch; ++epoch) {
      for (long i = 0; i < samples; ++i) order[i] = i;
      for (long i = samples - 1; i > 0; --i) std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
      for (long m = 0; m < tc.num_minibatches; ++m) {
        PpoBatch mb;
        mb.obs.resize(static_cast<long>(kObservationDim), mb_size);
        mb.pre_tanh.resize(static_cast<long>(kActionDim), mb_size);
        mb.old_log_prob.resize(mb_size);
        mb.advantages.resize(mb_size);
        mb.returns.resize(mb_size);
        for (long i = 0; i < mb_size; ++i) {
          const long s = order[m * mb_size + i];
          mb.obs.col(i) = tr.obs.col(s);
          mb.pre_tanh.col(i) = tr.pre_tanh.col(s);
          mb.old_log_prob[i] = tr.log_prob[s];
          mb.advantages[i] = tr.advantages[s];
          mb.returns[i] = tr.returns[s];
        }
        Gradients grads = zero_gradients(params);
        const LossTerms lt = ppo_loss(params, mb, loss_params, &grads);
        Eigen::VectorXd flat = flatten(params);
        adam.step(flat, flatten(grads), tc.max_grad_norm.value_or(0.0));
        unflatten(flat, params);
        round_to_float32(params);
        sum.total += lt.total;
        sum.policy += lt.policy;
        sum.value += lt.value;
        sum.entropy += lt.entropy;
        ++count;
      }
    }
    const double inv = 1.0 / static_cast<double>(std::max(count, 1L));
    last_loss = {sum.total * inv, sum.policy * inv, sum.value * inv, sum.entropy * inv};
  }
  run_evals(iterations);

  result.env_steps = env_steps;
  result.checkpoint.params = params;
  result.checkpoint.env_steps = static_cast<std::uint64_t>(env_steps);
  result.checkpoint.rng_seed = rng.seed();
  result.checkpoint.rng_counter = rng.counter();
  result.scores = score(result.final_eval);
  return result;
}

StageResult train_stage(const StagePlan& stage, const TrainOptions& options) {
  if (stage.ref.resume_from_checkpoint && !options.resume) {
    throw Error(ErrorCode::InvalidArgument, "stage " + std::to_string(stage.ref.index) + " resumes but no checkpoint was given");
  }
  if (!stage.ref.resume_from_checkpoint && options.resume) {
    throw Error(ErrorCode::InvalidArgument, "stage " + std::to_string(stage.ref.index) + " starts fresh but a checkpoint was given");
  }
  TrainSettings settings = resolve_settings(stage.config, options.paper_scale);
  apply_overrides(settings, options.overrides);
  const RandomizeSpec* randomize = stage.config.randomization.randomize ? &stage.randomize : nullptr;
  return train_settings(settings, stage.reward, randomize, stage.ref.index, options);
}

}  // namespace stagehand
