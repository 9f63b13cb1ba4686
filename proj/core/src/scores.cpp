#include "stagehand/scores.hpp"

#include <cmath>
#include <map>
#include <nlohmann/json.hpp>

namespace stagehand {

void check_batch(const EvalBatch& batch) {
  if (batch.episodes.empty()) throw Error(ErrorCode::InvalidArgument, "evaluation batch has no episodes");
  if (batch.t_max < 1) throw Error(ErrorCode::InvalidArgument, "t_max must be at least 1");
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    const auto t = static_cast<long>(batch.episodes[i].steps.size());
    if (t < 1 || t > batch.t_max) {
      throw Error(ErrorCode::InvalidArgument, "episode " + std::to_string(i) + " has " + std::to_string(t) +
                                                  " steps; expected 1.." + std::to_string(batch.t_max));
    }
  }
}

double survival_score(const EvalBatch& batch) {
  check_batch(batch);
  double total = 0.0;
  for (const auto& ep : batch.episodes) total += static_cast<double>(ep.steps.size()) / static_cast<double>(batch.t_max);
  return total / static_cast<double>(batch.episodes.size());
}

double lin_vel_tracking_score(const EvalBatch& batch, double sigma) {
  check_batch(batch);
  if (!(sigma > 0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  const double denom = 2.0 * sigma * sigma;
  double total = 0.0;
  for (const auto& ep : batch.episodes) {
    double sum = 0.0;
    for (const auto& s : ep.steps) {
      const double dx = s.command_xy[0] - s.local_vel_xy[0];
      const double dy = s.command_xy[1] - s.local_vel_xy[1];
      sum += std::exp(-(dx * dx + dy * dy) / denom);
    }
    total += sum / static_cast<double>(batch.t_max);
  }
  return total / static_cast<double>(batch.episodes.size());
}

double feet_air_time_score(const EvalBatch& batch, double lambda, double nu_thresh) {
  check_batch(batch);
  if (lambda < 0) throw Error(ErrorCode::InvalidArgument, "lambda must be non-negative");
  double total = 0.0;
  for (const auto& ep : batch.episodes) {
    double sum = 0.0;
    for (const auto& s : ep.steps) {
      if (!(s.command_norm > nu_thresh)) continue;
      if (s.air_time.size() != s.swing.size()) {
        throw Error(ErrorCode::LengthMismatch, "air_time and swing must have one entry per foot");
      }
      for (std::size_t f = 0; f < s.air_time.size(); ++f) sum += (s.air_time[f] - lambda) * s.swing[f];
    }
    total += sum / static_cast<double>(ep.steps.size());
  }
  return total / static_cast<double>(batch.episodes.size());
}

ScoreTriple score(const EvalBatch& batch) {
  return {survival_score(batch), lin_vel_tracking_score(batch), feet_air_time_score(batch)};
}

std::vector<double> zscore_normalize(std::span<const double> series) {
  if (series.size() < 2) throw Error(ErrorCode::InvalidArgument, "z-score needs at least two samples");
  double mean = 0.0;
  for (double x : series) mean += x;
  mean /= static_cast<double>(series.size());
  double var = 0.0;
  for (double x : series) var += (x - mean) * (x - mean);
  var /= static_cast<double>(series.size());
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::fabs(mean)))) throw Error(ErrorCode::ZeroVariance, "series is constant");
  std::vector<double> out;
  out.reserve(series.size());
  for (double x : series) out.push_back((x - mean) / sd);
  return out;
}

namespace {

const Tensor& binding(const Bindings& b, const char* name) {
  const auto it = b.find(name);
  if (it == b.end()) throw Error(ErrorCode::TraceFormatError, std::string("trace step lacks '") + name + "'");
  return it->second;
}

std::vector<double> flat(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

EvalStep eval_step_from_bindings(const Bindings& bindings) {
  EvalStep s;
  const Tensor& cmd = binding(bindings, "command");
  const Tensor& vel = binding(bindings, "local_vel");
  if (cmd.size() < 2 || vel.size() < 2) throw Error(ErrorCode::TraceFormatError, "command and local_vel need 2+ entries");
  s.command_xy = {cmd[0], cmd[1]};
  s.local_vel_xy = {vel[0], vel[1]};
  s.air_time = flat(binding(bindings, "feet_air_time"));
  s.swing = flat(binding(bindings, "first_foot_contact"));
  s.command_norm = binding(bindings, "command_norm").item();
  return s;
}

EvalBatch eval_batch_from_trace(const std::vector<TraceStep>& trace, long t_max) {
  std::map<long, std::size_t> slot;
  EvalBatch batch;
  for (const auto& step : trace) {
    auto [it, inserted] = slot.emplace(step.episode, batch.episodes.size());
    if (inserted) batch.episodes.emplace_back();
    batch.episodes[it->second].steps.push_back(eval_step_from_bindings(step.bindings));
  }
  long longest = 0;
  for (const auto& ep : batch.episodes) longest = std::max(longest, static_cast<long>(ep.steps.size()));
  batch.t_max = t_max > 0 ? t_max : longest;
  check_batch(batch);
  return batch;
}

std::string scores_to_json(const ScoreTriple& scores) {
  nlohmann::json j = {{"survival", scores.survival}, {"lin_vel_tracking", scores.lin_vel},
                      {"feet_air_time", scores.air_time}};
  return j.dump(2);
}

ScoreTriple scores_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    return {j.at("survival").get<double>(), j.at("lin_vel_tracking").get<double>(),
            j.at("feet_air_time").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scores: ") + e.what());
  }
}

}  // namespace stagehand
