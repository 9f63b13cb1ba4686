#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "stagehand/environment.hpp"

namespace stagehand {

struct EvalStep {
  std::array<double, 2> command_xy{};
  std::array<double, 2> local_vel_xy{};
  /// Per foot.
  std::vector<double> air_time;
  /// Per foot; 1 on the touchdown step that ends a swing.
  std::vector<double> swing;
  double command_norm = 0.0;
};

struct EvalEpisode {
  /// One entry per survived step, so T_i = steps.size().
  std::vector<EvalStep> steps;
};

struct EvalBatch {
  std::vector<EvalEpisode> episodes;
  long t_max = 0;
};

struct ScoreTriple {
  double survival = 0.0;
  double lin_vel = 0.0;
  double air_time = 0.0;

  friend bool operator==(const ScoreTriple&, const ScoreTriple&) = default;
};

/// Throws INVALID_ARGUMENT unless N >= 1 and 1 <= T_i <= t_max.
void check_batch(const EvalBatch& batch);

/// (1/N) sum_i T_i / T_max.
double survival_score(const EvalBatch& batch);
/// (1/N) sum_i (1/T_max) sum_t exp(-|v_cmd - v_loc|^2 / (2 sigma^2)).
double lin_vel_tracking_score(const EvalBatch& batch, double sigma = 0.1);
/// (1/N) sum_i (1/T_i) sum_t [nu > nu_thresh] sum_feet (a - lambda) c. Not clamped.
double feet_air_time_score(const EvalBatch& batch, double lambda = 0.2, double nu_thresh = 0.05);
ScoreTriple score(const EvalBatch& batch);

/// (x - mean) / std with the population std. Throws ZERO_VARIANCE, or
/// INVALID_ARGUMENT for fewer than two samples.
std::vector<double> zscore_normalize(std::span<const double> series);

/// Groups trace steps by episode (in first-seen order). Reads command,
/// local_vel, feet_air_time, first_foot_contact and command_norm. When t_max is
/// 0 the longest episode length is used.
EvalBatch eval_batch_from_trace(const std::vector<TraceStep>& trace, long t_max = 0);
EvalStep eval_step_from_bindings(const Bindings& bindings);

std::string scores_to_json(const ScoreTriple& scores);
ScoreTriple scores_from_json(const std::string& text);

}  // namespace stagehand
