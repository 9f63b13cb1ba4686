#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stagehand/error.hpp"

namespace stagehand {

/// Counter-based generator; its whole state is (seed, counter), so it
/// serializes exactly.
class TrainRng {
 public:
  TrainRng() = default;
  explicit TrainRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  double uniform();
  double normal();
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  void restore(std::uint64_t seed, std::uint64_t counter) {
    seed_ = seed;
    counter_ = counter;
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

enum class Activation { swish, tanh, relu, elu };

/// "silu" is accepted as another name for swish. Throws INVALID_ARGUMENT.
Activation activation_from_name(const std::string& name);
std::string_view activation_name(Activation act) noexcept;

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

/// Fully connected network; hidden layers use `act`, the output is linear.
/// Inputs and outputs hold one sample per column.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  };

  Mlp() = default;
  /// `sizes` is {in, hidden..., out}. Weights are uniform in +-sqrt(3/fan_in)
  /// times `output_scale` for the last layer; biases start at zero.
  Mlp(const std::vector<long>& sizes, Activation act, TrainRng& rng, double output_scale = 1.0);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const;
  /// Accumulates parameter gradients for dL/d(output) = `d_out` into `grads`
  /// (shaped like `layers`, zero-initialized by the caller).
  void backward(const Cache& cache, const Eigen::MatrixXd& d_out, std::vector<DenseLayer>& grads) const;

  std::vector<long> sizes() const;
  std::vector<DenseLayer> zero_like() const;

  std::vector<DenseLayer> layers;
  Activation act = Activation::swish;
};

/// Running mean and variance over observation columns (Chan et al. merge).
struct RunningStats {
  double count = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd m2;

  static constexpr double kVarianceFloor = 1e-6;

  explicit RunningStats(long dim = 0) : mean(Eigen::VectorXd::Zero(dim)), m2(Eigen::VectorXd::Zero(dim)) {}
  void update(const Eigen::MatrixXd& batch);
  /// Population variance, floored at kVarianceFloor; 1 before any update.
  Eigen::VectorXd variance() const;
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const;
};

/// pi_theta and V: squashed diagonal Gaussian policy (action = tanh(u),
/// u ~ N(mu(x), exp(log_std)^2)) plus a value network.
struct PolicyParams {
  Mlp policy;
  Mlp value;
  Eigen::VectorXd log_std;
  RunningStats obs_stats;
  bool normalize_observations = true;

  long obs_dim() const;
  long action_dim() const;
  Eigen::MatrixXd prepare(const Eigen::MatrixXd& obs) const;
};

PolicyParams make_policy(long obs_dim, long action_dim, const std::vector<long>& policy_hidden,
                         const std::vector<long>& value_hidden, Activation act, bool normalize_observations,
                         TrainRng& rng, double init_log_std = -0.5);

/// Log-density of pre-squash actions `u` (one sample per column) under N(mu, exp(log_std)^2).
/// The tanh Jacobian is omitted; it cancels in every probability ratio PPO uses.
Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& u, const Eigen::MatrixXd& mu, const Eigen::VectorXd& log_std);
double gaussian_entropy(const Eigen::VectorXd& log_std);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t;
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}; returns = A + v.
/// `values` has T entries (bootstrap 0) or T+1 (last is the bootstrap value).
/// Throws LENGTH_MISMATCH, INVALID_ARGUMENT for gamma outside [0,1) or lambda outside [0,1].
GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> dones,
              double gamma, double lambda);

/// min(r A, clip(r, 1 - eps, 1 + eps) A).
double clipped_surrogate(double ratio, double advantage, double epsilon);

struct PpoBatch {
  Eigen::MatrixXd obs;             // raw observations, obs_dim x B
  Eigen::MatrixXd pre_tanh;        // sampled u, action_dim x B
  Eigen::VectorXd old_log_prob;    // under the behaviour policy
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

struct LossParams {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_cost = 0.0;
  /// Standardize advantages within the batch (mean 0, std 1).
  bool normalize_advantages = true;
};

struct LossTerms {
  double total = 0.0;
  double policy = 0.0;   // -mean surrogate
  double value = 0.0;    // mean (return - v)^2
  double entropy = 0.0;  // mean policy entropy
};

struct Gradients {
  std::vector<DenseLayer> policy;
  std::vector<DenseLayer> value;
  Eigen::VectorXd log_std;
};

Gradients zero_gradients(const PolicyParams& params);

/// total = policy + value_coef * value - entropy_cost * entropy. When `grads`
/// is given, it receives d(total)/d(params). Throws NON_FINITE_LOSS.
LossTerms ppo_loss(const PolicyParams& params, const PpoBatch& batch, const LossParams& lp, Gradients* grads = nullptr);

/// Parameters in a fixed order: policy layers (w row-major, then b), value
/// layers, log_std.
Eigen::VectorXd flatten(const PolicyParams& params);
void unflatten(const Eigen::VectorXd& flat, PolicyParams& params);
Eigen::VectorXd flatten(const Gradients& grads);

class Adam {
 public:
  Adam() = default;
  Adam(long size, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// One step on `params` given `grad`; optional global-norm clip first.
  void step(Eigen::VectorXd& params, Eigen::VectorXd grad, double max_grad_norm = 0.0);
  double learning_rate = 1e-3;

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

/// Rounds every network parameter to the nearest float32 so checkpoints
/// (which store float32) round-trip exactly.
void round_to_float32(PolicyParams& params);

struct Checkpoint {
  PolicyParams params;
  std::uint64_t env_steps = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
};

constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian: magic "SHCKPT\0\0", u32 version, u32 activation, u8 normalize,
/// layer-shape tables, float32 weights, float64 observation stats, u64 counters.
std::string checkpoint_bytes(const Checkpoint& checkpoint);
/// Throws VERSION_MISMATCH for an unknown magic/version, IO for truncation.
Checkpoint checkpoint_from_bytes(const std::string& bytes);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stagehand
