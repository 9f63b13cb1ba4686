#include "stagehand/ppo.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "stagehand/random.hpp"

namespace stagehand {

std::uint64_t TrainRng::next_u64() { return hash_words({seed_, counter_++}); }

double TrainRng::uniform() { return to_unit(next_u64()); }

double TrainRng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t TrainRng::below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

Activation activation_from_name(const std::string& name) {
  if (name == "swish" || name == "silu") return Activation::swish;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "elu") return Activation::elu;
  throw Error(ErrorCode::InvalidArgument, "unknown activation '" + name + "'");
}

std::string_view activation_name(Activation act) noexcept {
  switch (act) {
    case Activation::swish: return "swish";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
  }
  return "swish";
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::MatrixXd apply(Activation act, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::swish: return z.unaryExpr([](double x) { return x * sigmoid(x); });
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::relu: return z.cwiseMax(0.0);
    case Activation::elu: return z.unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
  }
  return z;
}

Eigen::MatrixXd derivative(Activation act, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::swish:
      return z.unaryExpr([](double x) {
        const double s = sigmoid(x);
        return s + x * s * (1.0 - s);
      });
    case Activation::tanh:
      return z.unaryExpr([](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
    case Activation::relu: return z.unaryExpr([](double x) { return x > 0 ? 1.0 : 0.0; });
    case Activation::elu: return z.unaryExpr([](double x) { return x > 0 ? 1.0 : std::exp(x); });
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 log(2 pi)

}  // namespace

Mlp::Mlp(const std::vector<long>& sizes, Activation activation, TrainRng& rng, double output_scale)
    : act(activation) {
  if (sizes.size() < 2) throw Error(ErrorCode::InvalidArgument, "an MLP needs input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const long in = sizes[l], out = sizes[l + 1];
    if (in <= 0 || out <= 0) throw Error(ErrorCode::InvalidArgument, "layer sizes must be positive");
    DenseLayer layer;
    const double bound = std::sqrt(3.0 / static_cast<double>(in)) * (l + 2 == sizes.size() ? output_scale : 1.0);
    layer.w.resize(out, in);
    for (long r = 0; r < out; ++r) {
      for (long c = 0; c < in; ++c) layer.w(r, c) = bound * (2.0 * rng.uniform() - 1.0);
    }
    layer.b = Eigen::VectorXd::Zero(out);
    layers.push_back(std::move(layer));
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::MatrixXd z = layers[l].w * h;
    z.colwise() += layers[l].b;
    h = l + 1 == layers.size() ? std::move(z) : apply(act, z);
  }
  return h;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache& cache) const {
  cache.inputs.clear();
  cache.pre.clear();
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd z = layers[l].w * h;
    z.colwise() += layers[l].b;
    h = l + 1 == layers.size() ? z : apply(act, z);
    cache.pre.push_back(std::move(z));
  }
  return h;
}

void Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_out, std::vector<DenseLayer>& grads) const {
  Eigen::MatrixXd g = d_out;
  for (std::size_t l = layers.size(); l-- > 0;) {
    Eigen::MatrixXd dz = l + 1 == layers.size() ? g : Eigen::MatrixXd(g.cwiseProduct(derivative(act, cache.pre[l])));
    grads[l].w.noalias() += dz * cache.inputs[l].transpose();
    grads[l].b += dz.rowwise().sum();
    if (l > 0) g = layers[l].w.transpose() * dz;
  }
}

std::vector<long> Mlp::sizes() const {
  std::vector<long> out;
  if (layers.empty()) return out;
  out.push_back(layers.front().w.cols());
  for (const auto& l : layers) out.push_back(l.w.rows());
  return out;
}

std::vector<DenseLayer> Mlp::zero_like() const {
  std::vector<DenseLayer> out;
  for (const auto& l : layers) {
    out.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()), Eigen::VectorXd::Zero(l.b.size())});
  }
  return out;
}

void RunningStats::update(const Eigen::MatrixXd& batch) {
  const double n = static_cast<double>(batch.cols());
  if (n == 0) return;
  const Eigen::VectorXd batch_mean = batch.rowwise().mean();
  const Eigen::VectorXd batch_m2 = (batch.colwise() - batch_mean).rowwise().squaredNorm();
  const double total = count + n;
  const Eigen::VectorXd delta = batch_mean - mean;
  mean += delta * (n / total);
  m2 += batch_m2 + delta.cwiseProduct(delta) * (count * n / total);
  count = total;
}

Eigen::VectorXd RunningStats::variance() const {
  if (count <= 0) return Eigen::VectorXd::Ones(mean.size());
  return (m2 / count).cwiseMax(kVarianceFloor);
}

Eigen::MatrixXd RunningStats::normalize(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd inv_sd = variance().cwiseSqrt().cwiseInverse();
  return (x.colwise() - mean).array().colwise() * inv_sd.array();
}

long PolicyParams::obs_dim() const { return policy.layers.empty() ? 0 : policy.layers.front().w.cols(); }
long PolicyParams::action_dim() const { return log_std.size(); }

Eigen::MatrixXd PolicyParams::prepare(const Eigen::MatrixXd& obs) const {
  return normalize_observations ? obs_stats.normalize(obs) : obs;
}

PolicyParams make_policy(long obs_dim, long action_dim, const std::vector<long>& policy_hidden,
                         const std::vector<long>& value_hidden, Activation act, bool normalize_observations,
                         TrainRng& rng, double init_log_std) {
  std::vector<long> ps{obs_dim};
  ps.insert(ps.end(), policy_hidden.begin(), policy_hidden.end());
  ps.push_back(action_dim);
  std::vector<long> vs{obs_dim};
  vs.insert(vs.end(), value_hidden.begin(), value_hidden.end());
  vs.push_back(1);
  PolicyParams p;
  p.policy = Mlp(ps, act, rng, 0.1);
  p.value = Mlp(vs, act, rng, 1.0);
  p.log_std = Eigen::VectorXd::Constant(action_dim, init_log_std);
  p.obs_stats = RunningStats(obs_dim);
  p.normalize_observations = normalize_observations;
  round_to_float32(p);
  return p;
}

Eigen::VectorXd gaussian_log_prob(const Eigen::MatrixXd& u, const Eigen::MatrixXd& mu, const Eigen::VectorXd& log_std) {
  const Eigen::VectorXd inv_var = (-2.0 * log_std).array().exp();
  const Eigen::MatrixXd diff = u - mu;
  const Eigen::VectorXd quad = (diff.array().square().colwise() * inv_var.array()).colwise().sum().transpose();
  const double norm = log_std.sum() + kHalfLog2Pi * static_cast<double>(log_std.size());
  return (-0.5 * quad).array() - norm;
}

double gaussian_entropy(const Eigen::VectorXd& log_std) {
  return log_std.sum() + (0.5 + kHalfLog2Pi) * static_cast<double>(log_std.size());
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values, std::span<const double> dones,
              double gamma, double lambda) {
  const std::size_t t_len = rewards.size();
  if (dones.size() != t_len || (values.size() != t_len && values.size() != t_len + 1)) {
    throw Error(ErrorCode::LengthMismatch, "gae needs T rewards, T dones and T or T+1 values");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be in [0, 1]");
  GaeResult out;
  out.advantages.assign(t_len, 0.0);
  out.returns.assign(t_len, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = t_len; t-- > 0;) {
    const double next_value = t + 1 < values.size() ? values[t + 1] : 0.0;
    const double live = 1.0 - dones[t];
    const double delta = rewards[t] + gamma * next_value * live - values[t];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages[t] = next_adv;
    out.returns[t] = next_adv + values[t];
  }
  return out;
}

double clipped_surrogate(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

Gradients zero_gradients(const PolicyParams& params) {
  return {params.policy.zero_like(), params.value.zero_like(), Eigen::VectorXd::Zero(params.log_std.size())};
}

LossTerms ppo_loss(const PolicyParams& params, const PpoBatch& batch, const LossParams& lp, Gradients* grads) {
  const long n = batch.obs.cols();
  if (n == 0 || batch.pre_tanh.cols() != n || batch.old_log_prob.size() != n || batch.advantages.size() != n ||
      batch.returns.size() != n) {
    throw Error(ErrorCode::LengthMismatch, "PPO batch arrays disagree in length");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::MatrixXd x = params.prepare(batch.obs);

  Eigen::VectorXd adv = batch.advantages;
  if (lp.normalize_advantages) {
    const double mean = adv.mean();
    const double sd = std::sqrt((adv.array() - mean).square().mean());
    adv = (adv.array() - mean) / (sd + 1e-8);
  }

  Mlp::Cache pcache, vcache;
  const Eigen::MatrixXd mu = params.policy.forward(x, pcache);
  const Eigen::MatrixXd v = params.value.forward(x, vcache);
  const Eigen::VectorXd log_prob = gaussian_log_prob(batch.pre_tanh, mu, params.log_std);
  const Eigen::VectorXd ratio = (log_prob - batch.old_log_prob).array().exp();

  LossTerms terms;
  Eigen::VectorXd d_log_prob(n);
  for (long i = 0; i < n; ++i) {
    const double r = ratio[i], a = adv[i];
    const double unclipped = r * a;
    const double surrogate = clipped_surrogate(r, a, lp.clip_epsilon);
    terms.policy -= surrogate * inv_n;
    // The min picks the unclipped branch (gradient a) unless clipping binds.
    const double d_ratio = unclipped <= surrogate ? a : 0.0;
    d_log_prob[i] = -inv_n * d_ratio * r;
  }
  const Eigen::RowVectorXd value_err = v.row(0) - batch.returns.transpose();
  terms.value = value_err.squaredNorm() * inv_n;
  terms.entropy = gaussian_entropy(params.log_std);
  terms.total = terms.policy + lp.value_coef * terms.value - lp.entropy_cost * terms.entropy;
  if (!std::isfinite(terms.total)) throw Error(ErrorCode::NonFiniteLoss, "PPO loss is not finite");

  if (grads) {
    const Eigen::VectorXd inv_var = (-2.0 * params.log_std).array().exp();
    const Eigen::MatrixXd diff = batch.pre_tanh - mu;
    Eigen::MatrixXd d_mu = diff.array().colwise() * inv_var.array();
    d_mu.array().rowwise() *= d_log_prob.transpose().array();
    params.policy.backward(pcache, d_mu, grads->policy);
    const Eigen::MatrixXd z2 = diff.array().square().colwise() * inv_var.array();
    grads->log_std += (z2.array() - 1.0).matrix() * d_log_prob;
    grads->log_std.array() -= lp.entropy_cost;
    const Eigen::MatrixXd d_v = (2.0 * lp.value_coef * inv_n) * value_err;
    params.value.backward(vcache, d_v, grads->value);
  }
  return terms;
}

namespace {

template <class F>
void visit_layers(const std::vector<DenseLayer>& layers, F&& f) {
  for (const auto& l : layers) {
    for (long r = 0; r < l.w.rows(); ++r) {
      for (long c = 0; c < l.w.cols(); ++c) f(l.w(r, c));
    }
    for (long i = 0; i < l.b.size(); ++i) f(l.b[i]);
  }
}

template <class F>
void visit_layers_mut(std::vector<DenseLayer>& layers, F&& f) {
  for (auto& l : layers) {
    for (long r = 0; r < l.w.rows(); ++r) {
      for (long c = 0; c < l.w.cols(); ++c) f(l.w(r, c));
    }
    for (long i = 0; i < l.b.size(); ++i) f(l.b[i]);
  }
}

Eigen::VectorXd flatten_parts(const std::vector<DenseLayer>& p, const std::vector<DenseLayer>& v,
                              const Eigen::VectorXd& s) {
  std::vector<double> out;
  visit_layers(p, [&](double x) { out.push_back(x); });
  visit_layers(v, [&](double x) { out.push_back(x); });
  for (long i = 0; i < s.size(); ++i) out.push_back(s[i]);
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<long>(out.size()));
}

}  // namespace

Eigen::VectorXd flatten(const PolicyParams& params) {
  return flatten_parts(params.policy.layers, params.value.layers, params.log_std);
}

Eigen::VectorXd flatten(const Gradients& grads) { return flatten_parts(grads.policy, grads.value, grads.log_std); }

void unflatten(const Eigen::VectorXd& flat, PolicyParams& params) {
  long k = 0;
  auto take = [&](double& x) {
    if (k >= flat.size()) throw Error(ErrorCode::LengthMismatch, "flat parameter vector too short");
    x = flat[k++];
  };
  visit_layers_mut(params.policy.layers, take);
  visit_layers_mut(params.value.layers, take);
  for (long i = 0; i < params.log_std.size(); ++i) take(params.log_std[i]);
  if (k != flat.size()) throw Error(ErrorCode::LengthMismatch, "flat parameter vector too long");
}

Adam::Adam(long size, double lr, double beta1, double beta2, double eps)
    : learning_rate(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Eigen::VectorXd::Zero(size)),
      v_(Eigen::VectorXd::Zero(size)) {}

void Adam::step(Eigen::VectorXd& params, Eigen::VectorXd grad, double max_grad_norm) {
  if (grad.size() != m_.size() || params.size() != m_.size()) {
    throw Error(ErrorCode::LengthMismatch, "Adam state does not match the parameter count");
  }
  if (max_grad_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > max_grad_norm) grad *= max_grad_norm / norm;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

void round_to_float32(PolicyParams& params) {
  auto round = [](double& x) { x = static_cast<double>(static_cast<float>(x)); };
  visit_layers_mut(params.policy.layers, round);
  visit_layers_mut(params.value.layers, round);
  for (long i = 0; i < params.log_std.size(); ++i) round(params.log_std[i]);
}

// ---------------------------------------------------------------------------
// Checkpoint encoding

namespace {

constexpr char kMagic[8] = {'S', 'H', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
 public:
  template <class T>
  void put(T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out_.append(reinterpret_cast<const char*>(buf), sizeof(T));
  }
  void raw(const char* data, std::size_t n) { out_.append(data, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > in_.size()) throw Error(ErrorCode::Io, "checkpoint is truncated");
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }
  std::string_view raw(std::size_t n) {
    if (pos_ + n > in_.size()) throw Error(ErrorCode::Io, "checkpoint is truncated");
    std::string_view v(in_.data() + pos_, n);
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

void put_shapes(Writer& w, const Mlp& mlp) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mlp.layers.size()));
  for (const auto& l : mlp.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.w.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.w.cols()));
  }
}

Mlp get_shapes(Reader& r, Activation act) {
  Mlp mlp;
  mlp.act = act;
  const auto n = r.get<std::uint32_t>();
  if (n == 0 || n > 64) throw Error(ErrorCode::Io, "implausible layer count in checkpoint");
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) {
      throw Error(ErrorCode::Io, "implausible layer shape in checkpoint");
    }
    mlp.layers.push_back({Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows)});
  }
  return mlp;
}

}  // namespace

std::string checkpoint_bytes(const Checkpoint& ck) {
  const PolicyParams& p = ck.params;
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.policy.act));
  w.put<std::uint8_t>(p.normalize_observations ? 1 : 0);
  put_shapes(w, p.policy);
  put_shapes(w, p.value);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.log_std.size()));
  auto put_f32 = [&](double x) { w.put<float>(static_cast<float>(x)); };
  visit_layers(p.policy.layers, put_f32);
  visit_layers(p.value.layers, put_f32);
  for (long i = 0; i < p.log_std.size(); ++i) put_f32(p.log_std[i]);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.obs_stats.mean.size()));
  w.put<double>(p.obs_stats.count);
  for (long i = 0; i < p.obs_stats.mean.size(); ++i) w.put<double>(p.obs_stats.mean[i]);
  for (long i = 0; i < p.obs_stats.m2.size(); ++i) w.put<double>(p.obs_stats.m2[i]);
  w.put<std::uint64_t>(ck.env_steps);
  w.put<std::uint64_t>(ck.rng_seed);
  w.put<std::uint64_t>(ck.rng_counter);
  return w.take();
}

Checkpoint checkpoint_from_bytes(const std::string& bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::VersionMismatch, "not a stagehand checkpoint");
  }
  r.raw(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                               std::to_string(kCheckpointVersion));
  }
  const auto act_id = r.get<std::uint32_t>();
  if (act_id > static_cast<std::uint32_t>(Activation::elu)) throw Error(ErrorCode::Io, "unknown activation id");
  const auto act = static_cast<Activation>(act_id);
  Checkpoint ck;
  PolicyParams& p = ck.params;
  p.normalize_observations = r.get<std::uint8_t>() != 0;
  p.policy = get_shapes(r, act);
  p.value = get_shapes(r, act);
  const auto action_dim = r.get<std::uint32_t>();
  if (action_dim > (1u << 16)) throw Error(ErrorCode::Io, "implausible action size");
  p.log_std = Eigen::VectorXd::Zero(action_dim);
  auto get_f32 = [&](double& x) { x = static_cast<double>(r.get<float>()); };
  visit_layers_mut(p.policy.layers, get_f32);
  visit_layers_mut(p.value.layers, get_f32);
  for (long i = 0; i < p.log_std.size(); ++i) get_f32(p.log_std[i]);
  const auto obs_dim = r.get<std::uint32_t>();
  if (obs_dim > (1u << 16)) throw Error(ErrorCode::Io, "implausible observation size");
  p.obs_stats = RunningStats(obs_dim);
  p.obs_stats.count = r.get<double>();
  for (std::uint32_t i = 0; i < obs_dim; ++i) p.obs_stats.mean[i] = r.get<double>();
  for (std::uint32_t i = 0; i < obs_dim; ++i) p.obs_stats.m2[i] = r.get<double>();
  ck.env_steps = r.get<std::uint64_t>();
  ck.rng_seed = r.get<std::uint64_t>();
  ck.rng_counter = r.get<std::uint64_t>();
  if (!r.done()) throw Error(ErrorCode::Io, "trailing bytes after checkpoint");
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_bytes(buf.str());
}

}  // namespace stagehand
