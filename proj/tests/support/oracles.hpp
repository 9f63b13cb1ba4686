#pragma once

// Plain-loop reference implementations used by the tests. None of this calls
// into the library beyond reading tensor shapes and values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "stagehand/scores.hpp"
#include "stagehand/tensor.hpp"

namespace stagehand::oracle {

inline bool near_rel(double actual, double expected, double tol) {
  return std::fabs(actual - expected) <= tol * std::max(1.0, std::fabs(expected));
}

/// Value of `t` at the broadcast position `out_idx` (right-aligned, size-1 axes repeat).
inline double broadcast_at(const Tensor& t, const std::vector<std::size_t>& out_idx) {
  const auto& shape = t.shape();
  const std::size_t offset = out_idx.size() - shape.size();
  std::size_t flat = 0;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    const std::size_t i = shape[d] == 1 ? 0 : out_idx[offset + d];
    flat = flat * shape[d] + i;
  }
  return t[flat];
}

/// Nested-loop broadcast of `op` over two tensors with an explicitly given output shape.
template <class Op>
std::vector<double> broadcast_loop(const Tensor& a, const Tensor& b, const Tensor::Shape& out_shape, Op op) {
  std::size_t total = 1;
  for (auto n : out_shape) total *= n;
  std::vector<double> out(total);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      idx[d] = rem % out_shape[d];
      rem /= out_shape[d];
    }
    out[flat] = op(broadcast_at(a, idx), broadcast_at(b, idx));
  }
  return out;
}

inline Tensor random_tensor(std::mt19937_64& rng, const Tensor::Shape& shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

inline Tensor random_mask(std::mt19937_64& rng, const Tensor::Shape& shape) {
  std::bernoulli_distribution b(0.5);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = b(rng) ? 1.0 : 0.0;
  return Tensor(shape, std::move(v), DType::boolean);
}

/// Ragged batch: 1-6 episodes no longer than a random t_max in [1, 60].
inline EvalBatch random_eval_batch(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5), a(0.0, 0.6), nu(0.0, 0.1);
  std::bernoulli_distribution touch(0.2);
  EvalBatch batch;
  batch.t_max = 1 + static_cast<long>(rng() % 60);
  const std::size_t n = 1 + rng() % 6;
  for (std::size_t i = 0; i < n; ++i) {
    EvalEpisode ep;
    const long len = 1 + static_cast<long>(rng() % static_cast<std::uint64_t>(batch.t_max));
    for (long t = 0; t < len; ++t) {
      EvalStep s;
      s.command_xy = {u(rng), u(rng)};
      s.local_vel_xy = {u(rng), u(rng)};
      s.air_time = {a(rng), a(rng)};
      s.swing = {touch(rng) ? 1.0 : 0.0, touch(rng) ? 1.0 : 0.0};
      s.command_norm = nu(rng);
      ep.steps.push_back(s);
    }
    batch.episodes.push_back(std::move(ep));
  }
  return batch;
}

// Score formulas written directly from their definitions.

inline double survival(const EvalBatch& batch) {
  double acc = 0.0;
  for (const auto& ep : batch.episodes) acc += static_cast<double>(ep.steps.size()) / static_cast<double>(batch.t_max);
  return acc / static_cast<double>(batch.episodes.size());
}

inline double lin_vel(const EvalBatch& batch, double sigma) {
  double acc = 0.0;
  for (const auto& ep : batch.episodes) {
    double inner = 0.0;
    for (const auto& s : ep.steps) {
      const double dx = s.command_xy[0] - s.local_vel_xy[0];
      const double dy = s.command_xy[1] - s.local_vel_xy[1];
      inner += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
    acc += inner / static_cast<double>(batch.t_max);
  }
  return acc / static_cast<double>(batch.episodes.size());
}

inline double air_time(const EvalBatch& batch, double lambda, double nu) {
  double acc = 0.0;
  for (const auto& ep : batch.episodes) {
    double inner = 0.0;
    for (const auto& s : ep.steps) {
      if (!(s.command_norm > nu)) continue;
      for (std::size_t f = 0; f < s.air_time.size(); ++f) inner += (s.air_time[f] - lambda) * s.swing[f];
    }
    acc += inner / static_cast<double>(ep.steps.size());
  }
  return acc / static_cast<double>(batch.episodes.size());
}

/// Backward GAE recursion with a zero bootstrap value.
inline std::vector<double> gae_advantages(const std::vector<double>& r, const std::vector<double>& v,
                                          const std::vector<double>& done, double gamma, double lambda) {
  const std::size_t n = r.size();
  std::vector<double> adv(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_v = i + 1 < v.size() ? v[i + 1] : 0.0;
    const double delta = r[i] + gamma * next_v * (1.0 - done[i]) - v[i];
    next_adv = delta + gamma * lambda * (1.0 - done[i]) * next_adv;
    adv[i] = next_adv;
  }
  return adv;
}

}  // namespace stagehand::oracle
