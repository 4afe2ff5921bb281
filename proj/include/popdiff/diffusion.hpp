#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "popdiff/error.hpp"
#include "popdiff/ndarray.hpp"
#include "popdiff/network.hpp"
#include "popdiff/ops.hpp"
#include "popdiff/tape.hpp"

namespace popdiff {

struct DiffusionConfig {
  long steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  void validate() const {
    if (steps < 1) throw ConfigError("diffusion.steps must be >= 1");
    if (!(beta_start > 0.0)) throw ConfigError("diffusion.beta_start must be > 0");
    if (!(beta_end >= beta_start)) throw ConfigError("diffusion.beta_end must be >= beta_start");
    if (!(beta_end < 1.0)) throw ConfigError("diffusion.beta_end must be < 1");
  }

  friend bool operator==(const DiffusionConfig&, const DiffusionConfig&) = default;
};

inline nlohmann::json to_json(const DiffusionConfig& c) {
  return {{"steps", c.steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

/// Per-step quantities, 1-based: beta(t), alpha(t) = 1 - beta(t),
/// alpha_bar(t) = prod_{s<=t} alpha(s), sigma(t) = sqrt(beta(t)).
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    if (beta_.empty()) throw ConfigError("noise schedule needs at least one step");
    double prod = 1.0;
    for (double b : beta_) {
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("every beta must lie in (0, 1)");
      alpha_.push_back(1.0 - b);
      prod *= 1.0 - b;
      alpha_bar_.push_back(prod);
    }
  }

  long steps() const { return static_cast<long>(beta_.size()); }
  double beta(long t) const { return beta_.at(index(t)); }
  double alpha(long t) const { return alpha_.at(index(t)); }
  double alpha_bar(long t) const { return alpha_bar_.at(index(t)); }
  double sigma(long t) const { return std::sqrt(beta(t)); }

  void check_step(long t) const { (void)index(t); }

 private:
  std::size_t index(long t) const {
    if (t < 1 || t > steps()) {
      throw ShapeError("diffusion step " + std::to_string(t) + " outside [1, " +
                       std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

/// beta_t = beta_start + (t-1)(beta_end - beta_start)/(T-1); endpoints exact.
inline NoiseSchedule linear_schedule(const DiffusionConfig& config) {
  config.validate();
  const long T = config.steps;
  std::vector<double> betas(static_cast<std::size_t>(T), config.beta_start);
  if (T > 1) {
    const double step = (config.beta_end - config.beta_start) / static_cast<double>(T - 1);
    for (long t = 2; t < T; ++t) {
      betas[static_cast<std::size_t>(t - 1)] = config.beta_start + static_cast<double>(t - 1) * step;
    }
    betas.back() = config.beta_end;
  }
  return NoiseSchedule(std::move(betas));
}

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, per batch element.
template <typename T>
NdArray<T> q_sample(const NdArray<T>& x0, std::span<const long> steps, const NdArray<T>& eps,
                    const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " +
                     shape_str(eps.shape()));
  }
  if (x0.rank() == 0 || x0.dim(0) != steps.size()) {
    throw ShapeError("q_sample: need one step per batch element");
  }
  const std::size_t per = x0.size() / x0.dim(0);
  NdArray<T> out(x0.shape());
  for (std::size_t b = 0; b < steps.size(); ++b) {
    const double ab = schedule.alpha_bar(steps[b]);
    const T signal = static_cast<T>(std::sqrt(ab));
    const T noise = static_cast<T>(std::sqrt(1.0 - ab));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = signal * x0[i] + noise * eps[i];
    }
  }
  return out;
}

/// (x_t - (1 - alpha_t)/sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
template <typename T>
NdArray<T> posterior_mean(const NdArray<T>& x_t, long t, const NdArray<T>& eps_hat,
                          const NoiseSchedule& schedule) {
  if (x_t.shape() != eps_hat.shape()) {
    throw ShapeError("posterior_mean: x_t " + shape_str(x_t.shape()) + " vs eps " +
                     shape_str(eps_hat.shape()));
  }
  const double a = schedule.alpha(t);
  const double coef = (1.0 - a) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double inv_sqrt_a = 1.0 / std::sqrt(a);
  NdArray<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>((static_cast<double>(x_t[i]) - coef * static_cast<double>(eps_hat[i])) *
                            inv_sqrt_a);
  }
  return out;
}

/// Noise predictor on a tape: (tape, x_t var, steps) -> eps_hat var.
template <typename T>
using TapedPredictor = std::function<Var<T>(Tape<T>&, Var<T>, std::span<const long>)>;

/// Mean over all elements of (eps - predictor(q_sample(x0, t, eps), t))^2 for
/// given steps and noise.
template <typename T>
Var<T> loss_from_noise(Tape<T>& tape, const TapedPredictor<T>& predictor, const NdArray<T>& x0,
                       std::span<const long> steps, const NdArray<T>& eps,
                       const NoiseSchedule& schedule) {
  auto x_t = tape.constant(q_sample(x0, steps, eps, schedule));
  auto eps_var = tape.constant(eps);
  auto pred = predictor(tape, x_t, steps);
  auto loss = ops::mean_squared_error(eps_var, pred);
  if (!std::isfinite(static_cast<double>(loss.value().item()))) {
    throw NumericError("non-finite training loss");
  }
  return loss;
}

/// One evaluation of the simplified objective with its tape, ready for
/// backward().
template <typename T>
struct LossEvaluation {
  std::unique_ptr<Tape<T>> tape;
  BoundParams<T> params;
  Var<T> loss;
  std::vector<long> steps;
};

/// Draws t ~ U{1..T} per batch element and eps ~ N(0, I), then evaluates the
/// loss of the network on `x0_batch` ([B, D, K] one-hot).
template <typename T>
LossEvaluation<T> loss_simple(const NetworkParams<T>& params, const NdArray<T>& x0_batch,
                              const NoiseSchedule& schedule, std::mt19937_64& rng,
                              std::mt19937_64* dropout_rng = nullptr) {
  if (x0_batch.rank() != 3) throw ShapeError("loss_simple: expected [B, D, K] batch");
  const std::size_t B = x0_batch.dim(0);
  LossEvaluation<T> ev;
  std::uniform_int_distribution<long> pick(1, schedule.steps());
  ev.steps.resize(B);
  for (auto& t : ev.steps) t = pick(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  NdArray<T> eps(x0_batch.shape());
  for (auto& e : eps.data()) e = static_cast<T>(normal(rng));

  ev.tape = std::make_unique<Tape<T>>();
  ev.params = bind(params, *ev.tape);
  const long T_steps = schedule.steps();
  ForwardOptions<T> opts;
  opts.dropout_rng = dropout_rng;
  TapedPredictor<T> predictor = [&](Tape<T>&, Var<T> x_t, std::span<const long> steps) {
    return predict_noise(ev.params, x_t, steps, T_steps, opts);
  };
  ev.loss = loss_from_noise(*ev.tape, predictor, x0_batch, ev.steps, eps, schedule);
  return ev;
}

/// Raised when the reverse chain leaves the finite range.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& msg, long step) : NumericError(msg), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

inline constexpr double kDivergenceBound = 1e6;

/// Batch noise predictor for sampling: (x_t [n, D, K], t) -> eps_hat.
template <typename T>
using SamplingPredictor = std::function<NdArray<T>(const NdArray<T>&, long)>;

/// Reverse chain from x_T ~ N(0, I): x_{t-1} = mu(x_t, t) + sigma_t z, with
/// z = 0 at t = 1. Calls `predictor` exactly T times.
template <typename T>
NdArray<T> ancestral_sample(const SamplingPredictor<T>& predictor, const NoiseSchedule& schedule,
                            std::size_t n_samples, std::size_t D, std::size_t K,
                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  NdArray<T> x({n_samples, D, K});
  for (auto& v : x.data()) v = static_cast<T>(normal(rng));
  for (long t = schedule.steps(); t >= 1; --t) {
    NdArray<T> eps_hat = predictor(x, t);
    x = posterior_mean(x, t, eps_hat, schedule);
    if (t > 1) {
      const double sigma = schedule.sigma(t);
      for (auto& v : x.data()) v += static_cast<T>(sigma * normal(rng));
    }
    for (T v : x.data()) {
      if (!std::isfinite(static_cast<double>(v)) || std::abs(static_cast<double>(v)) > kDivergenceBound) {
        throw DivergenceError("sampler diverged at step " + std::to_string(t), t);
      }
    }
  }
  return x;
}

/// Samples with the network, evaluating at most `chunk` chains per forward
/// pass to bound memory. Output does not depend on `chunk`.
template <typename T>
NdArray<T> ancestral_sample(const NetworkParams<T>& params, const NoiseSchedule& schedule,
                            std::size_t n_samples, std::uint64_t seed, std::size_t chunk = 512) {
  const std::size_t D = params.num_attributes(), K = params.vocab_size();
  const std::size_t per = D * K;
  const long T_steps = schedule.steps();
  SamplingPredictor<T> predictor = [&](const NdArray<T>& x, long t) {
    const std::size_t n = x.dim(0);
    NdArray<T> out(x.shape());
    for (std::size_t lo = 0; lo < n; lo += chunk) {
      const std::size_t m = std::min(chunk, n - lo);
      std::vector<T> part(x.data().begin() + lo * per, x.data().begin() + (lo + m) * per);
      std::vector<long> steps(m, t);
      auto eps = predict_noise(params, NdArray<T>({m, D, K}, std::move(part)), steps, T_steps);
      std::copy(eps.data().begin(), eps.data().end(), out.data().begin() + lo * per);
    }
    return out;
  };
  return ancestral_sample(predictor, schedule, n_samples, D, K, seed);
}

}  // namespace popdiff
