#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "popdiff/diffusion.hpp"
#include "popdiff/error.hpp"
#include "popdiff/network.hpp"
#include "popdiff/schema.hpp"

namespace popdiff {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

struct TrainConfig {
  long epochs = 700;
  double lr_max = 3e-4;
  double lr_min = 1e-7;
  long t_max = 700;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  AdamWConfig adamw;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (t_max < 1) throw ConfigError("train.t_max must be >= 1");
    if (epochs > t_max) throw ConfigError("train.epochs must not exceed train.t_max");
    if (!(lr_min > 0.0)) throw ConfigError("train.lr_min must be > 0");
    if (!(lr_max >= lr_min)) throw ConfigError("train.lr_max must be >= train.lr_min");
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
    if (!(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
    if (!(adamw.eps >= 0.0)) throw ConfigError("train.adam_eps must be >= 0");
    if (!(adamw.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"lr_max", c.lr_max},
          {"lr_min", c.lr_min},       {"t_max", c.t_max},
          {"batch_size", c.batch_size}, {"seed", c.seed},
          {"beta1", c.adamw.beta1},   {"beta2", c.adamw.beta2},
          {"adam_eps", c.adamw.eps},  {"weight_decay", c.adamw.weight_decay}};
}

/// lr_min + (lr_max - lr_min)(1 + cos(pi * epoch / t_max)) / 2.
inline double cosine_lr(long epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch > config.t_max) {
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(config.t_max) + "]");
  }
  if (epoch == 0) return config.lr_max;
  if (epoch == config.t_max) return config.lr_min;
  const double phase = std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(config.t_max);
  return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (1.0 + std::cos(phase));
}

template <typename T>
struct OptimizerState {
  AdamWConfig hyper;
  long step = 0;
  std::vector<NdArray<T>> m;
  std::vector<NdArray<T>> v;
};

template <typename T>
OptimizerState<T> make_optimizer_state(std::span<const NdArray<T>> params, AdamWConfig hyper) {
  OptimizerState<T> s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

/// Decoupled-weight-decay Adam update. Returns false (and leaves params and
/// state untouched) if any gradient is non-finite.
template <typename T>
bool adamw_step(std::span<NdArray<T>> params, std::span<const NdArray<T>> grads,
                OptimizerState<T>& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
      throw ShapeError("adamw_step: shape mismatch for parameter " + std::to_string(i));
    }
    if (!grads[i].all_finite()) return false;
  }
  const auto& h = state.hyper;
  ++state.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = h.beta1 * static_cast<double>(m[j]) + (1.0 - h.beta1) * gj;
      const double vj = h.beta2 * static_cast<double>(v[j]) + (1.0 - h.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double pj = static_cast<double>(p[j]);
      p[j] = static_cast<T>(pj - lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * pj));
    }
  }
  return true;
}

struct EpochStats {
  long epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

template <typename T>
struct TrainResult {
  NetworkParams<T> params;
  std::vector<EpochStats> history;
  long skipped_steps = 0;
};

/// Called after each epoch; useful for progress output.
using EpochCallback = std::function<void(const EpochStats&)>;

/// Epoch loop: seeded shuffle, mini-batches, simplified loss, backward,
/// AdamW at the epoch's cosine learning rate.
template <typename T>
TrainResult<T> run_training(const Population& data, const NetworkConfig& net_config,
                            const DiffusionConfig& diff_config, const TrainConfig& train_config,
                            const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw ConfigError("run_training: training population is empty");
  net_config.validate();
  diff_config.validate();
  train_config.validate();

  const AttributeSchema& schema = data.schema();
  const std::size_t D = schema.num_attributes(), K = schema.vocab_size(), per = D * K;
  const NdArray<T> encoded = encode_batch<T>(data.records(), schema);
  const NoiseSchedule schedule = linear_schedule(diff_config);

  std::seed_seq seq{train_config.seed, std::uint64_t{0x5eed}};
  std::vector<std::uint64_t> seeds(4);
  seq.generate(seeds.begin(), seeds.end());
  std::mt19937_64 shuffle_rng(seeds[0]);
  std::mt19937_64 noise_rng(seeds[1]);
  std::mt19937_64 dropout_rng(seeds[2]);

  TrainResult<T> result{init_params<T>(net_config, schema, train_config.seed), {}, 0};
  auto& tensors = result.params.tensors();
  std::vector<NdArray<T>> values;
  for (auto& t : tensors) values.push_back(std::move(t.value));
  auto state = make_optimizer_state<T>(values, train_config.adamw);
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i].value = std::move(values[i]);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int consecutive_failures = 0;
  for (long epoch = 0; epoch < train_config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, train_config);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += train_config.batch_size) {
      const std::size_t B = std::min(train_config.batch_size, order.size() - lo);
      NdArray<T> batch({B, D, K});
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(encoded.data().begin() + order[lo + b] * per, per,
                    batch.data().begin() + b * per);
      }
      std::vector<NdArray<T>> grads;
      double loss = 0.0;
      try {
        auto ev = loss_simple(result.params, batch, schedule, noise_rng,
                              net_config.dropout > 0 ? &dropout_rng : nullptr);
        loss = static_cast<double>(ev.loss.value().item());
        ev.tape->backward(ev.loss);
        for (const auto& v : ev.params.vars) grads.push_back(ev.tape->grad_of(v));
      } catch (const NumericError& e) {
        ++result.skipped_steps;
        if (++consecutive_failures >= 2) {
          throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                             ": two consecutive non-finite steps (" + e.what() + ")");
        }
        continue;
      }
      std::vector<NdArray<T>> current;
      current.reserve(tensors.size());
      for (auto& t : tensors) current.push_back(std::move(t.value));
      const bool applied = adamw_step<T>(current, grads, state, lr);
      for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i].value = std::move(current[i]);
      if (!applied) {
        ++result.skipped_steps;
        if (++consecutive_failures >= 2) {
          throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                             ": two consecutive non-finite gradients");
        }
        continue;
      }
      consecutive_failures = 0;
      loss_sum += loss * static_cast<double>(B);
      counted += B;
    }
    if (counted == 0) {
      throw NumericError("training aborted: no finite step in epoch " + std::to_string(epoch));
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(counted), lr};
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

/// "epoch,mean_loss,lr" rows with round-trip precision.
inline std::string format_loss_history(const std::vector<EpochStats>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mean_loss,lr\n";
  for (const auto& s : history) os << s.epoch << ',' << s.mean_loss << ',' << s.lr << '\n';
  return os.str();
}

}  // namespace popdiff
