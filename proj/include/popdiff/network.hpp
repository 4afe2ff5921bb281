#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "popdiff/error.hpp"
#include "popdiff/ndarray.hpp"
#include "popdiff/ops.hpp"
#include "popdiff/schema.hpp"
#include "popdiff/tape.hpp"

namespace popdiff {

enum class Activation { kGelu, kRelu };

struct NetworkConfig {
  std::size_t embed_dim = 128;
  std::size_t num_heads = 4;
  std::size_t num_blocks = 2;
  std::size_t time_embed_dim = 128;
  Activation activation = Activation::kGelu;
  double dropout = 0.0;
  /// Kernel width of the Q/K/V/output 1D convolutions over attribute positions.
  std::size_t conv_kernel = 1;
  std::size_t ff_multiplier = 4;

  void validate() const {
    if (embed_dim == 0) throw ConfigError("network.embed_dim must be >= 1");
    if (num_heads == 0) throw ConfigError("network.num_heads must be >= 1");
    if (num_blocks == 0) throw ConfigError("network.num_blocks must be >= 1");
    if (time_embed_dim == 0) throw ConfigError("network.time_embed_dim must be >= 1");
    if (conv_kernel == 0) throw ConfigError("network.conv_kernel must be >= 1");
    if (ff_multiplier == 0) throw ConfigError("network.ff_multiplier must be >= 1");
    if (embed_dim % num_heads != 0) {
      throw ConfigError("network.embed_dim must be divisible by network.num_heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("network.dropout must lie in [0, 1)");
    }
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline nlohmann::json to_json(const NetworkConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},
          {"num_blocks", c.num_blocks},
          {"time_embed_dim", c.time_embed_dim},
          {"activation", c.activation == Activation::kGelu ? "gelu" : "relu"},
          {"dropout", c.dropout},
          {"conv_kernel", c.conv_kernel},
          {"ff_multiplier", c.ff_multiplier}};
}

template <typename T>
struct NamedTensor {
  std::string name;
  NdArray<T> value;
};

/// All learnable weights of the noise-prediction network, in a fixed order.
template <typename T>
class NetworkParams {
 public:
  NetworkParams() = default;
  NetworkParams(NetworkConfig config, std::size_t num_attributes, std::size_t vocab_size,
                std::vector<NamedTensor<T>> tensors)
      : config_(config), D_(num_attributes), K_(vocab_size), tensors_(std::move(tensors)) {
    for (std::size_t i = 0; i < tensors_.size(); ++i) index_[tensors_[i].name] = i;
  }

  const NetworkConfig& config() const { return config_; }
  std::size_t num_attributes() const { return D_; }
  std::size_t vocab_size() const { return K_; }

  std::vector<NamedTensor<T>>& tensors() { return tensors_; }
  const std::vector<NamedTensor<T>>& tensors() const { return tensors_; }

  const NdArray<T>& get(const std::string& name) const { return tensors_.at(index_of(name)).value; }
  NdArray<T>& get(const std::string& name) { return tensors_.at(index_of(name)).value; }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.value.size();
    return n;
  }

  template <typename U>
  NetworkParams<U> cast() const {
    std::vector<NamedTensor<U>> out;
    for (const auto& t : tensors_) out.push_back({t.name, t.value.template cast<U>()});
    return NetworkParams<U>(config_, D_, K_, std::move(out));
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (a.config_ != b.config_ || a.D_ != b.D_ || a.K_ != b.K_ ||
        a.tensors_.size() != b.tensors_.size()) {
      return false;
    }
    for (std::size_t i = 0; i < a.tensors_.size(); ++i) {
      if (a.tensors_[i].name != b.tensors_[i].name ||
          !(a.tensors_[i].value == b.tensors_[i].value)) {
        return false;
      }
    }
    return true;
  }

 private:
  NetworkConfig config_;
  std::size_t D_ = 0;
  std::size_t K_ = 0;
  std::vector<NamedTensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Kind of initialization a tensor receives.
enum class InitKind { kUniform, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init;
  std::size_t fan_in = 1;
};

/// Names, shapes and initializers of every tensor for a config and schema size.
inline std::vector<ParamSpec> param_layout(const NetworkConfig& c, std::size_t D,
                                           std::size_t K) {
  const std::size_t E = c.embed_dim, F = c.embed_dim * c.ff_multiplier;
  const std::size_t Kw = c.conv_kernel;
  std::vector<ParamSpec> specs{
      {"embed.weight", {K, E}, InitKind::kUniform, K},
      {"embed.bias", {1, 1, E}, InitKind::kZero},
      {"pos", {1, D, E}, InitKind::kZero},
      {"time.weight", {c.time_embed_dim, E}, InitKind::kUniform, c.time_embed_dim},
      {"time.bias", {1, E}, InitKind::kZero},
  };
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    specs.push_back({p + "norm1.gain", {1, 1, E}, InitKind::kOne});
    specs.push_back({p + "norm1.shift", {1, 1, E}, InitKind::kZero});
    for (const char* proj : {"q", "k", "v", "out"}) {
      specs.push_back({p + "attn." + proj + ".weight", {Kw, E, E}, InitKind::kUniform, Kw * E});
      specs.push_back({p + "attn." + proj + ".bias", {1, 1, E}, InitKind::kZero});
    }
    specs.push_back({p + "norm2.gain", {1, 1, E}, InitKind::kOne});
    specs.push_back({p + "norm2.shift", {1, 1, E}, InitKind::kZero});
    specs.push_back({p + "ff.in.weight", {E, F}, InitKind::kUniform, E});
    specs.push_back({p + "ff.in.bias", {1, 1, F}, InitKind::kZero});
    specs.push_back({p + "ff.out.weight", {F, E}, InitKind::kUniform, F});
    specs.push_back({p + "ff.out.bias", {1, 1, E}, InitKind::kZero});
  }
  specs.push_back({"final_norm.gain", {1, 1, E}, InitKind::kOne});
  specs.push_back({"final_norm.shift", {1, 1, E}, InitKind::kZero});
  specs.push_back({"out.weight", {E, K}, InitKind::kZero});
  specs.push_back({"out.bias", {1, 1, K}, InitKind::kZero});
  return specs;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases and
/// positional table, unit norm gains and a zero output projection.
template <typename T>
NetworkParams<T> init_params(const NetworkConfig& config, const AttributeSchema& schema,
                             std::uint64_t seed) {
  config.validate();
  const std::size_t D = schema.num_attributes(), K = schema.vocab_size();
  std::mt19937_64 rng(seed);
  std::vector<NamedTensor<T>> tensors;
  for (const auto& spec : param_layout(config, D, K)) {
    NdArray<T> a(spec.shape);
    switch (spec.init) {
      case InitKind::kZero:
        break;
      case InitKind::kOne:
        a.fill(T(1));
        break;
      case InitKind::kUniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : a.data()) v = static_cast<T>(dist(rng));
        break;
      }
    }
    tensors.push_back({spec.name, std::move(a)});
  }
  return NetworkParams<T>(config, D, K, std::move(tensors));
}

/// Sinusoidal features: the first floor(dim/2) entries are
/// sin(t / 10000^(2i/dim)), the next floor(dim/2) the matching cosines, and an
/// odd trailing entry is zero.
inline std::vector<double> sinusoidal_features(double t, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

/// Time embedding for diffusion step `t` in [1, max_step].
inline std::vector<double> time_embedding(long t, std::size_t dim, long max_step) {
  if (t < 1 || t > max_step) {
    throw ShapeError("time step " + std::to_string(t) + " outside [1, " +
                     std::to_string(max_step) + "]");
  }
  return sinusoidal_features(static_cast<double>(t), dim);
}

/// Tape leaves for every parameter tensor, aligned with params.tensors().
template <typename T>
struct BoundParams {
  std::vector<Var<T>> vars;
  const NetworkParams<T>* params = nullptr;

  Var<T> operator[](const std::string& name) const { return vars[params->index_of(name)]; }
};

template <typename T>
BoundParams<T> bind(const NetworkParams<T>& params, Tape<T>& tape) {
  BoundParams<T> b;
  b.params = &params;
  for (const auto& t : params.tensors()) b.vars.push_back(tape.leaf(t.value));
  return b;
}

/// Optional side outputs and training-time behaviour of a forward pass.
template <typename T>
struct ForwardOptions {
  /// When set, receives the [B, H, D, D] attention weights of every block.
  std::vector<NdArray<T>>* attention = nullptr;
  /// Dropout is applied only when a generator is supplied and dropout > 0.
  std::mt19937_64* dropout_rng = nullptr;
};

namespace detail {

template <typename T>
Var<T> affine_norm(const BoundParams<T>& p, Var<T> h, const std::string& prefix) {
  auto n = ops::layer_norm(h, -1);
  return ops::add(ops::mul(n, p[prefix + ".gain"]), p[prefix + ".shift"]);
}

template <typename T>
Var<T> maybe_dropout(Var<T> h, double rate, std::mt19937_64* rng) {
  if (rng == nullptr || rate <= 0.0) return h;
  NdArray<T> mask(h.shape());
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.data()) m = keep(*rng) ? scale : T(0);
  return ops::mul(h, h.tape->constant(std::move(mask)));
}

template <typename T>
Var<T> conv_proj(const BoundParams<T>& p, Var<T> h, const std::string& prefix) {
  return ops::add(ops::conv1d(h, p[prefix + ".weight"], ops::Padding::kSame),
                  p[prefix + ".bias"]);
}

}  // namespace detail

/// eps_theta(x_t, t). x_t: [B, D, K]; steps: B diffusion steps in [1, max_step].
/// Returns [B, D, K].
template <typename T>
Var<T> predict_noise(const BoundParams<T>& p, Var<T> x_t, std::span<const long> steps,
                     long max_step, const ForwardOptions<T>& opts = {}) {
  const NetworkParams<T>& params = *p.params;
  const NetworkConfig& c = params.config();
  const std::size_t D = params.num_attributes(), K = params.vocab_size();
  const std::size_t E = c.embed_dim, H = c.num_heads, dh = E / H;
  const Shape& xs = x_t.shape();
  if (xs.size() != 3 || xs[1] != D || xs[2] != K) {
    throw ShapeError("predict_noise: expected [B," + std::to_string(D) + "," +
                     std::to_string(K) + "], got " + shape_str(xs));
  }
  const std::size_t B = xs[0];
  if (steps.size() != B) throw ShapeError("predict_noise: one step per batch element required");
  Tape<T>& tape = *x_t.tape;

  NdArray<T> temb({B, c.time_embed_dim});
  for (std::size_t b = 0; b < B; ++b) {
    const auto f = time_embedding(steps[b], c.time_embed_dim, max_step);
    for (std::size_t i = 0; i < f.size(); ++i) temb[b * c.time_embed_dim + i] = static_cast<T>(f[i]);
  }

  auto h = ops::add(ops::matmul(x_t, p["embed.weight"]), p["embed.bias"]);
  h = ops::add(h, p["pos"]);
  auto t_proj = ops::add(ops::matmul(tape.constant(std::move(temb)), p["time.weight"]),
                         p["time.bias"]);
  h = ops::add(h, ops::reshape(t_proj, {B, 1, E}));

  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (std::size_t blk = 0; blk < c.num_blocks; ++blk) {
    const std::string pre = "blocks." + std::to_string(blk) + ".";
    auto a = detail::affine_norm(p, h, pre + "norm1");
    auto split_heads = [&](Var<T> v) {
      return ops::transpose(ops::reshape(v, {B, D, H, dh}), {0, 2, 1, 3});
    };
    auto q = split_heads(detail::conv_proj(p, a, pre + "attn.q"));
    auto k = split_heads(detail::conv_proj(p, a, pre + "attn.k"));
    auto v = split_heads(detail::conv_proj(p, a, pre + "attn.v"));
    auto scores = ops::scale(ops::matmul(q, ops::transpose(k, {0, 1, 3, 2})), inv_sqrt_dh);
    auto weights = ops::softmax(scores, -1);
    if (opts.attention) opts.attention->push_back(weights.value());
    auto ctx = ops::reshape(ops::transpose(ops::matmul(weights, v), {0, 2, 1, 3}), {B, D, E});
    auto attn_out = detail::conv_proj(p, ctx, pre + "attn.out");
    h = ops::add(h, detail::maybe_dropout(attn_out, c.dropout, opts.dropout_rng));

    auto f = detail::affine_norm(p, h, pre + "norm2");
    f = ops::add(ops::matmul(f, p[pre + "ff.in.weight"]), p[pre + "ff.in.bias"]);
    f = c.activation == Activation::kGelu ? ops::gelu(f) : ops::relu(f);
    f = ops::add(ops::matmul(f, p[pre + "ff.out.weight"]), p[pre + "ff.out.bias"]);
    h = ops::add(h, detail::maybe_dropout(f, c.dropout, opts.dropout_rng));
  }

  auto out = detail::affine_norm(p, h, "final_norm");
  return ops::add(ops::matmul(out, p["out.weight"]), p["out.bias"]);
}

/// Gradient-free evaluation of eps_theta on a plain array.
template <typename T>
NdArray<T> predict_noise(const NetworkParams<T>& params, const NdArray<T>& x_t,
                         std::span<const long> steps, long max_step,
                         std::vector<NdArray<T>>* attention = nullptr) {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  auto bound = bind(params, tape);
  ForwardOptions<T> opts;
  opts.attention = attention;
  return predict_noise(bound, tape.constant(x_t), steps, max_step, opts).value();
}

}  // namespace popdiff
