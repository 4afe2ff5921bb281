#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <set>
#include <string>

#include "popdiff/csv.hpp"
#include "popdiff/diffusion.hpp"
#include "popdiff/error.hpp"
#include "popdiff/network.hpp"
#include "popdiff/trainer.hpp"

namespace popdiff {

enum class Dtype { kFloat32, kFloat64 };

inline std::string dtype_name(Dtype d) { return d == Dtype::kFloat32 ? "float32" : "float64"; }

inline Dtype parse_dtype(const std::string& s, const std::string& field) {
  if (s == "float32") return Dtype::kFloat32;
  if (s == "float64") return Dtype::kFloat64;
  throw ConfigError(field + " must be 'float32' or 'float64', got '" + s + "'");
}

/// Everything `train` needs besides the data and output paths.
struct RunConfig {
  NetworkConfig network;
  DiffusionConfig diffusion;
  TrainConfig train;
  /// Precision used for training and stored in the checkpoint.
  Dtype dtype = Dtype::kFloat32;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline void reject_unknown(const nlohmann::json& obj, const std::string& section,
                           const std::set<std::string>& known) {
  if (!obj.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw ConfigError("unknown config field '" + section + "." + key + "'");
  }
}

template <typename V>
void read_field(const nlohmann::json& obj, const std::string& section, const char* key, V& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config field '" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace detail

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, "network",
                         {"embed_dim", "num_heads", "num_blocks", "time_embed_dim", "activation",
                          "dropout", "conv_kernel", "ff_multiplier"});
  NetworkConfig c;
  detail::read_field(j, "network", "embed_dim", c.embed_dim);
  detail::read_field(j, "network", "num_heads", c.num_heads);
  detail::read_field(j, "network", "num_blocks", c.num_blocks);
  detail::read_field(j, "network", "time_embed_dim", c.time_embed_dim);
  detail::read_field(j, "network", "dropout", c.dropout);
  detail::read_field(j, "network", "conv_kernel", c.conv_kernel);
  detail::read_field(j, "network", "ff_multiplier", c.ff_multiplier);
  std::string act = "gelu";
  detail::read_field(j, "network", "activation", act);
  if (act == "gelu") {
    c.activation = Activation::kGelu;
  } else if (act == "relu") {
    c.activation = Activation::kRelu;
  } else {
    throw ConfigError("network.activation must be 'gelu' or 'relu'");
  }
  c.validate();
  return c;
}

inline DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, "diffusion", {"steps", "beta_start", "beta_end"});
  DiffusionConfig c;
  detail::read_field(j, "diffusion", "steps", c.steps);
  detail::read_field(j, "diffusion", "beta_start", c.beta_start);
  detail::read_field(j, "diffusion", "beta_end", c.beta_end);
  c.validate();
  return c;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, "train",
                         {"epochs", "lr_max", "lr_min", "t_max", "batch_size", "seed", "beta1",
                          "beta2", "adam_eps", "weight_decay"});
  TrainConfig c;
  detail::read_field(j, "train", "epochs", c.epochs);
  detail::read_field(j, "train", "lr_max", c.lr_max);
  detail::read_field(j, "train", "lr_min", c.lr_min);
  c.t_max = c.epochs;  // anneal over the whole run unless overridden
  detail::read_field(j, "train", "t_max", c.t_max);
  detail::read_field(j, "train", "batch_size", c.batch_size);
  detail::read_field(j, "train", "seed", c.seed);
  detail::read_field(j, "train", "beta1", c.adamw.beta1);
  detail::read_field(j, "train", "beta2", c.adamw.beta2);
  detail::read_field(j, "train", "adam_eps", c.adamw.eps);
  detail::read_field(j, "train", "weight_decay", c.adamw.weight_decay);
  c.validate();
  return c;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, "config", {"network", "diffusion", "train", "dtype"});
  RunConfig rc;
  const nlohmann::json empty = nlohmann::json::object();
  rc.network = network_config_from_json(j.contains("network") ? j["network"] : empty);
  rc.diffusion = diffusion_config_from_json(j.contains("diffusion") ? j["diffusion"] : empty);
  rc.train = train_config_from_json(j.contains("train") ? j["train"] : empty);
  if (j.contains("dtype")) {
    if (!j["dtype"].is_string()) throw ConfigError("config field 'dtype' has the wrong type");
    rc.dtype = parse_dtype(j["dtype"].get<std::string>(), "dtype");
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = csv::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
  return run_config_from_json(j);
}

inline nlohmann::json to_json(const RunConfig& rc) {
  return {{"network", to_json(rc.network)},
          {"diffusion", to_json(rc.diffusion)},
          {"train", to_json(rc.train)},
          {"dtype", dtype_name(rc.dtype)}};
}

}  // namespace popdiff
