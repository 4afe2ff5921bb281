#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "popdiff/checkpoint.hpp"
#include "popdiff/config.hpp"
#include "popdiff/csv.hpp"
#include "popdiff/diffusion.hpp"
#include "popdiff/metrics.hpp"
#include "popdiff/schema.hpp"
#include "popdiff/trainer.hpp"

/// The train / generate / evaluate / curve pipeline steps behind the CLI.
namespace popdiff::commands {

struct TrainSummary {
  double final_loss = 0.0;
  double seconds = 0.0;
  std::size_t records = 0;
};

namespace detail {

template <typename T>
TrainSummary train_as(const RunConfig& rc, const Population& data,
                      const std::filesystem::path& out_dir, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  auto result = run_training<T>(data, rc.network, rc.diffusion, rc.train);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CheckpointMeta meta{data.schema_ptr(), rc, rc.train.seed, rc.train.epochs};
  save_checkpoint(out_dir, result.params, meta,
                  {{kLossHistoryName, format_loss_history(result.history)}});
  TrainSummary s{result.history.back().mean_loss, secs, data.size()};
  log << "trained " << rc.train.epochs << " epochs on " << data.size()
      << " records; final loss " << s.final_loss << "; wall time " << secs << " s\n";
  if (result.skipped_steps > 0) log << "skipped " << result.skipped_steps << " non-finite steps\n";
  return s;
}

template <typename T>
DecodedBatch generate_as(const std::filesystem::path& ckpt, std::size_t n, std::uint64_t seed,
                         DecodeMode mode, SchemaPtr& schema) {
  auto loaded = load_checkpoint<T>(ckpt);
  schema = loaded.meta.schema;
  const NoiseSchedule schedule = linear_schedule(loaded.meta.config.diffusion);
  const NdArray<T> x0 = ancestral_sample(loaded.params, schedule, n, seed);
  return decode_batch(x0, *schema, mode);
}

}  // namespace detail

/// Trains on `data_path` and writes checkpoint plus loss history to `out_dir`.
inline TrainSummary train(const std::filesystem::path& config_path,
                          const std::filesystem::path& data_path,
                          const std::filesystem::path& out_dir, std::ostream& log) {
  const RunConfig rc = load_run_config(config_path);
  const Population data = load_population_csv(data_path);
  if (data.empty()) throw ConfigError(data_path.string() + ": no training records");
  return rc.dtype == Dtype::kFloat32 ? detail::train_as<float>(rc, data, out_dir, log)
                                     : detail::train_as<double>(rc, data, out_dir, log);
}

struct GenerateSummary {
  std::size_t rows = 0;
  std::size_t undecodable = 0;
};

inline GenerateSummary generate(const std::filesystem::path& ckpt, std::size_t n,
                                std::uint64_t seed, DecodeMode mode,
                                const std::filesystem::path& out_csv, std::ostream& log) {
  if (n == 0) throw ConfigError("--n must be >= 1");
  const Dtype dtype =
      parse_dtype(read_manifest(ckpt).at("config").at("dtype").get<std::string>(), "dtype");
  SchemaPtr schema;
  DecodedBatch batch = dtype == Dtype::kFloat32
                           ? detail::generate_as<float>(ckpt, n, seed, mode, schema)
                           : detail::generate_as<double>(ckpt, n, seed, mode, schema);
  const Population pop(schema, std::move(batch.records));
  write_population_csv(out_csv, pop);
  log << "generated " << pop.size() << " records";
  if (mode == DecodeMode::kGlobal) log << "; undecodable " << batch.undecodable;
  log << '\n';
  return {pop.size(), batch.undecodable};
}

/// Default per-pair CSV path: the report path with "_pairs.csv" replacing
/// its extension.
inline std::filesystem::path default_pairs_path(const std::filesystem::path& report) {
  auto p = report;
  p.replace_extension();
  p += "_pairs.csv";
  return p;
}

inline EvalReport evaluate(const std::filesystem::path& reference_csv,
                           const std::filesystem::path& generated_csv,
                           const std::optional<std::filesystem::path>& training_csv,
                           const std::filesystem::path& report_json,
                           const std::optional<std::filesystem::path>& pairs_csv,
                           std::ostream& log) {
  const Population reference = load_population_csv(reference_csv);
  const Population generated = load_population_csv(generated_csv, reference.schema_ptr());
  std::optional<Population> training;
  if (training_csv) training = load_population_csv(*training_csv, reference.schema_ptr());
  EvalReport rep = popdiff::evaluate(reference, generated, training ? &*training : nullptr);
  const auto pairs_path = pairs_csv ? *pairs_csv : default_pairs_path(report_json);
  const std::string pairs = format_pair_csv(rep.pair_srmse, reference.schema());
  csv::write_file_atomic(report_json, to_json(rep).dump(2) + "\n");
  csv::write_file_atomic(pairs_path, pairs);
  log << "marginal SRMSE " << rep.marginal_srmse << ", bivariate SRMSE " << rep.bivariate_srmse
      << ", precision " << rep.precision << ", recall " << rep.recall << ", F1 " << rep.f1 << '\n';
  return rep;
}

/// Parses "0.25,0.5,1.0".
inline std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> rates;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double r = 0.0;
    try {
      r = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("malformed rate '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("malformed rate '" + item + "'");
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("rate '" + item + "' outside (0, 1]");
    rates.push_back(r);
  }
  if (rates.empty() || (!text.empty() && text.back() == ',')) {
    throw ConfigError("malformed rate list '" + text + "'");
  }
  return rates;
}

inline std::vector<CurvePoint> curve(const std::filesystem::path& reference_csv,
                                     const std::string& rates, std::uint64_t seed,
                                     const std::filesystem::path& out_csv, std::ostream& log) {
  const auto parsed = parse_rates(rates);
  const Population reference = load_population_csv(reference_csv);
  auto points = sampling_zero_curve(reference, parsed, seed);
  csv::write_file_atomic(out_csv, format_curve_csv(points));
  log << "wrote " << points.size() << " curve points\n";
  return points;
}

}  // namespace popdiff::commands
