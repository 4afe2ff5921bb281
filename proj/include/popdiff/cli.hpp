#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "popdiff/commands.hpp"
#include "popdiff/error.hpp"

namespace popdiff {

/// Entry point shared by the executable and the tests. Returns the process
/// exit code; messages go to `out` and errors to `err`.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Diffusion-model population synthesis"};
  app.require_subcommand(1);

  std::string config, data, out_dir;
  auto* train = app.add_subcommand("train", "Train a model on a categorical CSV");
  train->add_option("--config", config, "JSON run configuration")->required();
  train->add_option("--data", data, "training CSV")->required();
  train->add_option("--out", out_dir, "checkpoint directory")->required();

  std::string ckpt, mode = "masked", gen_out;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  auto* generate = app.add_subcommand("generate", "Sample a synthetic population");
  generate->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  generate->add_option("--n", n, "number of samples")->required();
  generate->add_option("--seed", seed, "sampling seed")->required();
  generate->add_option("--mode", mode, "decode mode")->check(CLI::IsMember({"masked", "global"}));
  generate->add_option("--out", gen_out, "output CSV")->required();

  std::string reference, generated, training, report, pairs;
  auto* evaluate = app.add_subcommand("evaluate", "Compare a generated population to a reference");
  evaluate->add_option("--reference", reference, "reference CSV")->required();
  evaluate->add_option("--generated", generated, "generated CSV")->required();
  evaluate->add_option("--training", training, "training CSV (enables sampling-zero count)");
  evaluate->add_option("--report", report, "report JSON")->required();
  evaluate->add_option("--pairs", pairs, "per-pair bivariate SRMSE CSV");

  std::string curve_ref, rates, curve_out;
  std::uint64_t curve_seed = 0;
  auto* curve = app.add_subcommand("curve", "Sampling-zero curve of a reference population");
  curve->add_option("--reference", curve_ref, "reference CSV")->required();
  curve->add_option("--rates", rates, "comma-separated sampling rates in (0, 1]")->required();
  curve->add_option("--seed", curve_seed, "subsampling seed")->required();
  curve->add_option("--out", curve_out, "output CSV")->required();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train) {
      commands::train(config, data, out_dir, out);
    } else if (*generate) {
      commands::generate(ckpt, n, seed, parse_decode_mode(mode), gen_out, out);
    } else if (*evaluate) {
      std::optional<std::filesystem::path> train_path, pairs_path;
      if (!training.empty()) train_path = training;
      if (!pairs.empty()) pairs_path = pairs;
      commands::evaluate(reference, generated, train_path, report, pairs_path, out);
    } else if (*curve) {
      commands::curve(curve_ref, rates, curve_seed, curve_out, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace popdiff
