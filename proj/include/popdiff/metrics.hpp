#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "popdiff/error.hpp"
#include "popdiff/schema.hpp"

namespace popdiff {

/// Relative frequencies over a fixed cell layout. For marginals the cells are
/// the K vocabulary entries; for a bivariate (i, j) they are the
/// |span i| x |span j| category pairs, row-major.
struct CategoricalDistribution {
  std::vector<double> cells;

  std::size_t num_cells() const { return cells.size(); }
};

inline void require_nonempty(const Population& pop, const char* what) {
  if (pop.empty()) throw ConfigError(std::string(what) + ": population is empty");
}

inline void require_same_schema(const Population& a, const Population& b, const char* what) {
  if (a.schema() == b.schema()) return;
  const auto& sa = a.schema();
  const auto& sb = b.schema();
  for (std::size_t d = 0; d < std::min(sa.num_attributes(), sb.num_attributes()); ++d) {
    if (!(sa.attribute(d) == sb.attribute(d))) {
      throw SchemaError(std::string(what) + ": schemas differ at attribute '" +
                        sa.attribute(d).name + "'");
    }
  }
  throw SchemaError(std::string(what) + ": schemas differ in attribute count");
}

inline CategoricalDistribution marginal_distribution(const Population& pop) {
  require_nonempty(pop, "marginal_distribution");
  CategoricalDistribution dist{std::vector<double>(pop.schema().vocab_size(), 0.0)};
  for (const auto& r : pop.records()) {
    for (std::size_t v : r.values) dist.cells[v] += 1.0;
  }
  const double n = static_cast<double>(pop.size());
  for (auto& c : dist.cells) c /= n;
  return dist;
}

inline CategoricalDistribution bivariate_distribution(const Population& pop, std::size_t i,
                                                      std::size_t j) {
  require_nonempty(pop, "bivariate_distribution");
  const auto& s = pop.schema();
  if (i == j) throw ConfigError("bivariate_distribution: attributes must differ");
  if (i >= s.num_attributes() || j >= s.num_attributes()) {
    throw ConfigError("bivariate_distribution: attribute index out of range");
  }
  const auto& si = s.span(i);
  const auto& sj = s.span(j);
  CategoricalDistribution dist{std::vector<double>(si.size() * sj.size(), 0.0)};
  for (const auto& r : pop.records()) {
    dist.cells[(r.values[i] - si.start) * sj.size() + (r.values[j] - sj.start)] += 1.0;
  }
  const double n = static_cast<double>(pop.size());
  for (auto& c : dist.cells) c /= n;
  return dist;
}

/// RMSE over cells divided by the mean reference proportion.
inline double srmse(const CategoricalDistribution& reference,
                    const CategoricalDistribution& generated) {
  if (reference.num_cells() != generated.num_cells() || reference.num_cells() == 0) {
    throw ShapeError("srmse: cell layouts differ");
  }
  const double nb = static_cast<double>(reference.num_cells());
  double sq = 0.0, total = 0.0;
  for (std::size_t c = 0; c < reference.num_cells(); ++c) {
    const double d = reference.cells[c] - generated.cells[c];
    sq += d * d;
    total += reference.cells[c];
  }
  if (total <= 0.0) throw NumericError("srmse: reference distribution is all zero");
  return std::sqrt(sq / nb) / (total / nb);
}

using CombinationSet = std::unordered_set<Record, RecordHash>;

inline CombinationSet combination_set(const Population& pop) {
  return CombinationSet(pop.records().begin(), pop.records().end());
}

inline std::size_t unique_combinations(const Population& pop) {
  return combination_set(pop).size();
}

/// Share of `members` whose combination occurs in `set`.
inline double membership_rate(const Population& members, const CombinationSet& set) {
  std::size_t hit = 0;
  for (const auto& r : members.records()) hit += set.count(r);
  return static_cast<double>(hit) / static_cast<double>(members.size());
}

/// Share of generated individuals whose combination occurs in the reference.
inline double precision(const Population& reference, const Population& generated) {
  require_nonempty(reference, "precision");
  require_nonempty(generated, "precision");
  require_same_schema(reference, generated, "precision");
  return membership_rate(generated, combination_set(reference));
}

/// Share of reference individuals whose combination occurs in the generated set.
inline double recall(const Population& reference, const Population& generated) {
  require_nonempty(reference, "recall");
  require_nonempty(generated, "recall");
  require_same_schema(reference, generated, "recall");
  return membership_rate(reference, combination_set(generated));
}

inline double f1_score(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

struct PairSrmse {
  std::size_t first = 0;
  std::size_t second = 0;
  double srmse = 0.0;
};

/// SRMSE for every attribute pair i < j, in lexicographic pair order.
inline std::vector<PairSrmse> bivariate_srmse_pairs(const Population& reference,
                                                    const Population& generated) {
  require_same_schema(reference, generated, "bivariate_srmse");
  std::vector<PairSrmse> out;
  const std::size_t D = reference.schema().num_attributes();
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = i + 1; j < D; ++j) {
      out.push_back({i, j, srmse(bivariate_distribution(reference, i, j),
                                 bivariate_distribution(generated, i, j))});
    }
  }
  return out;
}

/// Unweighted mean over pairs; 0 when the schema has a single attribute.
inline double mean_pair_srmse(const std::vector<PairSrmse>& pairs) {
  if (pairs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& p : pairs) s += p.srmse;
  return s / static_cast<double>(pairs.size());
}

struct CurvePoint {
  double rate = 0.0;
  std::size_t subsample_size = 0;
  double combination_share = 0.0;
  double coverage = 0.0;
};

/// Nested-subsample sampling-zero curve: one seeded permutation, and the
/// subsample at rate r is its first round(r N) (at least one) records.
inline std::vector<CurvePoint> sampling_zero_curve(const Population& reference,
                                                   const std::vector<double>& rates,
                                                   std::uint64_t seed) {
  require_nonempty(reference, "sampling_zero_curve");
  for (double r : rates) {
    if (!(r > 0.0 && r <= 1.0)) {
      throw ConfigError("sampling rate " + std::to_string(r) + " outside (0, 1]");
    }
  }
  const std::size_t N = reference.size();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const double total_combos = static_cast<double>(unique_combinations(reference));

  std::vector<CurvePoint> out;
  for (double r : rates) {
    std::size_t m = static_cast<std::size_t>(std::llround(r * static_cast<double>(N)));
    m = std::clamp<std::size_t>(m, 1, N);
    CombinationSet sub;
    for (std::size_t i = 0; i < m; ++i) sub.insert(reference[order[i]]);
    out.push_back({r, m, static_cast<double>(sub.size()) / total_combos,
                   membership_rate(reference, sub)});
  }
  return out;
}

/// Evaluation summary; field names follow the usual results-table columns.
struct EvalReport {
  double marginal_srmse = 0.0;
  double bivariate_srmse = 0.0;
  std::vector<PairSrmse> pair_srmse;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double structural_zero_rate = 0.0;
  std::size_t reference_size = 0;
  std::size_t generated_size = 0;
  std::size_t reference_combinations = 0;
  std::size_t generated_combinations = 0;
  std::optional<std::size_t> training_combinations;
  /// Distinct generated combinations present in the reference but absent
  /// from the training data.
  std::optional<std::size_t> sampling_zero_count;
  /// Generated individuals carrying such a combination.
  std::optional<std::size_t> sampling_zero_records;
};

inline EvalReport evaluate(const Population& reference, const Population& generated,
                           const Population* training = nullptr) {
  require_nonempty(reference, "evaluate");
  require_nonempty(generated, "evaluate");
  require_same_schema(reference, generated, "evaluate");
  EvalReport rep;
  rep.marginal_srmse = srmse(marginal_distribution(reference), marginal_distribution(generated));
  rep.pair_srmse = bivariate_srmse_pairs(reference, generated);
  rep.bivariate_srmse = mean_pair_srmse(rep.pair_srmse);

  const auto ref_set = combination_set(reference);
  const auto gen_set = combination_set(generated);
  rep.precision = membership_rate(generated, ref_set);
  rep.recall = membership_rate(reference, gen_set);
  rep.f1 = f1_score(rep.precision, rep.recall);
  rep.structural_zero_rate = 1.0 - rep.precision;
  rep.reference_size = reference.size();
  rep.generated_size = generated.size();
  rep.reference_combinations = ref_set.size();
  rep.generated_combinations = gen_set.size();

  if (training != nullptr) {
    require_same_schema(reference, *training, "evaluate");
    const auto train_set = combination_set(*training);
    rep.training_combinations = train_set.size();
    std::size_t combos = 0, records = 0;
    for (const auto& c : gen_set) {
      if (ref_set.count(c) && !train_set.count(c)) ++combos;
    }
    for (const auto& r : generated.records()) {
      if (ref_set.count(r) && !train_set.count(r)) ++records;
    }
    rep.sampling_zero_count = combos;
    rep.sampling_zero_records = records;
  }
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j{{"marginal_srmse", r.marginal_srmse},
                   {"bivariate_srmse", r.bivariate_srmse},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"f1", r.f1},
                   {"structural_zero_rate", r.structural_zero_rate},
                   {"reference_size", r.reference_size},
                   {"generated_size", r.generated_size}};
  j["combinations"] = {{"reference", r.reference_combinations},
                       {"generated", r.generated_combinations}};
  if (r.training_combinations) j["combinations"]["training"] = *r.training_combinations;
  if (r.sampling_zero_count) {
    j["sampling_zero_count"] = *r.sampling_zero_count;
    j["sampling_zero_records"] = *r.sampling_zero_records;
  }
  return j;
}

inline std::string format_pair_csv(const std::vector<PairSrmse>& pairs,
                                   const AttributeSchema& schema) {
  std::ostringstream os;
  os.precision(17);
  os << "attribute_a,attribute_b,srmse\n";
  for (const auto& p : pairs) {
    os << csv::quote(schema.attribute(p.first).name) << ','
       << csv::quote(schema.attribute(p.second).name) << ',' << p.srmse << '\n';
  }
  return os.str();
}

inline std::string format_curve_csv(const std::vector<CurvePoint>& points) {
  std::ostringstream os;
  os.precision(17);
  os << "rate,combination_share,coverage\n";
  for (const auto& p : points) {
    os << p.rate << ',' << p.combination_share << ',' << p.coverage << '\n';
  }
  return os.str();
}

}  // namespace popdiff
