#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "popdiff/error.hpp"
#include "popdiff/metrics.hpp"
#include "popdiff/schema.hpp"

/// Ground-truth toy populations with explicit joint tables, and brute-force
/// recomputation of the evaluation metrics.
namespace popdiff::toy {

/// Explicit joint over every attribute combination. Combinations are ordered
/// row-major with the last attribute varying fastest.
struct ToyJointSpec {
  SchemaPtr schema;
  std::vector<double> probabilities;
  /// Flat combination indices that must carry probability exactly 0.
  std::vector<std::size_t> forbidden;

  std::size_t num_combinations() const {
    std::size_t n = 1;
    for (const auto& s : schema->spans()) n *= s.size();
    return n;
  }

  Record combination(std::size_t index) const {
    const std::size_t D = schema->num_attributes();
    Record r;
    r.values.resize(D);
    for (std::size_t d = D; d-- > 0;) {
      const auto& s = schema->span(d);
      r.values[d] = s.start + index % s.size();
      index /= s.size();
    }
    return r;
  }

  std::size_t index_of(const Record& r) const {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < schema->num_attributes(); ++d) {
      const auto& s = schema->span(d);
      idx = idx * s.size() + (r.values[d] - s.start);
    }
    return idx;
  }

  bool is_forbidden(const Record& r) const {
    return std::find(forbidden.begin(), forbidden.end(), index_of(r)) != forbidden.end();
  }

  void validate() const {
    if (!schema) throw ConfigError("toy joint: missing schema");
    if (probabilities.size() != num_combinations()) {
      throw ConfigError("toy joint: expected " + std::to_string(num_combinations()) +
                        " probabilities, got " + std::to_string(probabilities.size()));
    }
    double total = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0)) throw ConfigError("toy joint: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("toy joint: probabilities do not sum to 1");
    for (std::size_t f : forbidden) {
      if (f >= probabilities.size() || probabilities[f] != 0.0) {
        throw ConfigError("toy joint: forbidden combination " + std::to_string(f) +
                          " must have probability 0");
      }
    }
  }
};

/// Normalizes non-negative weights into a spec.
inline ToyJointSpec make_joint(SchemaPtr schema, std::vector<double> weights,
                               std::vector<std::size_t> forbidden = {}) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw ConfigError("toy joint: weights sum to zero");
  for (auto& w : weights) w /= total;
  // absorb rounding into the largest cell so the table sums to 1 within 1e-12
  double sum = 0.0;
  for (double w : weights) sum += w;
  *std::max_element(weights.begin(), weights.end()) += 1.0 - sum;
  ToyJointSpec spec{std::move(schema), std::move(weights), std::move(forbidden)};
  spec.validate();
  return spec;
}

/// 4 x 3 x 2 = 24 combinations (age, occupation, car), 4 forbidden (children
/// who work or are retired), correlated attributes and a few rare cells.
inline ToyJointSpec default_joint() {
  auto schema = std::make_shared<const AttributeSchema>(std::vector<Attribute>{
      {"age", {"child", "young", "middle", "senior"}},
      {"occupation", {"student", "worker", "retired"}},
      {"car", {"no", "yes"}},
  });
  std::vector<double> w = {
      // child: student no/yes, worker no/yes, retired no/yes
      12.0, 0.3, 0.0, 0.0, 0.0, 0.0,
      // young
      8.0, 2.0, 6.0, 9.0, 0.3, 0.2,
      // middle
      0.6, 0.4, 5.0, 20.0, 1.0, 1.5,
      // senior
      0.2, 0.1, 2.0, 4.0, 10.0, 6.0,
  };
  return make_joint(std::move(schema), std::move(w), {2, 3, 4, 5});
}

/// n i.i.d. draws by inverse CDF.
inline Population sample_toy_population(const ToyJointSpec& spec, std::size_t n,
                                        std::uint64_t seed) {
  spec.validate();
  std::vector<double> cdf(spec.probabilities.size());
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < cdf.size(); ++i) {
    acc += spec.probabilities[i];
    cdf[i] = acc;
    if (spec.probabilities[i] > 0.0) last_positive = i;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Record> records;
  records.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = u(rng);
    // first cell whose cdf exceeds x; zero-probability cells never qualify
    auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
    std::size_t idx = it == cdf.end() ? last_positive
                                      : static_cast<std::size_t>(it - cdf.begin());
    records.push_back(spec.combination(idx));
  }
  return Population(spec.schema, std::move(records));
}

inline CategoricalDistribution exact_marginals(const ToyJointSpec& spec) {
  CategoricalDistribution dist{std::vector<double>(spec.schema->vocab_size(), 0.0)};
  for (std::size_t c = 0; c < spec.probabilities.size(); ++c) {
    const Record r = spec.combination(c);
    for (std::size_t v : r.values) dist.cells[v] += spec.probabilities[c];
  }
  return dist;
}

inline CategoricalDistribution exact_bivariates(const ToyJointSpec& spec, std::size_t i,
                                                std::size_t j) {
  if (i == j) throw ConfigError("exact_bivariates: attributes must differ");
  const auto& si = spec.schema->span(i);
  const auto& sj = spec.schema->span(j);
  CategoricalDistribution dist{std::vector<double>(si.size() * sj.size(), 0.0)};
  for (std::size_t c = 0; c < spec.probabilities.size(); ++c) {
    const Record r = spec.combination(c);
    dist.cells[(r.values[i] - si.start) * sj.size() + (r.values[j] - sj.start)] +=
        spec.probabilities[c];
  }
  return dist;
}

inline nlohmann::json to_json(const ToyJointSpec& spec) {
  return {{"schema", spec.schema->to_json()},
          {"probabilities", spec.probabilities},
          {"forbidden", spec.forbidden}};
}

inline ToyJointSpec joint_from_json(const nlohmann::json& j) {
  ToyJointSpec spec;
  try {
    spec.schema = std::make_shared<const AttributeSchema>(AttributeSchema::from_json(j.at("schema")));
    spec.probabilities = j.at("probabilities").get<std::vector<double>>();
    if (j.contains("forbidden")) spec.forbidden = j["forbidden"].get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("toy joint json: ") + e.what());
  }
  spec.validate();
  return spec;
}

struct BruteForceMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double marginal_srmse = 0.0;
  double bivariate_srmse = 0.0;
};

namespace detail {

inline bool same_combination(const Record& a, const Record& b) {
  if (a.values.size() != b.values.size()) return false;
  for (std::size_t d = 0; d < a.values.size(); ++d) {
    if (a.values[d] != b.values[d]) return false;
  }
  return true;
}

inline bool occurs_in(const Record& r, const Population& pop) {
  for (const auto& other : pop.records()) {
    if (same_combination(r, other)) return true;
  }
  return false;
}

inline double share(const Population& pop, std::size_t attr, std::size_t category) {
  std::size_t n = 0;
  for (const auto& r : pop.records()) n += r.values[attr] == category ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(pop.size());
}

inline double pair_share(const Population& pop, std::size_t a, std::size_t ca, std::size_t b,
                         std::size_t cb) {
  std::size_t n = 0;
  for (const auto& r : pop.records()) n += (r.values[a] == ca && r.values[b] == cb) ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(pop.size());
}

}  // namespace detail

/// Quadratic-time recomputation of the evaluation metrics: nested-loop
/// membership and per-cell counting scans.
inline BruteForceMetrics brute_force_metrics(const Population& reference,
                                             const Population& generated) {
  BruteForceMetrics m;
  std::size_t hits = 0;
  for (const auto& g : generated.records()) hits += detail::occurs_in(g, reference) ? 1 : 0;
  m.precision = static_cast<double>(hits) / static_cast<double>(generated.size());
  hits = 0;
  for (const auto& r : reference.records()) hits += detail::occurs_in(r, generated) ? 1 : 0;
  m.recall = static_cast<double>(hits) / static_cast<double>(reference.size());
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;

  const auto& schema = reference.schema();
  const std::size_t D = schema.num_attributes();
  {
    double sq = 0.0, ref_total = 0.0;
    std::size_t cells = 0;
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t c = schema.span(d).start; c < schema.span(d).end; ++c) {
        const double p = detail::share(reference, d, c);
        const double q = detail::share(generated, d, c);
        sq += (p - q) * (p - q);
        ref_total += p;
        ++cells;
      }
    }
    const double nb = static_cast<double>(cells);
    m.marginal_srmse = std::sqrt(sq / nb) / (ref_total / nb);
  }
  double pair_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < D; ++a) {
    for (std::size_t b = a + 1; b < D; ++b) {
      double sq = 0.0, ref_total = 0.0;
      std::size_t cells = 0;
      for (std::size_t ca = schema.span(a).start; ca < schema.span(a).end; ++ca) {
        for (std::size_t cb = schema.span(b).start; cb < schema.span(b).end; ++cb) {
          const double p = detail::pair_share(reference, a, ca, b, cb);
          const double q = detail::pair_share(generated, a, ca, b, cb);
          sq += (p - q) * (p - q);
          ref_total += p;
          ++cells;
        }
      }
      const double nb = static_cast<double>(cells);
      pair_sum += std::sqrt(sq / nb) / (ref_total / nb);
      ++pairs;
    }
  }
  m.bivariate_srmse = pairs ? pair_sum / static_cast<double>(pairs) : 0.0;
  return m;
}

}  // namespace popdiff::toy
