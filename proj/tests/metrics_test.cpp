#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "popdiff/metrics.hpp"

namespace popdiff {
namespace {

SchemaPtr letters() {
  return std::make_shared<const AttributeSchema>(
      AttributeSchema({{"x", {"a", "b", "c", "d"}}}));
}

Population letter_pop(const std::string& s) {
  std::vector<Record> recs;
  for (char ch : s) recs.push_back(Record{{static_cast<std::size_t>(ch - 'a')}});
  return Population(letters(), std::move(recs));
}

SchemaPtr sex_age() {
  return std::make_shared<const AttributeSchema>(
      AttributeSchema({{"sex", {"m", "f"}}, {"age", {"young", "old"}}}));
}

TEST(Distribution, MarginalHalfHalf) {
  auto s = std::make_shared<const AttributeSchema>(AttributeSchema({{"sex", {"m", "f"}}}));
  Population pop(s, {Record{{0}}, Record{{0}}, Record{{1}}, Record{{1}}});
  EXPECT_EQ(marginal_distribution(pop).cells, (std::vector<double>{0.5, 0.5}));
}

TEST(Distribution, BivariateCell) {
  // (m,y), (m,o), (f,y), (f,y)
  Population pop(sex_age(), {Record{{0, 2}}, Record{{0, 3}}, Record{{1, 2}}, Record{{1, 2}}});
  auto d = bivariate_distribution(pop, 0, 1);
  EXPECT_EQ(d.cells, (std::vector<double>{0.25, 0.25, 0.5, 0.0}));
  EXPECT_THROW(bivariate_distribution(pop, 0, 0), ConfigError);
  EXPECT_THROW(bivariate_distribution(pop, 0, 2), ConfigError);
}

TEST(Distribution, EmptyPopulation) {
  Population pop(sex_age(), {});
  EXPECT_THROW(marginal_distribution(pop), ConfigError);
  EXPECT_THROW(bivariate_distribution(pop, 0, 1), ConfigError);
}

TEST(Distribution, CellsSumToOnePerAttributeAndPair) {
  auto schema = std::make_shared<const AttributeSchema>(
      AttributeSchema({{"a", {"1", "2", "3"}}, {"b", {"x", "y"}}, {"c", {"p", "q", "r", "s"}}}));
  std::mt19937_64 rng(1);
  std::vector<Record> recs;
  for (int i = 0; i < 137; ++i) {
    Record r;
    for (const auto& sp : schema->spans()) {
      r.values.push_back(std::uniform_int_distribution<std::size_t>(sp.start, sp.end - 1)(rng));
    }
    recs.push_back(r);
  }
  Population pop(schema, recs);
  auto m = marginal_distribution(pop);
  for (const auto& sp : schema->spans()) {
    double sum = 0;
    for (std::size_t k = sp.start; k < sp.end; ++k) sum += m.cells[k];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = i + 1; j < 3; ++j) {
      auto b = bivariate_distribution(pop, i, j);
      EXPECT_EQ(b.num_cells(), schema->span(i).size() * schema->span(j).size());
      double sum = 0;
      for (double c : b.cells) sum += c;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Srmse, Examples) {
  CategoricalDistribution ref{{0.5, 0.5}}, gen{{0.6, 0.4}};
  EXPECT_NEAR(srmse(ref, gen), 0.2, 1e-12);
  EXPECT_EQ(srmse(ref, ref), 0.0);
}

TEST(Srmse, ReferenceNormalizesDenominator) {
  CategoricalDistribution full{{1.0, 0.0}}, half{{0.5, 0.0}};
  EXPECT_NEAR(srmse(full, half), std::sqrt(0.125) / 0.5, 1e-15);
  EXPECT_NEAR(srmse(half, full), std::sqrt(0.125) / 0.25, 1e-15);
}

TEST(Srmse, Errors) {
  EXPECT_THROW(srmse(CategoricalDistribution{{0.5, 0.5}}, CategoricalDistribution{{1.0}}), ShapeError);
  EXPECT_THROW(srmse(CategoricalDistribution{{0.0, 0.0}}, CategoricalDistribution{{1.0, 0.0}}),
               NumericError);
}

TEST(Membership, PrecisionRecallF1) {
  auto ref = letter_pop("aabc");
  auto gen = letter_pop("abdd");
  EXPECT_DOUBLE_EQ(precision(ref, gen), 0.5);
  EXPECT_DOUBLE_EQ(recall(ref, gen), 0.75);
  EXPECT_NEAR(f1_score(0.5, 0.75), 0.6, 1e-15);
  EXPECT_EQ(f1_score(1.0, 1.0), 1.0);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
  EXPECT_EQ(precision(ref, letter_pop("ab")), 1.0);
  EXPECT_EQ(recall(ref, letter_pop("abcd")), 1.0);
  EXPECT_THROW(precision(ref, letter_pop("")), ConfigError);
  EXPECT_THROW(recall(letter_pop(""), gen), ConfigError);
}

TEST(Membership, UniqueCombinations) {
  EXPECT_EQ(unique_combinations(letter_pop("aabc")), 3u);
  EXPECT_EQ(unique_combinations(letter_pop("")), 0u);
}

TEST(Membership, SchemaMismatch) {
  Population other(sex_age(), {Record{{0, 2}}});
  EXPECT_THROW(precision(letter_pop("a"), other), SchemaError);
  EXPECT_THROW(evaluate(letter_pop("a"), other), SchemaError);
}

TEST(Evaluate, IdentityAndStructuralZeroRate) {
  auto ref = letter_pop("aabcd");
  auto same = evaluate(ref, ref);
  EXPECT_EQ(same.precision, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.f1, 1.0);
  EXPECT_EQ(same.marginal_srmse, 0.0);
  EXPECT_EQ(same.bivariate_srmse, 0.0);
  EXPECT_FALSE(same.sampling_zero_count.has_value());

  auto rep = evaluate(letter_pop("aabc"), letter_pop("abdd"));
  EXPECT_EQ(rep.structural_zero_rate, 1.0 - rep.precision);
  EXPECT_EQ(rep.reference_combinations, 3u);
  EXPECT_EQ(rep.generated_combinations, 3u);
}

TEST(Evaluate, SamplingZeroCounts) {
  auto ref = letter_pop("aabcd");
  auto train = letter_pop("ab");
  auto gen = letter_pop("abccdd");
  auto rep = evaluate(ref, gen, &train);
  EXPECT_EQ(rep.training_combinations, 2u);
  EXPECT_EQ(rep.sampling_zero_count, 2u);    // c and d
  EXPECT_EQ(rep.sampling_zero_records, 4u);
  auto j = to_json(rep);
  EXPECT_EQ(j["sampling_zero_count"], 2);
  EXPECT_EQ(j["combinations"]["training"], 2);
  EXPECT_EQ(j["combinations"]["reference"], 4);
  for (const char* key : {"marginal_srmse", "bivariate_srmse", "precision", "recall", "f1",
                          "structural_zero_rate"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(Evaluate, BivariateIsMeanOfPairs) {
  auto schema = std::make_shared<const AttributeSchema>(
      AttributeSchema({{"a", {"0", "1"}}, {"b", {"0", "1"}}, {"c", {"0", "1"}}}));
  Population ref(schema, {Record{{0, 2, 4}}, Record{{1, 3, 5}}, Record{{0, 3, 4}}});
  Population gen(schema, {Record{{0, 2, 5}}, Record{{1, 2, 5}}});
  auto rep = evaluate(ref, gen);
  ASSERT_EQ(rep.pair_srmse.size(), 3u);
  double mean = 0;
  for (const auto& p : rep.pair_srmse) mean += p.srmse / 3.0;
  EXPECT_NEAR(rep.bivariate_srmse, mean, 1e-15);
  EXPECT_EQ(rep.pair_srmse[1].first, 0u);
  EXPECT_EQ(rep.pair_srmse[1].second, 2u);
  const std::string csv = format_pair_csv(rep.pair_srmse, *schema);
  EXPECT_EQ(csv.rfind("attribute_a,attribute_b,srmse\na,b,", 0), 0u);
}

TEST(Curve, FullRateAndMonotone) {
  std::mt19937_64 rng(2);
  std::vector<Record> recs;
  std::geometric_distribution<std::size_t> g(0.5);
  auto schema = std::make_shared<const AttributeSchema>(AttributeSchema(
      {{"a", {"0", "1", "2", "3", "4", "5"}}, {"b", {"0", "1", "2", "3", "4", "5"}}}));
  for (int i = 0; i < 500; ++i) {
    recs.push_back(Record{{std::min<std::size_t>(g(rng), 5), 6 + std::min<std::size_t>(g(rng), 5)}});
  }
  Population ref(schema, recs);
  const std::vector<double> rates{0.01, 0.05, 0.1, 0.25, 0.5, 1.0};
  auto pts = sampling_zero_curve(ref, rates, 9);
  ASSERT_EQ(pts.size(), rates.size());
  EXPECT_EQ(pts.back().combination_share, 1.0);
  EXPECT_EQ(pts.back().coverage, 1.0);
  EXPECT_EQ(pts.back().subsample_size, 500u);
  EXPECT_EQ(pts[0].subsample_size, 5u);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    EXPECT_GE(pts[i].coverage, pts[i - 1].coverage);
    EXPECT_GE(pts[i].combination_share, pts[i - 1].combination_share);
  }
  EXPECT_LT(pts[0].combination_share, 1.0);
  auto again = sampling_zero_curve(ref, rates, 9);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(again[i].coverage, pts[i].coverage);
  EXPECT_EQ(format_curve_csv({{1.0, 500, 1.0, 1.0}}), "rate,combination_share,coverage\n1,1,1\n");
}

TEST(Curve, TinyRateKeepsOneRecordAndErrors) {
  auto ref = letter_pop("abcd");
  auto pts = sampling_zero_curve(ref, {0.01}, 1);
  EXPECT_EQ(pts[0].subsample_size, 1u);
  EXPECT_EQ(pts[0].combination_share, 0.25);
  EXPECT_THROW(sampling_zero_curve(ref, {0.0}, 1), ConfigError);
  EXPECT_THROW(sampling_zero_curve(ref, {1.5}, 1), ConfigError);
  EXPECT_THROW(sampling_zero_curve(letter_pop(""), {0.5}, 1), ConfigError);
}

}  // namespace
}  // namespace popdiff
