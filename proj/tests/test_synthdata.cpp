#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "relulab/synthdata.hpp"

using namespace relulab;

TEST(Separation, HandExamples) {
  EXPECT_DOUBLE_EQ(separation({{0.1}, {0.4}, {0.9}}), 0.15);
  EXPECT_EQ(separation({{0.3}, {0.3}, {0.9}}), 0.0);
  EXPECT_DOUBLE_EQ(separation({{0.0, 0.0}, {0.2, 0.5}}), 0.25);
  EXPECT_THROW(separation({{0.5}}), InputError);
}

TEST(Separation, PermutationInvariantAndBelowGridSpacing) {
  auto spec = two_region_spec(2);
  auto ds = sample_classification(spec, 300, 11);
  double q = separation(ds.xs);
  auto xs = ds.xs;
  std::reverse(xs.begin(), xs.end());
  std::swap(xs[3], xs[100]);
  EXPECT_EQ(separation(xs), q);
  EXPECT_LE(q, std::pow(300.0, -0.5));
  // 1-d fast path agrees with the pairwise scan
  auto d1 = sample_classification(two_region_spec(1), 400, 3);
  double brute = 1.0;
  for (std::size_t i = 0; i < d1.size(); ++i)
    for (std::size_t j = i + 1; j < d1.size(); ++j) brute = std::min(brute, std::abs(d1.xs[i][0] - d1.xs[j][0]));
  EXPECT_EQ(separation(d1.xs), 0.5 * brute);
}

TEST(AdmissibleDelta, Examples) {
  EXPECT_NEAR(admissible_delta(0.15, 1.0), 0.045, 1e-15);
  EXPECT_EQ(admissible_delta(0.15, 0.01), 0.01);
  EXPECT_EQ(admissible_delta(0.15, 1.0, 0.02), 0.02);
  EXPECT_THROW(admissible_delta(0.0, 1.0), PreconditionError);
  EXPECT_THROW(admissible_delta(0.1, 0.0), PreconditionError);
}

TEST(BayesQuantities, TwoRegion) {
  auto spec = two_region_spec(1);
  auto b = bayes_quantities(spec);
  EXPECT_NEAR(b.bayes_risk, 0.1, 1e-15);
  EXPECT_EQ(b.j_norm, 1.25);
  EXPECT_EQ(b.jbar_norm, 0.8);
  EXPECT_NEAR(spec.zeta, 0.3, 1e-15);
}

TEST(BayesQuantities, DegenerateAndUniform) {
  ClassificationSpec s;
  s.dim = 1;
  s.region_a = {Box{{0.0}, {0.5}}};
  s.density = {{s.region_a[0]}, {2.0}};
  s.eta = CosineStep{1.0, 0.0, 0.6, 0.9};
  s.zeta = 0.4;
  s.validate();
  EXPECT_EQ(bayes_quantities(s).bayes_risk, 0.0);
  auto ds = sample_classification(s, 1000, 5);
  for (double y : ds.ys) EXPECT_EQ(y, 1.0);

  ClassificationSpec u;
  u.dim = 2;
  u.region_a = {Box{{0.0, 0.0}, {1.0, 1.0}}};
  u.density = uniform_unit_cube(2);
  u.eta = CosineStep{0.95, 0.05, 1.0, 2.0};
  u.zeta = 0.4;
  u.validate();
  EXPECT_EQ(bayes_quantities(u).j_norm, 1.0);
}

TEST(BayesQuantities, MonteCarloAgreesWithClosedForm) {
  auto spec = two_region_spec(2);
  // misclassification rate of the Bayes rule on sampled labels
  const std::size_t n = 1000000;
  auto ds = sample_classification(spec, n, 77);
  double errors = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double bayes_label = spec.eta_at(ds.xs[i]) >= 0.5 ? 1.0 : -1.0;
    errors += ds.ys[i] != bayes_label;
  }
  double mean = errors / n, se = std::sqrt(mean * (1.0 - mean) / n);
  EXPECT_LE(std::abs(mean - bayes_quantities(spec).bayes_risk), 3.0 * se);
}

TEST(SpecValidation, RejectsBrokenSpecs) {
  auto good = two_region_spec(1);
  auto s = good;
  s.delta_max = 0.2;  // gap is 0.2 < 0.4
  EXPECT_THROW(s.validate(), InputError);
  s = good;
  s.zeta = 0.45;
  EXPECT_THROW(s.validate(), InputError);
  s = good;
  s.density.values = {1.0, 1.0};
  EXPECT_THROW(s.validate(), InputError);
  s = good;
  s.eta = CosineStep{0.9, 0.1, 0.3, 0.6};  // A reaches into the transition
  EXPECT_THROW(s.validate(), InputError);
}

TEST(SampleClassification, SupportConfidenceAndLabelLaw) {
  auto spec = two_region_spec(1);
  auto ds = sample_classification(spec, 100000, 2024);
  std::size_t in_a = 0, pos_a = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& x = ds.xs[i];
    bool a = spec.region_a[0].contains(x), b = spec.region_b[0].contains(x);
    ASSERT_TRUE(a || b);
    ASSERT_GT(std::abs(spec.eta_at(x) - 0.5), spec.zeta);
    ASSERT_TRUE(ds.ys[i] == 1.0 || ds.ys[i] == -1.0);
    if (a) {
      ++in_a;
      pos_a += ds.ys[i] > 0;
    }
  }
  EXPECT_NEAR(static_cast<double>(pos_a) / in_a, 0.9, 0.01);
  EXPECT_NEAR(static_cast<double>(in_a) / ds.size(), 0.5, 0.01);
}

TEST(SampleClassification, Deterministic) {
  auto spec = two_region_spec(2);
  auto a = sample_classification(spec, 500, 9), b = sample_classification(spec, 500, 9);
  EXPECT_EQ(a.xs, b.xs);
  EXPECT_EQ(a.ys, b.ys);
  auto c = sample_classification(spec, 500, 10);
  EXPECT_NE(a.xs, c.xs);
}

TEST(SampleRegression, NoiselessIsExact) {
  auto spec = make_regression_spec(sine_target(0.5, {1.0}, 0.0, 2), 0.0, 0.6, uniform_unit_cube(1));
  auto ds = sample_regression(spec, 1000, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.ys[i], spec.target(ds.xs[i]));
}

TEST(SampleRegression, VarianceMatchesTruncatedNormal) {
  const double two_pi = 2.0 * std::numbers::pi;
  auto spec = make_regression_spec(sine_target(1.0 / (two_pi * two_pi), {1.0}, 0.0, 2), 0.1, 0.5, uniform_unit_cube(1));
  auto ds = sample_regression(spec, 100000, 3);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double e = ds.ys[i] - spec.target(ds.xs[i]);
    ASSERT_LE(std::abs(ds.ys[i]), spec.output_bound);
    s += e;
    s2 += e * e;
  }
  double n = ds.size(), var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var / spec.effective_variance(), 1.0, 0.05);
  EXPECT_LT(spec.effective_variance(), 0.01);
  EXPECT_GT(spec.effective_variance(), 0.0099);
}

TEST(SampleRegression, HeavyTruncationVarianceFormula) {
  // c / sigma = 1: variance of a standard normal truncated to [-1, 1] is 0.2911...
  auto spec = make_regression_spec(constant_target(1, 0.0), 1.0, 1.0, uniform_unit_cube(1));
  EXPECT_NEAR(spec.effective_variance(), 0.29112509, 1e-7);
  auto ds = sample_regression(spec, 200000, 4);
  double s2 = 0.0;
  for (double y : ds.ys) s2 += y * y;
  EXPECT_NEAR(s2 / ds.size() / spec.effective_variance(), 1.0, 0.02);
}

TEST(SpecJson, RoundTrip) {
  auto spec = two_region_spec(2);
  auto back = classification_spec_from_json(to_json(spec));
  EXPECT_EQ(to_json(back), to_json(spec));
  auto r = make_regression_spec(sine_target(0.2, {1.0, 2.0}, 0.1, 2), 0.05, 0.5, uniform_unit_cube(2));
  auto rb = regression_spec_from_json(to_json(r));
  EXPECT_EQ(to_json(rb), to_json(r));
  EXPECT_EQ(rb.target_sup, r.target_sup);
  EXPECT_THROW(classification_spec_from_json(nlohmann::json::parse(R"({"dim":1})")), std::exception);
}

TEST(Dataset, CsvExport) {
  auto ds = sample_classification(two_region_spec(2), 3, 1);
  std::ostringstream out;
  write_csv(out, ds);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x0,x1,y");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
