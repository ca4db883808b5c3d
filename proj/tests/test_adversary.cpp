#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "relulab/adversary.hpp"
#include "relulab/student.hpp"

using namespace relulab;

namespace {

ReluNetwork random_net(std::mt19937_64& gen, std::vector<std::size_t> dims) {
  std::normal_distribution<double> nd;
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    std::vector<double> w(dims[l] * dims[l + 1]), b(dims[l + 1]);
    for (auto& v : w) v = nd(gen);
    for (auto& v : b) v = 0.5 * nd(gen);
    layers.push_back({SparseMatrix::from_dense(dims[l + 1], dims[l], w), b});
  }
  std::vector<double> c(dims.back());
  for (auto& v : c) v = nd(gen);
  return ReluNetwork(dims.front(), layers, c);
}

}  // namespace

TEST(Loss, Values) {
  EXPECT_EQ(loss_value(LossKind::hinge, 0.3, 1.0), 0.7);
  EXPECT_EQ(loss_value(LossKind::hinge, 2.0, 1.0), 0.0);
  EXPECT_NEAR(loss_value(LossKind::logistic, 0.0, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(loss_value(LossKind::logistic, -800.0, 1.0), 800.0, 1e-9);
  EXPECT_EQ(loss_value(LossKind::squared, 0.5, -0.5), 1.0);
  EXPECT_EQ(loss_value(LossKind::zero_one, 0.0, 1.0), 0.0);
  EXPECT_EQ(loss_value(LossKind::zero_one, 0.0, -1.0), 1.0);
  EXPECT_EQ(loss_from_string("zero-one"), LossKind::zero_one);
  EXPECT_THROW(loss_from_string("l1"), InputError);
}

TEST(BallMaxLoss, ConstantNet) {
  auto f = affine_network({0.0, 0.0}, 0.4);
  std::vector<double> x{0.3, 0.6};
  auto r = ball_max_loss(f, x, 0.4, 0.1, LossKind::squared);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.witness.size(), 2u);
}

TEST(BallMaxLoss, LinearHingeHitsTheCorner) {
  std::vector<double> w{0.7, -1.3, 0.4};
  auto f = affine_network(w, 0.1);
  std::vector<double> x{0.5, 0.4, 0.6};
  const double delta = 0.05;
  auto r = ball_max_loss(f, x, 1.0, delta, LossKind::hinge);
  // corner x - delta sgn(w)
  std::vector<double> corner(3);
  double fc = 0.1;
  for (std::size_t k = 0; k < 3; ++k) {
    corner[k] = x[k] - delta * (w[k] > 0 ? 1.0 : -1.0);
    fc += w[k] * corner[k];
  }
  EXPECT_NEAR(r.value, 1.0 - fc, 1e-12);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(r.witness[k], corner[k], 1e-12);
  EXPECT_NEAR(r.value, loss_value(LossKind::hinge, f.evaluate(r.witness), 1.0), 0.0);
  EXPECT_TRUE(r.lower_bound);
}

TEST(BallMaxLoss, WitnessStaysInClippedBall) {
  std::mt19937_64 gen(5);
  auto f = random_net(gen, {2, 8, 8});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x{u(gen) < 0.3 ? 0.0 : u(gen), u(gen) < 0.3 ? 1.0 : u(gen)};
    const double delta = 0.1;
    for (auto mode : {AttackMode::exhaustive, AttackMode::heuristic}) {
      AttackConfig cfg;
      cfg.mode = mode;
      auto r = ball_max_loss(f, x, 1.0, delta, LossKind::hinge, cfg);
      for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_GE(r.witness[k], std::max(0.0, x[k] - delta));
        EXPECT_LE(r.witness[k], std::min(1.0, x[k] + delta));
      }
      EXPECT_GE(r.value, loss_value(LossKind::hinge, f.evaluate(x), 1.0));
      EXPECT_EQ(r.value, loss_value(LossKind::hinge, f.evaluate(r.witness), 1.0));
    }
  }
}

TEST(BallMaxLoss, ExhaustiveRejectsHighDimension) {
  auto f = affine_network({1, 1, 1, 1}, -2.0);
  std::vector<double> x(4, 0.5);
  EXPECT_THROW(ball_max_loss(f, x, 1.0, 0.1, LossKind::hinge), InputError);
  AttackConfig cfg;
  cfg.mode = AttackMode::heuristic;
  auto r = ball_max_loss(f, x, 1.0, 0.1, LossKind::hinge, cfg);
  // all-low corner: f = -0.4
  EXPECT_NEAR(r.value, 1.4, 1e-12);
}

TEST(BallMaxLoss, MatchesBreakpointEnumerationIn1d) {
  // grid finer than the smallest knot gap plus ascent reproduces the exact max
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    auto f = random_net(gen, {1, 5, 4});
    auto pwl = PiecewiseLinear1D::from_network(f);
    double min_gap = 1.0;
    for (std::size_t k = 1; k < pwl.size(); ++k) min_gap = std::min(min_gap, pwl.knots()[k] - pwl.knots()[k - 1]);
    const double delta = 0.08;
    AttackConfig cfg;
    cfg.grid_per_dim = static_cast<std::size_t>(std::ceil(2 * delta / min_gap)) + 3;
    cfg.grid_per_dim = std::min<std::size_t>(cfg.grid_per_dim, 20001);
    for (int i = 0; i < 20; ++i) {
      double x = u(gen);
      for (auto loss : {LossKind::hinge, LossKind::squared}) {
        auto exact = ball_max_loss_exact(f, pwl, x, 0.3, delta, loss);
        auto attack = ball_max_loss(f, std::vector<double>{x}, 0.3, delta, loss, cfg);
        EXPECT_NEAR(attack.value, exact.value, 1e-9 * (1 + exact.value));
        EXPECT_FALSE(exact.lower_bound);
      }
    }
  }
}

TEST(BallMaxLoss, MonotoneInDelta) {
  std::mt19937_64 gen(7);
  auto f = random_net(gen, {1, 6, 6});
  PwlRangeOracle oracle(f);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x{u(gen)};
    double prev = -1.0;
    for (double delta : {0.0, 0.01, 0.02, 0.05, 0.1}) {
      auto r = oracle.ball_range(x, delta);
      double v = loss_over_range(LossKind::hinge, r.min, r.max, 1.0);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(BallMaxLoss, ZeroOneEarlyExit) {
  auto f = affine_network({1.0}, -0.5);
  auto r = ball_max_loss(f, std::vector<double>{0.52}, 1.0, 0.05, LossKind::zero_one);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_LT(f.evaluate(r.witness), 0.0);
}

TEST(EmpiricalAdvRisk, DeltaZeroIsStandardRisk) {
  std::mt19937_64 gen(8);
  auto f = random_net(gen, {2, 6});
  auto ds = sample_classification(two_region_spec(2), 40, 1);
  auto r = empirical_adv_risk(f, ds, 0.0, LossKind::hinge);
  double plain = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) plain += loss_value(LossKind::hinge, f.evaluate(ds.xs[i]), ds.ys[i]);
  EXPECT_DOUBLE_EQ(r.value, plain / ds.size());
  EXPECT_FALSE(r.lower_bound);
}

TEST(EmpiricalAdvRisk, CertifiedStudentsAreGlobalMinima) {
  auto spec = two_region_spec(1);
  auto teacher = build_sup_approximant(spec.regression_function(), {.eps_target = 0.2});
  auto ds = sample_classification(spec, 60, 2);
  StudentParams p;
  p.delta = admissible_delta(separation(ds.xs), 1.0);
  p.tau = 0.05 * p.delta;
  p.eps = 0.2;
  auto hinge = build_classification_student(teacher.net, ds, p);
  EXPECT_EQ(empirical_adv_risk(hinge.net, ds, p.delta, LossKind::hinge).value, 0.0);
  EXPECT_EQ(empirical_adv_risk(hinge.net, ds, p.delta, LossKind::zero_one).value, 0.0);
  for (double beta : {0.5, 0.1, 0.01}) {
    auto logi = build_logistic_student(hinge, beta);
    EXPECT_NEAR(empirical_adv_risk(logi.net, ds, p.delta, LossKind::logistic).value, std::log1p(beta), 1e-12);
  }
  auto r = empirical_adv_risk(hinge.net, ds, p.delta, LossKind::hinge);
  std::ostringstream out;
  write_attack_trace(out, r);
  EXPECT_EQ(out.str().substr(0, 14), "index,w0,value");
}

TEST(McRisk, BayesClassifierGivesBayesRisk) {
  auto spec = two_region_spec(1);
  auto fc = spec.regression_function();
  // 2 eta - 1 is monotone in x, so the ball grid endpoints are its extremes
  FunctionRangeOracle bayes(1, [&](std::span<const double> x) { return fc(x); }, 3, true);
  auto r = mc_adv_risk(bayes, spec, 0.05, 100000, 3);
  const double truth = bayes_quantities(spec).bayes_risk;
  // the Rao-Blackwellized standard risk has zero variance here
  EXPECT_NEAR(r.standard.estimate, truth, 1e-12);
  // robust Bayes equals Bayes on separated specs
  EXPECT_NEAR(r.robust.estimate, truth, 1e-12);
  EXPECT_TRUE(r.dominated);
}

TEST(McRisk, ConstantClassifier) {
  ClassificationSpec s;
  s.dim = 1;
  s.region_a = {Box{{0.0}, {1.0}}};
  s.density = uniform_unit_cube(1);
  s.eta = CosineStep{1.0, 0.0, 1.0, 2.0};
  s.zeta = 0.4;
  s.validate();
  PwlRangeOracle plus(affine_network({0.0}, 1.0));
  auto r = mc_adv_risk(plus, s, 0.1, 5000, 1);
  EXPECT_EQ(r.standard.estimate, 0.0);
  EXPECT_EQ(r.robust.estimate, 0.0);
  auto two = mc_adv_risk(plus, two_region_spec(1), 0.1, 5000, 1);
  EXPECT_EQ(two.robust.estimate, two.standard.estimate);
  EXPECT_THROW(mc_adv_risk(plus, s, 0.1, 10, 1), InputError);
}

TEST(McRisk, RegressionTruthGivesNoiseVariance) {
  const double two_pi = 2.0 * std::numbers::pi;
  auto spec = make_regression_spec(sine_target(1.0 / (two_pi * two_pi), {1.0}, 0.0, 2), 0.1, 0.5, uniform_unit_cube(1));
  FunctionRangeOracle truth(1, [&](std::span<const double> x) { return spec.target(x); });
  auto r = mc_regression_risks(truth, truth, spec, 0.0, 100000, 4);
  EXPECT_LE(std::abs(r.standard.estimate - spec.effective_variance()), 3.0 * r.standard.std_error);
  EXPECT_EQ(r.excess_standard.estimate, 0.0);
  EXPECT_EQ(r.robust_excess_lower.estimate, 0.0);
}

TEST(McRisk, PairedEstimatesAreDominated) {
  std::mt19937_64 gen(9);
  auto f = random_net(gen, {1, 8, 8});
  PwlRangeOracle oracle(f);
  auto spec = two_region_spec(1);
  auto a = mc_adv_risk(oracle, spec, 0.03, 20000, 5, 4);
  EXPECT_TRUE(a.dominated);
  EXPECT_GE(a.robust.estimate, a.standard.estimate);
  EXPECT_GE(a.gap.estimate, 0.0);
  // thread count does not change the numbers
  auto b = mc_adv_risk(oracle, spec, 0.03, 20000, 5, 1);
  EXPECT_EQ(a.robust.estimate, b.robust.estimate);
  EXPECT_EQ(a.gap.std_error, b.gap.std_error);

  auto f2 = random_net(gen, {2, 6, 6});
  AttackConfig cfg;
  cfg.grid_per_dim = 3;
  cfg.random_restarts = 1;
  cfg.coord_ascent_iters = 5;
  AttackRangeOracle attack(f2, cfg);
  auto c = mc_adv_risk(attack, two_region_spec(2), 0.02, 2000, 6, 4);
  EXPECT_TRUE(c.dominated);
  EXPECT_NE(c.bias_note.find("lower-bound"), std::string::npos);

  auto rs = make_regression_spec(sine_target(0.1, {1.0}, 0.0, 2), 0.1, 0.5, uniform_unit_cube(1));
  FunctionRangeOracle truth(1, [&](std::span<const double> x) { return rs.target(x); });
  auto rr = mc_regression_risks(oracle, truth, rs, 0.02, 5000, 7, 2);
  EXPECT_TRUE(rr.dominated);
  EXPECT_GE(rr.robust.estimate, rr.standard.estimate);
}
