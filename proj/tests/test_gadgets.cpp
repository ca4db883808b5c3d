#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "relulab/gadgets.hpp"

using namespace relulab;

namespace {

double eval1(const ReluNetwork& n, double x) { return n.evaluate(std::vector<double>{x}); }
double eval2(const ReluNetwork& n, double x, double y) { return n.evaluate(std::vector<double>{x, y}); }

// Piecewise formula written out by hand.
double trapezoid_oracle(double t, double a, double b, double th) {
  if (t <= a - th || t >= b + th) return 0.0;
  if (t >= a && t <= b) return 1.0;
  if (t < a) return (t - (a - th)) / th;
  return ((b + th) - t) / th;
}

// Linear interpolation of t^2 at the nodes k / 2^m.
double dyadic_interpolant(double t, int m) {
  double h = std::ldexp(1.0, -m);
  double k = std::floor(t / h);
  if (k >= std::ldexp(1.0, m)) k -= 1.0;
  double x0 = k * h, x1 = x0 + h;
  return x0 * x0 + (x1 * x1 - x0 * x0) * (t - x0) / h;
}

}  // namespace

TEST(Trapezoid, HandValues) {
  auto t = trapezoid(0.3, 0.5, 0.05);
  EXPECT_EQ(t.width(0), 4u);
  EXPECT_EQ(t.depth(), 1u);
  EXPECT_NEAR(eval1(t, 0.25), 0.0, 1e-12);
  EXPECT_NEAR(eval1(t, 0.4), 1.0, 1e-9);
  EXPECT_NEAR(eval1(t, 0.275), 0.5, 1e-9);
}

TEST(Trapezoid, MatchesPiecewiseOracle) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 20; ++c) {
    double a = 0.6 * u(gen), b = a + 0.01 + 0.3 * u(gen), th = 0.001 + 0.2 * u(gen);
    auto t = trapezoid(a, b, th);
    for (int i = 0; i <= 1000; ++i) {
      double x = -0.2 + 1.4 * i / 1000.0;
      EXPECT_NEAR(eval1(t, x), trapezoid_oracle(x, a, b, th), 1e-9);
    }
  }
  EXPECT_THROW(trapezoid(0.5, 0.5, 0.1), PreconditionError);
  EXPECT_THROW(trapezoid(0.6, 0.5, 0.1), PreconditionError);
}

TEST(BoxIndicator, HandValues) {
  auto g = box_indicator({0.4, 0.4}, 0.1, 0.05);
  EXPECT_EQ(g.depth(), 2u);
  EXPECT_EQ(eval2(g, 0.4, 0.4), 1.0);
  EXPECT_EQ(eval2(g, 0.2, 0.4), 0.0);
  EXPECT_NEAR(eval2(g, 0.275, 0.4), 0.5, 1e-9);
}

TEST(BoxIndicator, MatchesTrapezoidSumFormula) {
  // sigma(sum_k T(x_k) - (d - 1)) evaluated from the scalar oracle
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 10; ++c) {
    std::size_t d = 1 + c % 3;
    std::vector<double> center(d);
    for (auto& v : center) v = 0.2 + 0.6 * u(gen);
    double delta = 0.02 + 0.1 * u(gen), th = 0.005 + 0.05 * u(gen);
    auto g = box_indicator(center, delta, th);
    for (int i = 0; i < 2000; ++i) {
      std::vector<double> x(d);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        x[k] = center[k] + (u(gen) - 0.5) * 2.5 * (delta + th);
        s += trapezoid_oracle(x[k], center[k] - delta, center[k] + delta, th);
      }
      EXPECT_NEAR(g.evaluate(x), std::max(0.0, s - (d - 1.0)), 1e-9);
    }
  }
}

TEST(BoxIndicator, FarFieldIsExactlyZeroForTinyRamp) {
  auto g = box_indicator({0.5}, 1e-5, 1e-6);
  for (double x : {0.0, 0.3, 0.49, 0.51, 1.0}) EXPECT_EQ(eval1(g, x), 0.0);
  EXPECT_EQ(eval1(g, 0.5), 1.0);
  EXPECT_EQ(eval1(g, 0.5 - 1e-5), 1.0);
}

TEST(SquareGate, EndpointsAndAccuracy) {
  for (int m = 1; m <= 8; ++m) {
    auto sq = square_gate(m);
    EXPECT_EQ(sq.depth(), static_cast<std::size_t>(m + 1));
    EXPECT_EQ(eval1(sq, 0.0), 0.0);
    EXPECT_EQ(eval1(sq, 1.0), 1.0);
    double worst = 0.0, interp = 0.0;
    for (int i = 0; i <= 10000; ++i) {
      double t = i / 10000.0;
      worst = std::max(worst, std::abs(eval1(sq, t) - t * t));
      interp = std::max(interp, std::abs(eval1(sq, t) - dyadic_interpolant(t, m)));
    }
    EXPECT_LE(worst, std::ldexp(1.0, -2 * m - 2) + 1e-15) << "m=" << m;
    EXPECT_LE(interp, 1e-12) << "m=" << m;
  }
  EXPECT_THROW(square_gate(0), PreconditionError);
}

TEST(ProductGate, HandExamples) {
  for (double eps : {1.0 / 16, 1.0 / 64, 1.0 / 256, 1e-4}) {
    auto g = product_gate(eps);
    EXPECT_EQ(eval2(g, 0.0, 0.7), 0.0);
    EXPECT_LE(std::abs(eval2(g, 1.0, 1.0) - 1.0), eps);
    EXPECT_LE(std::abs(eval2(g, 0.5, -0.5) + 0.25), eps);
  }
}

TEST(ProductGate, GridAccuracyAndAnnihilation) {
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double eps : {1.0 / 16, 1.0 / 64, 1.0 / 256}) {
    auto g = product_gate(eps);
    double worst = 0.0;
    for (int i = 0; i <= 200; ++i)
      for (int j = 0; j <= 200; ++j) {
        double x = -1.0 + i / 100.0, y = -1.0 + j / 100.0;
        worst = std::max(worst, std::abs(eval2(g, x, y) - x * y));
      }
    EXPECT_LE(worst, eps);
    for (int i = 0; i < 1000; ++i) {
      double v = u(gen);
      EXPECT_EQ(eval2(g, 0.0, v), 0.0);
      EXPECT_EQ(eval2(g, v, 0.0), 0.0);
      // also outside [-1, 1]
      EXPECT_EQ(eval2(g, 0.0, 40.0 * v), 0.0);
      EXPECT_EQ(eval2(g, 40.0 * v, 0.0), 0.0);
    }
  }
}

TEST(ProductGate, DepthGrowsLogarithmically) {
  auto a = product_gate(1.0 / 16), b = product_gate(1.0 / 256), c = product_gate(1.0 / 65536);
  EXPECT_LT(a.depth(), b.depth());
  EXPECT_LT(b.depth(), c.depth());
  // four more bits of accuracy cost two chain layers
  EXPECT_LE(c.depth() - b.depth(), 4u + 1u);
  EXPECT_LE(nonzero_param_count(c), 4 * nonzero_param_count(a));
}

TEST(ProductGate, ChoiceMeetsBudget) {
  for (double eps : {0.2, 0.05, 0.0039, 1e-5}) {
    auto choice = choose_product_gate(eps);
    EXPECT_LE(choice.grid_error, eps);
    EXPECT_LE(std::pow(4.0, -(choice.m + 1)), eps);
  }
  EXPECT_THROW(product_gate(0.0), PreconditionError);
  EXPECT_THROW(product_gate(1.0), PreconditionError);
}

TEST(ProductGate, UnitSecondInputIsExactInRealArithmetic) {
  auto g = product_gate(1.0 / 64);
  for (int i = 0; i <= 100; ++i) {
    double u = -1.0 + i / 50.0;
    EXPECT_NEAR(eval2(g, u, 1.0), u, 1e-12);
  }
}

TEST(ScaledProduct, ScaledContract) {
  const double c = 3.5, eps = 1.0 / 256;
  auto g = scaled_product(c, eps);
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(-c, c), v(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    double a = u(gen), b = v(gen);
    EXPECT_LE(std::abs(eval2(g, a, b) - a * b), c * eps + 1e-12);
    EXPECT_EQ(eval2(g, a, 0.0), 0.0);
  }
  EXPECT_LE(std::abs(eval2(g, c, 1.0) - c), c * eps);
  EXPECT_EQ(eval2(g, 0.0, 0.5), 0.0);
  EXPECT_THROW(scaled_product(0.0, eps), PreconditionError);
}

TEST(GadgetParams, Validation) {
  GadgetParams p;
  EXPECT_NO_THROW(p.validate());
  p.a = 2.0;
  EXPECT_THROW(p.validate(), PreconditionError);
  p = GadgetParams{};
  p.theta = 0.0;
  EXPECT_THROW(p.validate(), PreconditionError);
  p = GadgetParams{};
  p.eps = 1.0;
  EXPECT_THROW(p.validate(), PreconditionError);
}
