#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace spoq;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector x(static_cast<Index>(v.size()));
  Index i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

SparseMatrix identity(Index n) {
  SparseMatrix d(n, n);
  d.setIdentity();
  return d;
}

Problem identity_problem(const Vector& y, double xi, double x_max) {
  Problem pb;
  pb.D = identity(y.size());
  pb.y = y;
  pb.xi = xi;
  pb.x_max = x_max;
  return pb;
}

InnerOptions options(double kappa) {
  InnerOptions o;
  o.kappa = kappa;
  return o;
}

} // namespace

TEST(ProjectBox, IdentityInside) {
  const Vector u = vec({0.2, 0.9, 0.0});
  EXPECT_EQ(project_box(u, 0.0, 1.0), u);
}

TEST(ProjectBox, ClampsOutside) { EXPECT_EQ(project_box(vec({-1.0, 2.0}), 0.0, 1.0), vec({0.0, 1.0})); }

TEST(ProjectBox, Idempotent) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  Vector u(10);
  for (Index i = 0; i < 10; ++i) u[i] = g(rng);
  const Vector p = project_box(u, -1.0, 2.0);
  EXPECT_EQ(project_box(p, -1.0, 2.0), p);
}

TEST(ProjectBox, RejectsInvertedBounds) { EXPECT_THROW(project_box(vec({1.0}), 1.0, 0.0), InputError); }

TEST(ProjectBall, CenterIsFixed) {
  const Vector c = vec({1.0, -2.0});
  EXPECT_EQ(project_ball(c, c, 0.5), c);
}

TEST(ProjectBall, TwiceRadiusLandsOnSphere) {
  const Vector c = vec({1.0, 1.0});
  const Vector v = vec({1.0, 5.0});
  const Vector p = project_ball(v, c, 2.0);
  EXPECT_NEAR((p - c).norm(), 2.0, 1e-15);
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 3.0, 1e-15);
}

TEST(ProjectBall, OutputInsideBall) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 10.0);
  for (int t = 0; t < 1000; ++t) {
    Vector v(5), c(5);
    for (Index i = 0; i < 5; ++i) {
      v[i] = g(rng);
      c[i] = g(rng);
    }
    const double r = 0.1 + std::abs(g(rng));
    EXPECT_LE((project_ball(v, c, r) - c).norm(), r * (1.0 + 1e-12));
  }
}

TEST(Projections, Nonexpansive) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 4.0);
  const Vector c = vec({0.5, -1.0, 2.0});
  for (int t = 0; t < 1000; ++t) {
    Vector u(3), v(3);
    for (Index i = 0; i < 3; ++i) {
      u[i] = g(rng);
      v[i] = g(rng);
    }
    const double d = (u - v).norm();
    EXPECT_LE((project_box(u, 0.0, 1.0) - project_box(v, 0.0, 1.0)).norm(), d * (1.0 + 1e-12));
    EXPECT_LE((project_ball(u, c, 1.5) - project_ball(v, c, 1.5)).norm(), d * (1.0 + 1e-12));
  }
}

TEST(ProjectBall, RejectsNonPositiveRadius) { EXPECT_THROW(project_ball(vec({1.0}), vec({0.0}), 0.0), InputError); }

TEST(KappaBound, Examples) {
  EXPECT_DOUBLE_EQ(kappa_bound(1.0, 4.0), 2.0);
  EXPECT_DOUBLE_EQ(kappa_bound(0.5, 1.0), 2.0);
  EXPECT_THROW(kappa_bound(0.0, 1.0), InputError);
}

TEST(PhiValue, IndicatorOfBoxAndBall) {
  const Problem pb = identity_problem(vec({1.0, 1.0}), 0.5, 2.0);
  EXPECT_EQ(phi_value(vec({1.0, 1.2}), pb), 0.0);
  EXPECT_TRUE(std::isinf(phi_value(vec({1.0, 2.0}), pb)));
  EXPECT_TRUE(std::isinf(phi_value(vec({-1e-9, 1.0}), pb)));
  EXPECT_EQ(phi_value(vec({1.0, 1.5 + 1e-7}), pb), 0.0);
}

TEST(Thresholds, SoftAndHard) {
  EXPECT_EQ(soft_threshold(vec({3.0, -0.5}), 1.0), vec({2.0, 0.0}));
  EXPECT_EQ(soft_threshold(vec({-3.0}), 1.0), vec({-2.0}));
  EXPECT_EQ(hard_threshold(vec({3.0, -0.5, -2.0}), 1.0), vec({3.0, 0.0, -2.0}));
}

TEST(ScalarProx, MatchesDenseScan) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 6.0);
  const std::vector<PenaltySpec> specs{L1Penalty{}, L0Penalty{}, ScadPenalty{0.8, 2.5}, Cel0Penalty{0.6}};
  for (const auto& spec : specs) {
    const auto pieces = nonnegative_pieces(spec, 1.3);
    const Vector norms = vec({1.3});
    for (int t = 0; t < 50; ++t) {
      const double v = u(rng), tau = 0.3 + std::abs(u(rng)) / 3.0;
      const double xs = scalar_prox(v, tau, pieces, 4.0);
      auto f = [&](double x) { return 0.5 * (x - v) * (x - v) + tau * baseline_value(vec({x}), spec, &norms); };
      double best = f(0.0);
      for (int j = 0; j <= 40000; ++j) best = std::min(best, f(4.0 * j / 40000.0));
      EXPECT_LE(f(xs), best + 1e-9) << penalty_name(spec) << " v=" << v;
      EXPECT_GE(xs, 0.0);
      EXPECT_LE(xs, 4.0);
    }
  }
}

TEST(ProxMetricPhi, InactiveConstraintsReturnInput) {
  const Vector xbar = vec({0.3, 0.7, 0.1});
  const Problem pb = identity_problem(xbar, 1e6, 1e5);
  const auto res = prox_metric_phi(xbar, vec({1.0, 2.0, 3.0}), 1.0, pb, options(1.0), Vector::Zero(3), xbar);
  EXPECT_LE((res.z - xbar).norm(), 1e-15);
  EXPECT_TRUE(res.accepted());
}

TEST(ProxMetricPhi, BallAndOrthantMatchesGridOracle) {
  const Problem pb = identity_problem(Vector::Zero(2), 0.5, std::numeric_limits<double>::infinity());
  const Vector w = Vector::Ones(2);
  for (const Vector& xbar : {vec({1.0, 0.8}), vec({1.0, -0.5}), vec({-2.0, 3.0})}) {
    const auto res = prox_metric_phi(xbar, w, 1.0, pb, options(1.0), Vector::Zero(2), xbar);
    const Vector closed = project_ball(project_box(xbar, 0.0, INFINITY), pb.y, pb.xi);
    Problem finite = pb;
    finite.x_max = 10.0;
    const auto oracle = spoq::testing::grid_prox_2d(xbar, w, finite);
    EXPECT_LE((res.z - closed).norm(), 1e-10);
    EXPECT_LE((res.z - oracle.z).norm(), 1e-8);
    // KKT: z - xbar + lambda z + n_box = 0 with lambda >= 0 and n_box in the orthant normal cone.
    const Vector g = res.z - xbar + res.lambda * (res.z - pb.y);
    for (Index i = 0; i < 2; ++i) {
      if (res.z[i] > 0.0) EXPECT_LE(std::abs(g[i]), 1e-8);
      else EXPECT_GE(g[i], -1e-8);
    }
  }
}

TEST(ProxMetricPhi, RandomTwoDimensionalInstancesAreCertified) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int hits = 0;
  for (int t = 0; t < 20; ++t) {
    Problem pb;
    DenseMatrix d(2, 2);
    d << 0.5 + u(rng), 0.3 * u(rng), 0.3 * u(rng), 0.5 + u(rng);
    pb.D = d.sparseView();
    const Vector xt = vec({3.0 * u(rng), 3.0 * u(rng)});
    pb.y = pb.D * xt + vec({0.2 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5)});
    pb.xi = 0.2 + 0.5 * u(rng);
    pb.x_max = 5.0;
    const Vector anchor = xt.cwiseMin(pb.x_max);
    if (!std::isfinite(phi_value(anchor, pb))) continue;
    const Vector a = vec({0.5 + 5.0 * u(rng), 0.5 + 5.0 * u(rng)});
    const Vector grad = vec({4.0 * (u(rng) - 0.5), 4.0 * (u(rng) - 0.5)});
    const double gamma = 1.9;
    const Vector xbar = anchor - gamma * grad.cwiseQuotient(a);
    const double kappa = kappa_bound(gamma, a.maxCoeff());
    const auto res = prox_metric_phi(xbar, a, gamma, pb, options(kappa), grad, anchor);
    const auto oracle = spoq::testing::grid_prox_2d(xbar, a / gamma, pb);
    EXPECT_TRUE(res.accepted());
    EXPECT_LE((res.z - oracle.z).norm(), 1e-7 * (1.0 + oracle.z.norm()))
        << "lib " << res.z.transpose() << " f=" << 0.5 * weighted_sq_norm(res.z - xbar, a / gamma)
        << " r=" << pb.residual_norm(res.z) / pb.xi << " | oracle " << oracle.z.transpose() << " f=" << oracle.value
        << " r=" << pb.residual_norm(oracle.z) / pb.xi << " xbar " << xbar.transpose();
    ++hits;
  }
  EXPECT_GE(hits, 10);
}

TEST(ProxMetricPhi, ZeroRadiusIsConfigError) {
  const Problem pb = identity_problem(vec({1.0}), 0.0, 10.0);
  EXPECT_THROW(prox_metric_phi(vec({1.0}), vec({1.0}), 1.0, pb, options(1.0), vec({0.0}), vec({1.0})), ConfigError);
}

TEST(ProxMetricPhi, RejectsBadArguments) {
  const Problem pb = identity_problem(vec({1.0, 1.0}), 1.0, 10.0);
  const Vector x = vec({1.0, 1.0});
  EXPECT_THROW(prox_metric_phi(x, vec({1.0, -1.0}), 1.0, pb, options(1.0), x, x), InputError);
  EXPECT_THROW(prox_metric_phi(x, vec({1.0, 1.0}), 0.0, pb, options(1.0), x, x), InputError);
  EXPECT_THROW(prox_metric_phi(x, vec({1.0}), 1.0, pb, options(1.0), x, x), InputError);
  EXPECT_THROW(prox_metric_phi(x, vec({1.0, 1.0}), 1.0, pb, options(0.0), x, x), InputError);
}

TEST(InexactConditions, IndependentRecomputation) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 30; ++t) {
    const Index n = 6;
    Problem pb;
    DenseMatrix d = DenseMatrix::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) d(i, j) = std::abs(i - j) <= 1 ? u(rng) : 0.0;
    pb.D = d.sparseView();
    Vector xt(n);
    for (Index i = 0; i < n; ++i) xt[i] = u(rng) < 0.5 ? 0.0 : 5.0 * u(rng);
    pb.y = pb.D * xt;
    pb.xi = 0.3;
    pb.x_max = 10.0;
    Vector a(n), g(n);
    for (Index i = 0; i < n; ++i) {
      a[i] = std::pow(10.0, 4.0 * u(rng));
      g[i] = 20.0 * (u(rng) - 0.5);
    }
    const double gamma = 1.9;
    const Vector xbar = xt - gamma * g.cwiseQuotient(a);
    const double kappa = kappa_bound(gamma * 0.5, a.maxCoeff());
    const auto res = prox_metric_phi(xbar, a, gamma, pb, options(kappa), g, xt);
    ASSERT_TRUE(res.accepted());
    const Vector step = res.z - xt;
    const double lhs_a = phi_value(res.z, pb) + step.dot(g) + weighted_sq_norm(step, a) / gamma;
    EXPECT_LE(lhs_a, 1e-9 * (std::abs(step.dot(g)) + weighted_sq_norm(step, a) / gamma));
    EXPECT_LE((g + res.r).norm(), kappa * std::sqrt(weighted_sq_norm(step, a)) * (1.0 + 1e-9) + 1e-12);
    EXPECT_TRUE(in_box(res.z, pb.x_max));
    EXPECT_LE(pb.residual_norm(res.z), pb.xi * (1.0 + kFeasibilityTolerance));
  }
}
