#pragma once

#include <cmath>
#include <limits>
#include <random>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <spoq/spoq.hpp>

namespace spoq::testing {

using BigFloat = boost::multiprecision::cpp_bin_float_50;

/// SPOQ value in 50-digit arithmetic, straight from the definition.
inline double spoq_value_hp(const Vector& x, const SpoqParams& prm) {
  using boost::multiprecision::abs;
  using boost::multiprecision::log;
  using boost::multiprecision::pow;
  const BigFloat p = prm.p, q = prm.q, a = prm.alpha, b = prm.beta, e = prm.eta;
  BigFloat lp = 0, lq = pow(e, q);
  for (Index n = 0; n < x.size(); ++n) {
    const BigFloat xn = x[n];
    lp += pow(xn * xn + a * a, p / 2) - pow(a, p);
    lq += pow(abs(xn), q);
  }
  const BigFloat v = log(lp + pow(b, p)) / p - log(lq) / q;
  return v.convert_to<double>();
}

/// Central differences with step 1e-6 max(1, |x_n|).
template <class F> Vector central_difference(const F& f, const Vector& x) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Index n = 0; n < x.size(); ++n) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[n]));
    xp[n] = x[n] + h;
    xm[n] = x[n] - h;
    g[n] = (f(xp) - f(xm)) / ((xp[n] - x[n]) + (x[n] - xm[n]));
    xp[n] = x[n];
    xm[n] = x[n];
  }
  return g;
}

/// Sparse signed vector: about 30% exact zeros, magnitudes log-uniform on [lo, hi].
inline Vector random_sparse(std::mt19937_64& rng, Index n, double lo = 1e-2, double hi = 10.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(n);
  for (Index i = 0; i < n; ++i) {
    if (u(rng) < 0.3) {
      x[i] = 0.0;
      continue;
    }
    const double mag = lo * std::pow(hi / lo, u(rng));
    x[i] = u(rng) < 0.5 ? -mag : mag;
  }
  return x;
}

/// Result of the brute-force metric prox in two dimensions.
struct GridProx {
  Vector z;
  double value = std::numeric_limits<double>::infinity();
};

/// argmin over [0, x_max]^2 with ||D z - y|| <= xi of 1/2 ||z - xbar||^2_W, D invertible 2 x 2.
/// Candidates: the box-only minimizer; each box face, where the ball cuts an exact interval; and the
/// ball boundary, parametrized by angle and scanned on a dense grid refined around each local best.
inline GridProx grid_prox_2d(const Vector& xbar, const Vector& w, const Problem& pb) {
  const DenseMatrix d(pb.D);
  const DenseMatrix dinv = d.inverse();
  const double ub = pb.x_max;
  GridProx best;
  best.z = Vector::Zero(2);
  auto objective = [&](const Vector& z) { return 0.5 * weighted_sq_norm(z - xbar, w); };
  auto consider = [&](const Vector& z, double ball_slack) {
    if ((z.array() < 0.0).any() || (z.array() > ub).any()) return;
    if ((d * z - pb.y).norm() > pb.xi * (1.0 + ball_slack)) return;
    const double v = objective(z);
    if (v < best.value) {
      best.value = v;
      best.z = z;
    }
  };

  consider(xbar.cwiseMax(0.0).cwiseMin(ub), 0.0);

  for (int i = 0; i < 2; ++i)
    for (double face : {0.0, ub}) {
      if (!std::isfinite(face)) continue;
      const int j = 1 - i;
      const Vector a = d.col(j);
      const Vector b = d.col(i) * face - pb.y;
      const double qa = a.squaredNorm(), qb = 2.0 * a.dot(b), qc = b.squaredNorm() - pb.xi * pb.xi;
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc < 0.0) continue;
      double lo = (-qb - std::sqrt(disc)) / (2.0 * qa), hi = (-qb + std::sqrt(disc)) / (2.0 * qa);
      lo = std::max(lo, 0.0);
      hi = std::min(hi, ub);
      if (lo > hi) continue;
      Vector z(2);
      z[i] = face;
      z[j] = std::clamp(xbar[j], lo, hi);
      consider(z, 1e-12);
    }

  auto on_circle = [&](double t) {
    Vector u(2);
    u << std::cos(t), std::sin(t);
    return Vector(dinv * (pb.y + pb.xi * u));
  };
  auto arc_value = [&](double t) {
    const Vector z = on_circle(t);
    if ((z.array() < 0.0).any() || (z.array() > ub).any()) return std::numeric_limits<double>::infinity();
    return objective(z);
  };
  const int k = 100000;
  const double two_pi = 2.0 * std::acos(-1.0);
  std::vector<double> vals(k);
  for (int s = 0; s < k; ++s) vals[s] = arc_value(two_pi * s / k);
  for (int s = 0; s < k; ++s) {
    const double v = vals[s];
    if (!std::isfinite(v) || v > vals[(s + 1) % k] || v > vals[(s + k - 1) % k]) continue;
    double lo = two_pi * (s - 1) / k, hi = two_pi * (s + 1) / k;
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
      const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
      if (arc_value(m1) <= arc_value(m2)) hi = m2;
      else lo = m1;
    }
    consider(on_circle(0.5 * (lo + hi)), 1e-12);
  }
  return best;
}

} // namespace spoq::testing
