#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <boost/math/tools/toms748_solve.hpp>

#include "core.hpp"
#include "penalties.hpp"

namespace spoq {

/// Constrained recovery problem: x in [0, x_max]^N and ||D x - y|| <= xi.
struct Problem {
  Vector y;
  SparseMatrix D;
  double xi = 0.0;
  double x_max = 1e5;
  double sigma = 0.0;

  Index n() const { return D.cols(); }
  Index m() const { return D.rows(); }

  /// xi = sqrt(N) sigma.
  static Problem from_noise_level(SparseMatrix D, Vector y, double sigma, double x_max = 1e5) {
    Problem pb;
    pb.xi = std::sqrt(static_cast<double>(D.cols())) * sigma;
    pb.D = std::move(D);
    pb.y = std::move(y);
    pb.sigma = sigma;
    pb.x_max = x_max;
    pb.validate();
    return pb;
  }

  void validate() const {
    if (D.rows() != y.size()) throw InputError("Problem: D rows must match y");
    require_finite(y, "Problem.y");
    if (!(xi >= 0.0) || !std::isfinite(xi)) throw InputError("Problem: xi must be finite and >= 0");
    if (!(x_max > 0.0)) throw InputError("Problem: x_max must be > 0");
  }

  double residual_norm(const Vector& x) const { return (D * x - y).norm(); }

  Vector column_norms() const {
    Vector c(D.cols());
    for (Index j = 0; j < D.cols(); ++j) c[j] = D.col(j).norm();
    return c;
  }
};

/// Ball feasibility slack relative to xi.
inline constexpr double kFeasibilityTolerance = 1e-6;

inline Vector project_box(const Vector& u, double lo, double hi) {
  if (!(lo <= hi)) throw InputError("project_box: lo > hi");
  return u.cwiseMax(lo).cwiseMin(hi);
}

inline Vector project_ball(const Vector& v, const Vector& center, double radius) {
  if (!(radius > 0.0)) throw InputError("project_ball: radius must be > 0");
  const Vector d = v - center;
  const double nd = d.norm();
  if (nd <= radius) return v;
  return center + (radius / nd) * d;
}

inline bool in_box(const Vector& x, double x_max) {
  return (x.array() >= 0.0).all() && (x.array() <= x_max).all();
}

/// Phi = iota_C + iota_B(y, xi) o D, with ball slack tol * xi.
inline double phi_value(const Vector& x, const Problem& pb, double tol = kFeasibilityTolerance) {
  if (!in_box(x, pb.x_max)) return std::numeric_limits<double>::infinity();
  return pb.residual_norm(x) <= pb.xi * (1.0 + tol) ? 0.0 : std::numeric_limits<double>::infinity();
}

/// Smallest kappa for which the exact metric prox passes the subgradient condition.
inline double kappa_bound(double gamma_lo, double nu_hi) {
  if (!(gamma_lo > 0.0) || !(nu_hi > 0.0)) throw InputError("kappa_bound: arguments must be > 0");
  return std::sqrt(nu_hi) / gamma_lo;
}

// ---------------------------------------------------------------------------
// Scalar proximity operators for the separable baselines, restricted to [0, x_max].
// ---------------------------------------------------------------------------

/// argmin_{x in [0, x_max]} (x - v)^2 / 2 + tau psi(x) over a piecewise quadratic psi.
inline double scalar_prox(double v, double tau, const std::vector<QuadraticPiece>& pieces, double x_max) {
  double best_x = 0.0;
  double best_f = std::numeric_limits<double>::infinity();
  auto consider = [&](double x, const QuadraticPiece& pc) {
    const double f = 0.5 * (x - v) * (x - v) + tau * pc(x);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  };
  for (const auto& pc : pieces) {
    const double lo = std::min(pc.lo, x_max);
    const double hi = std::min(pc.hi, x_max);
    if (lo > hi) continue;
    consider(lo, pc);
    if (hi > lo) {
      const double curv = 1.0 + 2.0 * tau * pc.c2;
      if (curv > 0.0) {
        const double xs = std::clamp((v - tau * pc.c1) / curv, lo, hi);
        consider(xs, pc);
      }
      // Open right end: approach from inside; the next piece owns hi itself.
      if (std::isfinite(hi)) consider(std::nextafter(hi, lo), pc);
    }
  }
  return best_x;
}

inline Vector soft_threshold(const Vector& v, double t) {
  return v.unaryExpr([t](double a) { return sign(a) * std::max(std::abs(a) - t, 0.0); });
}

inline Vector hard_threshold(const Vector& v, double t) {
  return v.unaryExpr([t](double a) { return std::abs(a) > t ? a : 0.0; });
}

// ---------------------------------------------------------------------------
// Metric proximity operator of Phi (inexact).
// ---------------------------------------------------------------------------

struct InnerSolveResult {
  Vector z;
  Vector r; ///< subgradient certificate in dPhi(z)
  bool cond_a_satisfied = false;
  bool cond_b_satisfied = false;
  int iterations_used = 0;
  double lambda = 0.0;        ///< ball multiplier, reusable as a warm start
  double ball_residual = 0.0; ///< ||D z - y||

  bool accepted() const { return cond_a_satisfied && cond_b_satisfied; }
};

struct InnerOptions {
  int max_inner = 5000;
  double kappa = 0.0;
  double feas_tol = kFeasibilityTolerance;
  double lambda_init = 0.0;           ///< 0 picks a scale-based guess
  const SparseMatrix* gram = nullptr; ///< D^T D, computed on demand when absent
};

/// Condition (a): Phi(z) + (z - x)^T grad + gamma^{-1} ||z - x||_A^2 <= Phi(x), with a
/// relative rounding slack on the left-hand side.
inline bool inexact_condition_a(double phi_z, double phi_x, const Vector& step, const Vector& grad,
                                const Vector& metric_diag, double gamma) {
  if (!std::isfinite(phi_z)) return false;
  const double lin = step.dot(grad);
  const double quad = weighted_sq_norm(step, metric_diag) / gamma;
  const double slack = 1e-10 * (std::abs(lin) + quad);
  return phi_z + lin + quad <= phi_x + slack;
}

/// Condition (b): ||grad + r|| <= kappa ||z - x||_A.
inline bool inexact_condition_b(const Vector& grad, const Vector& r, const Vector& step,
                                const Vector& metric_diag, double kappa) {
  const double lhs = (grad + r).norm();
  const double rhs = kappa * std::sqrt(weighted_sq_norm(step, metric_diag));
  return lhs <= rhs * (1.0 + 1e-12) || lhs == 0.0;
}

namespace detail {

/// min_z 1/2 (z - xbar)^T W (z - xbar) + lambda/2 ||D z - y||^2 over [0, ub]^N.
struct BoxQp {
  const Vector& w;
  const Vector& xbar;
  const SparseMatrix& gram; // D^T D
  const Vector& dty;        // D^T y
  double lambda;
  double ub;

  Vector gradient(const Vector& z) const {
    Vector g = w.cwiseProduct(z - xbar);
    if (lambda > 0.0) g += lambda * (gram * z - dty);
    return g;
  }
  Vector hess_times(const Vector& d) const {
    Vector h = w.cwiseProduct(d);
    if (lambda > 0.0) h += lambda * (gram * d);
    return h;
  }
};

/// Projected Newton (Bertsekas) with Newton systems restricted to the free variables.
/// Returns the number of iterations; z is the warm start on entry.
inline int solve_box_qp(const BoxQp& qp, Vector& z, int max_iter) {
  const Index n = z.size();
  z = z.cwiseMax(0.0).cwiseMin(qp.ub);
  Vector hdiag = qp.w;
  if (qp.lambda > 0.0) hdiag += qp.lambda * qp.gram.diagonal();
  std::vector<Index> pos(static_cast<std::size_t>(n), -1);
  int it = 0;
  while (it < max_iter) {
    ++it;
    const Vector g = qp.gradient(z);
    const Vector pz = (z - g.cwiseQuotient(hdiag)).cwiseMax(0.0).cwiseMin(qp.ub);
    const double kkt = (pz - z).cwiseAbs().maxCoeff();
    if (kkt <= 1e-14 * (1.0 + z.cwiseAbs().maxCoeff())) break;
    const double eps = std::min(kkt, 1e-9 * (1.0 + z.cwiseAbs().maxCoeff()));

    std::vector<Index> free;
    free.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const bool at_lo = z[i] <= eps && g[i] > 0.0;
      const bool at_hi = z[i] >= qp.ub - eps && g[i] < 0.0;
      if (!at_lo && !at_hi) free.push_back(i);
    }
    Vector d = -g.cwiseQuotient(hdiag);
    if (!free.empty()) {
      const Index nf = static_cast<Index>(free.size());
      for (Index k = 0; k < nf; ++k) pos[static_cast<std::size_t>(free[static_cast<std::size_t>(k)])] = k;
      DenseMatrix h = DenseMatrix::Zero(nf, nf);
      Vector gf(nf);
      for (Index k = 0; k < nf; ++k) {
        const Index j = free[static_cast<std::size_t>(k)];
        gf[k] = g[j];
        h(k, k) += qp.w[j];
        if (qp.lambda > 0.0)
          for (SparseMatrix::InnerIterator e(qp.gram, j); e; ++e) {
            const Index p = pos[static_cast<std::size_t>(e.row())];
            if (p >= 0) h(p, k) += qp.lambda * e.value();
          }
      }
      for (Index k = 0; k < nf; ++k) pos[static_cast<std::size_t>(free[static_cast<std::size_t>(k)])] = -1;
      // Symmetric diagonal scaling before factoring.
      const Vector s = h.diagonal().cwiseSqrt().cwiseInverse();
      const DenseMatrix hs = s.asDiagonal() * h * s.asDiagonal();
      Vector df;
      Eigen::LLT<DenseMatrix> llt(hs);
      if (llt.info() == Eigen::Success) {
        df = s.cwiseProduct(llt.solve(-s.cwiseProduct(gf)));
      } else {
        Eigen::LDLT<DenseMatrix> ldlt(hs);
        df = s.cwiseProduct(ldlt.solve(-s.cwiseProduct(gf)));
      }
      for (Index k = 0; k < nf; ++k) d[free[static_cast<std::size_t>(k)]] = df[k];
    }

    // Armijo search along the projection arc.
    double t = 1.0;
    Vector zt;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      zt = (z + t * d).cwiseMax(0.0).cwiseMin(qp.ub);
      const Vector dz = zt - z;
      const double change = g.dot(dz) + 0.5 * dz.dot(qp.hess_times(dz));
      if (change <= 1e-4 * g.dot(dz) || dz.cwiseAbs().maxCoeff() == 0.0) {
        moved = dz.cwiseAbs().maxCoeff() > 0.0;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
    z = std::move(zt);
  }
  return it;
}

} // namespace detail

/// Metric prox of Phi: argmin_z Phi(z) + 1/(2 gamma) ||z - xbar||_A^2 with A = Diag(metric_diag).
/// The ball multiplier is located by a bracketed root search; for each multiplier a box-constrained
/// QP is solved by projected Newton. Conditions (a) and (b) are evaluated against
/// (anchor, grad_at_anchor) and reported.
inline InnerSolveResult prox_metric_phi(const Vector& xbar, const Vector& metric_diag, double gamma,
                                        const Problem& pb, const InnerOptions& opt,
                                        const Vector& grad_at_anchor, const Vector& anchor) {
  const Index n = xbar.size();
  if (metric_diag.size() != n || anchor.size() != n || grad_at_anchor.size() != n || pb.n() != n)
    throw InputError("prox_metric_phi: size mismatch");
  if (!(gamma > 0.0)) throw InputError("prox_metric_phi: gamma must be > 0");
  if (!((metric_diag.array() > 0.0).all()) || !metric_diag.allFinite())
    throw InputError("prox_metric_phi: metric must be SPD");
  if (opt.max_inner < 1) throw InputError("prox_metric_phi: max_inner must be >= 1");
  if (!(opt.kappa > 0.0)) throw InputError("prox_metric_phi: kappa must be > 0");
  if (!(pb.xi > 0.0)) throw ConfigError("prox_metric_phi: the data ball needs xi > 0");
  require_finite(xbar, "prox_metric_phi xbar");

  SparseMatrix gram_local;
  if (!opt.gram) gram_local = SparseMatrix(pb.D.transpose() * pb.D);
  const SparseMatrix& gram = opt.gram ? *opt.gram : gram_local;
  const Vector w = metric_diag / gamma;
  const Vector dty = pb.D.transpose() * pb.y;

  InnerSolveResult out;
  int budget = opt.max_inner;
  Vector z_warm = xbar.cwiseMax(0.0).cwiseMin(pb.x_max);

  struct Eval {
    double lambda;
    Vector z;
    double res;
  };
  auto evaluate = [&](double lambda) -> Eval {
    detail::BoxQp qp{w, xbar, gram, dty, lambda, pb.x_max};
    Vector z = z_warm;
    const int used = lambda > 0.0 ? detail::solve_box_qp(qp, z, std::max(budget, 1)) : 1;
    budget -= used;
    out.iterations_used += used;
    z_warm = z;
    const double res = pb.residual_norm(z);
    return {lambda, std::move(z), res};
  };

  Eval best = evaluate(0.0);
  if (best.res > pb.xi) {
    double lam = opt.lambda_init > 0.0 ? opt.lambda_init : w.mean() / std::max(gram.diagonal().mean(), 1e-300);
    Eval lo{0.0, {}, best.res}, hi{0.0, {}, 0.0};
    bool have_hi = false;
    Eval e = evaluate(lam);
    if (e.res > pb.xi) {
      lo = e;
      for (int k = 0; k < 60 && budget > 0; ++k) {
        e = evaluate(lo.lambda * 10.0);
        if (e.res <= pb.xi) {
          hi = std::move(e);
          have_hi = true;
          break;
        }
        lo = std::move(e);
      }
    } else {
      hi = std::move(e);
      have_hi = true;
      for (int k = 0; k < 60 && budget > 0; ++k) {
        e = evaluate(hi.lambda * 0.1);
        if (e.res > pb.xi) {
          lo = std::move(e);
          break;
        }
        hi = std::move(e);
      }
    }
    if (have_hi && lo.lambda > 0.0 && budget > 0) {
      Eval last_feasible = hi;
      auto f = [&](double s) {
        Eval ev = evaluate(std::exp(s));
        const double v = 1.0 / pb.xi - 1.0 / ev.res;
        if (ev.res <= pb.xi) {
          if (ev.lambda < last_feasible.lambda || last_feasible.lambda == 0.0) last_feasible = ev;
          if (ev.res >= pb.xi * (1.0 - 1e-12)) return 0.0;
        }
        return v;
      };
      auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-13 * std::max(1.0, std::abs(a)); };
      std::uintmax_t max_iter = 200;
      const double s_lo = std::log(lo.lambda), s_hi = std::log(hi.lambda);
      const auto bracket = boost::math::tools::toms748_solve(f, s_lo, s_hi, 1.0 / pb.xi - 1.0 / lo.res,
                                                             1.0 / pb.xi - 1.0 / hi.res, tol, max_iter);
      double lam_up = std::exp(bracket.second);
      for (int k = 0; k < 60 && budget > 0 && lam_up < last_feasible.lambda; ++k) {
        Eval ev = evaluate(lam_up);
        if (ev.res <= pb.xi) {
          last_feasible = std::move(ev);
          break;
        }
        lam_up *= 1.0 + 1e-13 * std::ldexp(1.0, k);
      }
      hi = std::move(last_feasible);
    }
    if (have_hi) best = std::move(hi);
  }

  out.z = std::move(best.z);
  out.lambda = best.lambda;
  out.ball_residual = best.res;
  const Vector d = out.z - anchor;
  const double phi_anchor = phi_value(anchor, pb, opt.feas_tol);
  const double phi_z = phi_value(out.z, pb, opt.feas_tol);
  out.cond_a_satisfied = inexact_condition_a(phi_z, phi_anchor, d, grad_at_anchor, metric_diag, gamma);

  // r = lambda D^T (D z - y) + n_box, the box normal chosen to cancel the QP gradient on bound coordinates.
  const Vector res = pb.D * out.z - pb.y;
  out.r = out.lambda * (pb.D.transpose() * res);
  const Vector g = w.cwiseProduct(out.z - xbar) + out.r;
  for (Index i = 0; i < n; ++i) {
    if (out.z[i] <= 0.0 && g[i] > 0.0) out.r[i] -= g[i];
    else if (out.z[i] >= pb.x_max && g[i] < 0.0) out.r[i] -= g[i];
  }
  out.cond_b_satisfied = std::isfinite(phi_z) && inexact_condition_b(grad_at_anchor, out.r, d, metric_diag, opt.kappa);
  return out;
}

} // namespace spoq
