#pragma once

#include <chrono>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "core.hpp"
#include "operators.hpp"
#include "penalties.hpp"

namespace spoq {

struct SolverConfig {
  double theta = 0.5;      ///< radius shrink factor
  int B = 10;              ///< radius trials per outer iteration
  double gamma = 1.9;      ///< constant step size
  double eps_stop = 1e-4;  ///< ||x+ - x|| <= eps ||x||
  int max_outer = 1000;
  int max_inner = 5000;
  double kappa = 0.0;      ///< 0 selects kappa_bound(gamma_lo, nu_hi)
  int init_pd_iters = 10;
  double feas_tol = kFeasibilityTolerance;
  double retry_factor = 0.5;   ///< step-size reduction for the single inner-failure retry
  double pd_step_ratio = 10.0; ///< primal-dual: tau = ratio / ||D||, sigma = 1 / (ratio ||D||)
  int pd_power_iters = 50;
  double pd_norm_safety = 1.01;
  double hq_curvature_floor = 1e-6; ///< relative to the curvature at 0

  /// Smallest step size the solver may use (retry included).
  double gamma_lo() const { return gamma * retry_factor; }
  /// gamma_bar such that gamma <= 2 - gamma_bar.
  double gamma_bar() const { return 2.0 - gamma; }

  void validate() const {
    if (!(theta > 0.0 && theta < 1.0)) throw InputError("SolverConfig: theta must lie in (0, 1)");
    if (B < 1) throw InputError("SolverConfig: B must be >= 1");
    if (!(gamma > 0.0 && gamma < 2.0)) throw InputError("SolverConfig: gamma must lie in (0, 2)");
    if (!(eps_stop >= 0.0)) throw InputError("SolverConfig: eps_stop must be >= 0");
    if (max_outer < 1 || max_inner < 1) throw InputError("SolverConfig: iteration caps must be >= 1");
    if (!(kappa >= 0.0)) throw InputError("SolverConfig: kappa must be >= 0");
    if (init_pd_iters < 0) throw InputError("SolverConfig: init_pd_iters must be >= 0");
    if (!(retry_factor > 0.0 && retry_factor <= 1.0)) throw InputError("SolverConfig: retry_factor in (0, 1]");
    if (!(pd_step_ratio > 0.0)) throw InputError("SolverConfig: pd_step_ratio must be > 0");
  }
};

struct IterationRecord {
  int k = 0;
  double objective = 0.0;      ///< Omega(x_{k+1})
  double step_norm = 0.0;      ///< ||x_{k+1} - x_k||
  int trial = 1;               ///< radius trial index used (1-based)
  double rho = 0.0;
  double descent_margin = 0.0; ///< Omega(x_k) - Omega(x_{k+1})
  double mu = 0.0;             ///< descent constant for this step
  double time_s = 0.0;
  double snr_db = std::numeric_limits<double>::quiet_NaN();
  int inner_iterations = 0;
  bool cond_a = true;
  bool cond_b = true;
  bool retried = false;
  bool in_region = true;       ///< accepted z lies in the ball complement of radius rho
};

struct IterateTrace {
  double objective0 = 0.0;
  std::vector<IterationRecord> records;
  int warnings = 0;
};

enum class SolveStatus { converged, max_iterations, inner_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
  case SolveStatus::converged: return "converged";
  case SolveStatus::max_iterations: return "max_iterations";
  case SolveStatus::inner_failure: return "inner_failure";
  }
  return "?";
}

struct SolveResult {
  Vector x;
  IterateTrace trace;
  SolveStatus status = SolveStatus::max_iterations;
  double lipschitz = 0.0; ///< FB only
};

/// Trust-region radii: ||x_k||_q, then shrinking by theta, last one 0.
inline std::vector<double> radius_schedule(const Vector& xk, double q, double theta, int B) {
  if (B < 1) throw InputError("radius_schedule: B must be >= 1");
  std::vector<double> r(static_cast<std::size_t>(B), 0.0);
  if (B == 1) return r;
  r[0] = lq_norm(xk, q);
  for (int i = 1; i < B - 1; ++i) r[static_cast<std::size_t>(i)] = theta * r[static_cast<std::size_t>(i - 1)];
  return r;
}

namespace detail {

inline double snr_or_nan(const Vector* ref, const Vector& x) {
  if (ref == nullptr) return std::numeric_limits<double>::quiet_NaN();
  const double num = ref->norm();
  const double den = (*ref - x).norm();
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(num / den);
}

inline void check_start(const Problem& pb, const Vector& x0) {
  pb.validate();
  if (x0.size() != pb.n()) throw InputError("solver: x0 size mismatch");
  require_finite(x0, "solver x0");
  if (!in_box(x0, pb.x_max)) throw InputError("solver: x0 outside [0, x_max]^N");
}

/// One metric per trial; `radii` gives the trial radii (a single 0 for non-TR variants).
struct MetricPolicy {
  std::function<std::vector<double>(const Vector&)> radii;
  std::function<Vector(const Vector&, double)> metric;
  std::function<bool(const Vector&, double)> accept;
};

struct SmoothTerm {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
};

using Clock = std::chrono::steady_clock;

/// Variable-metric forward-backward iterations with an optional trust-region trial loop.
inline SolveResult forward_backward(const Problem& pb, const SmoothTerm& smooth, const MetricPolicy& policy,
                                    const SolverConfig& cfg, double kappa, const Vector& x0,
                                    const Vector* reference) {
  cfg.validate();
  check_start(pb, x0);
  const auto t0 = Clock::now();

  SolveResult out;
  Vector x = x0;
  double omega = smooth.value(x) + phi_value(x, pb, cfg.feas_tol);
  out.trace.objective0 = omega;
  const SparseMatrix gram = pb.D.transpose() * pb.D;
  double lambda = 0.0; // multiplier warm start carried across inner solves
  InnerOptions inner;
  inner.gram = &gram;
  inner.max_inner = cfg.max_inner;
  inner.kappa = kappa;
  inner.feas_tol = cfg.feas_tol;

  for (int k = 0; k < cfg.max_outer; ++k) {
    const Vector grad = smooth.gradient(x);
    const std::vector<double> radii = policy.radii(x);
    IterationRecord rec;
    rec.k = k;
    InnerSolveResult chosen;
    double gamma_used = cfg.gamma;
    Vector metric_used;
    bool have_step = false;

    for (std::size_t i = 0; i < radii.size(); ++i) {
      const double rho = radii[i];
      const Vector metric = policy.metric(x, rho);
      auto attempt = [&](double gamma) {
        const Vector xbar = x - gamma * grad.cwiseQuotient(metric);
        inner.lambda_init = lambda;
        InnerSolveResult res = prox_metric_phi(xbar, metric, gamma, pb, inner, grad, x);
        if (res.lambda > 0.0) lambda = res.lambda;
        return res;
      };
      InnerSolveResult res = attempt(cfg.gamma);
      double gamma = cfg.gamma;
      rec.inner_iterations += res.iterations_used;
      if (!res.accepted()) {
        InnerSolveResult retry = attempt(cfg.gamma * cfg.retry_factor);
        rec.inner_iterations += retry.iterations_used;
        rec.retried = true;
        if (retry.accepted() || (!res.cond_a_satisfied && retry.cond_a_satisfied)) {
          res = std::move(retry);
          gamma = cfg.gamma * cfg.retry_factor;
        }
      }
      const bool last = (i + 1 == radii.size());
      if (!res.cond_a_satisfied && !last) continue;
      if (!res.cond_a_satisfied) {
        // Without (a) there is no descent guarantee: stay at x_k and stop.
        chosen = std::move(res);
        have_step = false;
        rec.trial = static_cast<int>(i) + 1;
        rec.rho = rho;
        break;
      }
      if (policy.accept(res.z, rho) || last) {
        rec.in_region = policy.accept(res.z, rho);
        rec.trial = static_cast<int>(i) + 1;
        rec.rho = rho;
        chosen = std::move(res);
        gamma_used = gamma;
        metric_used = metric;
        have_step = true;
        break;
      }
    }

    if (!have_step) {
      rec.cond_a = false;
      rec.cond_b = chosen.cond_b_satisfied;
      rec.objective = omega;
      rec.time_s = std::chrono::duration<double>(Clock::now() - t0).count();
      rec.snr_db = snr_or_nan(reference, x);
      out.trace.records.push_back(rec);
      // A rejected candidate already below the stopping threshold is a converged null step.
      const bool negligible = chosen.z.size() == x.size() && (chosen.z - x).norm() <= cfg.eps_stop * x.norm();
      if (!negligible) out.trace.warnings += 1;
      out.status = negligible ? SolveStatus::converged : SolveStatus::inner_failure;
      out.x = x;
      return out;
    }
    if (!chosen.cond_b_satisfied) out.trace.warnings += 1;

    const Vector x_next = chosen.z;
    const double step = (x_next - x).norm();
    const double omega_next = smooth.value(x_next) + phi_value(x_next, pb, cfg.feas_tol);
    const double gbar = 2.0 - gamma_used;
    rec.cond_a = chosen.cond_a_satisfied;
    rec.cond_b = chosen.cond_b_satisfied;
    rec.objective = omega_next;
    rec.step_norm = step;
    rec.descent_margin = omega - omega_next;
    rec.mu = metric_used.minCoeff() * gbar / (2.0 * (2.0 - gbar));
    const bool stop = step <= cfg.eps_stop * x.norm();
    x = x_next;
    omega = omega_next;
    rec.time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    rec.snr_db = snr_or_nan(reference, x);
    out.trace.records.push_back(rec);
    if (stop) {
      out.status = SolveStatus::converged;
      out.x = x;
      return out;
    }
  }
  out.status = SolveStatus::max_iterations;
  out.x = x;
  return out;
}

inline SmoothTerm spoq_term(const SpoqParams& prm) {
  return {[prm](const Vector& x) { return spoq_value(x, prm); },
          [prm](const Vector& x) { return spoq_gradient(x, prm); }};
}

} // namespace detail

/// Default inexactness constant: sqrt(chi_{q,0} + beta^{-p} alpha^{p-2}) / gamma_lo.
inline double default_kappa(const SpoqParams& prm, const SolverConfig& cfg) {
  return cfg.kappa > 0.0 ? cfg.kappa : kappa_bound(cfg.gamma_lo(), spoq_metric_upper(prm, 0.0));
}

inline SolveResult tr_vmfb_solve(const Problem& pb, const SpoqParams& prm, const SolverConfig& cfg,
                                 const Vector& x0, const Vector* reference = nullptr) {
  prm.validate();
  detail::MetricPolicy policy{
      [prm, cfg](const Vector& x) { return radius_schedule(x, prm.q, cfg.theta, cfg.B); },
      [prm](const Vector& x, double rho) { return spoq_majorant_metric(x, rho, prm).diag; },
      [prm](const Vector& z, double rho) { return in_ball_complement(z, prm.q, rho); }};
  return detail::forward_backward(pb, detail::spoq_term(prm), policy, cfg, default_kappa(prm, cfg), x0,
                                  reference);
}

/// VMFB with the fixed choice A_k = A_{q,0}(x_k).
inline SolveResult vmfb_solve(const Problem& pb, const SpoqParams& prm, const SolverConfig& cfg,
                              const Vector& x0, const Vector* reference = nullptr) {
  prm.validate();
  detail::MetricPolicy policy{
      [](const Vector&) { return std::vector<double>{0.0}; },
      [prm](const Vector& x, double) { return spoq_majorant_metric(x, 0.0, prm).diag; },
      [](const Vector&, double) { return true; }};
  return detail::forward_backward(pb, detail::spoq_term(prm), policy, cfg, default_kappa(prm, cfg), x0,
                                  reference);
}

/// Forward-backward with the constant metric L I.
inline SolveResult fb_solve(const Problem& pb, const SpoqParams& prm, const SolverConfig& cfg,
                            const Vector& x0, const Vector* reference = nullptr) {
  prm.validate();
  const double lip = spoq_lipschitz(prm, pb.n());
  detail::MetricPolicy policy{[](const Vector&) { return std::vector<double>{0.0}; },
                              [lip](const Vector& x, double) { return Vector::Constant(x.size(), lip); },
                              [](const Vector&, double) { return true; }};
  const double kappa = cfg.kappa > 0.0 ? cfg.kappa : kappa_bound(cfg.gamma_lo(), lip);
  SolveResult r = detail::forward_backward(pb, detail::spoq_term(prm), policy, cfg, kappa, x0, reference);
  r.lipschitz = lip;
  return r;
}

/// VMFB for Cauchy / Welsch with the half-quadratic diagonal metric.
inline SolveResult vmfb_halfquadratic_solve(const Problem& pb, const PenaltySpec& spec, const SolverConfig& cfg,
                                            const Vector& x0, const Vector* reference = nullptr) {
  validate(spec);
  if (!std::holds_alternative<CauchyPenalty>(spec) && !std::holds_alternative<WelschPenalty>(spec))
    throw ConfigError("vmfb_halfquadratic_solve: penalty must be Cauchy or Welsch");
  const double at_zero = baseline_curvature(Vector::Zero(1), spec)[0];
  const double floor = cfg.hq_curvature_floor * at_zero;
  detail::SmoothTerm smooth{[spec](const Vector& x) { return baseline_value(x, spec); },
                            [spec](const Vector& x) { return baseline_gradient(x, spec); }};
  detail::MetricPolicy policy{[](const Vector&) { return std::vector<double>{0.0}; },
                              [spec, floor](const Vector& x, double) {
                                return Vector(baseline_curvature(x, spec).cwiseMax(floor));
                              },
                              [](const Vector&, double) { return true; }};
  const double kappa = cfg.kappa > 0.0 ? cfg.kappa : kappa_bound(cfg.gamma_lo(), at_zero);
  return detail::forward_backward(pb, smooth, policy, cfg, kappa, x0, reference);
}

// ---------------------------------------------------------------------------
// Primal-dual splitting for the prox-friendly baselines.
// ---------------------------------------------------------------------------

/// Power-iteration estimate of ||D|| from a fixed pseudo-random start.
inline double estimate_operator_norm(const SparseMatrix& D, int iters = 50, std::uint64_t seed = 0x5eed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Vector v(D.cols());
  for (Index i = 0; i < v.size(); ++i) v[i] = unif(rng);
  v.normalize();
  double s = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vector w = D.transpose() * (D * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    s = std::sqrt(nw);
    v = w / nw;
  }
  return s;
}

namespace detail {

struct PrimalDualState {
  Vector x;
  Vector u;
};

/// Scalar-prox closure for a separable baseline.
inline std::function<void(Vector&, double)> separable_prox(const PenaltySpec& spec, const Problem& pb) {
  const double xmax = pb.x_max;
  if (std::holds_alternative<L1Penalty>(spec)) {
    return [xmax](Vector& v, double tau) { v = (v.array() - tau).max(0.0).min(xmax).matrix(); };
  }
  if (std::holds_alternative<L0Penalty>(spec)) {
    return [xmax](Vector& v, double tau) {
      const double thr = std::sqrt(2.0 * tau);
      v = v.unaryExpr([thr, xmax](double a) { return a > thr ? std::min(a, xmax) : 0.0; });
    };
  }
  if (std::holds_alternative<ScadPenalty>(spec)) {
    const auto pieces = nonnegative_pieces(spec);
    return [pieces, xmax](Vector& v, double tau) {
      for (Index i = 0; i < v.size(); ++i) v[i] = scalar_prox(v[i], tau, pieces, xmax);
    };
  }
  if (std::holds_alternative<Cel0Penalty>(spec)) {
    const Vector norms = pb.column_norms();
    if ((norms.array() <= 0.0).any()) throw InputError("CEL0: dictionary has a zero column");
    std::vector<std::vector<QuadraticPiece>> per_col;
    per_col.reserve(static_cast<std::size_t>(norms.size()));
    for (Index i = 0; i < norms.size(); ++i) per_col.push_back(nonnegative_pieces(spec, norms[i]));
    return [per_col, xmax](Vector& v, double tau) {
      for (Index i = 0; i < v.size(); ++i) v[i] = scalar_prox(v[i], tau, per_col[static_cast<std::size_t>(i)], xmax);
    };
  }
  throw ConfigError("primal_dual_solve: penalty must be l1, l0, SCAD or CEL0");
}

inline SolveResult primal_dual_run(const Problem& pb, const PenaltySpec& spec, const SolverConfig& cfg,
                                   const Vector& x0, int iters, bool use_stop, const Vector* reference) {
  validate(spec);
  check_start(pb, x0);
  const auto prox = separable_prox(spec, pb);
  const Vector norms = std::holds_alternative<Cel0Penalty>(spec) ? pb.column_norms() : Vector();
  auto psi = [&](const Vector& x) { return baseline_value(x, spec, norms.size() ? &norms : nullptr); };

  const double dnorm = estimate_operator_norm(pb.D, cfg.pd_power_iters) * cfg.pd_norm_safety;
  double tau = dnorm > 0.0 ? cfg.pd_step_ratio / dnorm : 1.0;
  if (const auto* scad = std::get_if<ScadPenalty>(&spec)) tau = std::min(tau, 0.9 * (scad->a - 1.0));
  const double sig = dnorm > 0.0 ? 1.0 / (tau * dnorm * dnorm) : 1.0;
  const auto t0 = Clock::now();

  SolveResult out;
  Vector x = x0;
  Vector u = Vector::Zero(pb.m());
  double omega = psi(x) + phi_value(x, pb, cfg.feas_tol);
  out.trace.objective0 = omega;
  out.status = SolveStatus::max_iterations;
  for (int k = 0; k < iters; ++k) {
    Vector xn = x - tau * (pb.D.transpose() * u);
    prox(xn, tau);
    const Vector xe = 2.0 * xn - x;
    Vector w = u + sig * (pb.D * xe);
    // prox of sigma g* via Moreau: w - sigma P_ball(w / sigma).
    Vector pw = w / sig - pb.y;
    const double npw = pw.norm();
    if (npw > pb.xi) pw *= pb.xi / npw;
    Vector un = w - sig * (pb.y + pw);

    IterationRecord rec;
    rec.k = k;
    rec.step_norm = (xn - x).norm();
    const double omega_next = psi(xn) + phi_value(xn, pb, cfg.feas_tol);
    rec.objective = omega_next;
    rec.descent_margin = omega - omega_next;
    const bool stop = use_stop && rec.step_norm <= cfg.eps_stop * xn.norm() &&
                      (un - u).norm() <= cfg.eps_stop * un.norm();
    x = std::move(xn);
    u = std::move(un);
    omega = omega_next;
    rec.time_s = std::chrono::duration<double>(Clock::now() - t0).count();
    rec.snr_db = snr_or_nan(reference, x);
    out.trace.records.push_back(rec);
    if (stop) {
      out.status = SolveStatus::converged;
      break;
    }
  }
  out.x = x;
  return out;
}

} // namespace detail

inline SolveResult primal_dual_solve(const Problem& pb, const PenaltySpec& spec, const SolverConfig& cfg,
                                     const Vector& x0, const Vector* reference = nullptr) {
  cfg.validate();
  return detail::primal_dual_run(pb, spec, cfg, x0, cfg.max_outer, true, reference);
}

/// `iters` primal-dual steps with the l1 penalty from x = 0.
inline Vector warm_start_l1(const Problem& pb, int iters, const SolverConfig& cfg = {}) {
  if (iters < 0) throw InputError("warm_start_l1: iters must be >= 0");
  const Vector zero = Vector::Zero(pb.n());
  if (iters == 0) return zero;
  return detail::primal_dual_run(pb, L1Penalty{}, cfg, zero, iters, false, nullptr).x;
}

} // namespace spoq
