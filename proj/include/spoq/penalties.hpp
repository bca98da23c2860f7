#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "core.hpp"

namespace spoq {

// ---------------------------------------------------------------------------
// SPOQ: log of a smoothed lp quasinorm over a smoothed lq norm.
// ---------------------------------------------------------------------------

struct SpoqParams {
  double p = 0.75;
  double q = 2.0;
  double alpha = 7e-7;
  double beta = 3e-3;
  double eta = 1e-1;

  void validate() const {
    if (!(p > 0.0 && p < 2.0)) throw InputError("SPOQ: p must lie in (0, 2)");
    if (!(q >= 2.0) || !std::isfinite(q)) throw InputError("SPOQ: q must be finite and >= 2");
    if (!(alpha > 0.0) || !(beta > 0.0) || !(eta > 0.0) || !std::isfinite(alpha) ||
        !std::isfinite(beta) || !std::isfinite(eta))
      throw InputError("SPOQ: alpha, beta, eta must be finite and > 0");
  }
};

/// Curvature matrix of the local quadratic majorant, A = chi I + Diag(...), stored by its diagonal.
struct MajorantMetric {
  double chi = 0.0;
  Vector diag; ///< full diagonal of A (chi already included)
  double rho = 0.0;
};

enum class ZeroMinimizer { none, local, global };

inline const char* to_string(ZeroMinimizer z) {
  switch (z) {
  case ZeroMinimizer::none: return "none";
  case ZeroMinimizer::local: return "local";
  case ZeroMinimizer::global: return "global";
  }
  return "?";
}

namespace detail {

// (x^2 + a^2)^{p/2} - a^p without cancellation when |x| << a.
inline double smoothed_power_term(double x, double alpha, double p) {
  const double ratio = (x / alpha) * (x / alpha);
  return std::pow(alpha, p) * std::expm1(0.5 * p * std::log1p(ratio));
}

// (x^2 + a^2)^{p/2 - 1}
inline double smoothed_weight(double x, double alpha, double p) {
  return std::exp((0.5 * p - 1.0) * std::log(x * x + alpha * alpha));
}

/// ell_{p,alpha}^p(x)
inline double lp_smooth_pow(const Vector& x, double p, double alpha) {
  double s = 0.0;
  for (Index n = 0; n < x.size(); ++n) s += smoothed_power_term(x[n], alpha, p);
  return s;
}

/// Scale-safe evaluation of eta^q + sum |x_n|^q as (scale, normalized sum).
struct LqSum {
  double scale = 0.0; // max(eta, max |x_n|)
  double normalized = 0.0; // (eta/scale)^q + sum (|x_n|/scale)^q
  double log_value(double q) const { return q * std::log(scale) + std::log(normalized); }
  double value(double q) const { return std::pow(scale, q) * normalized; }
};

inline LqSum lq_smooth_sum(const Vector& x, double q, double eta) {
  LqSum s;
  s.scale = std::max(eta, x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
  s.normalized = std::pow(eta / s.scale, q);
  for (Index n = 0; n < x.size(); ++n) s.normalized += std::pow(std::abs(x[n]) / s.scale, q);
  return s;
}

} // namespace detail

/// (sum |x_n|^q)^{1/q}, evaluated with max-scaling.
inline double lq_norm(const Vector& x, double q) {
  if (x.size() == 0) return 0.0;
  const double m = x.cwiseAbs().maxCoeff();
  if (m == 0.0) return 0.0;
  double s = 0.0;
  for (Index n = 0; n < x.size(); ++n) s += std::pow(std::abs(x[n]) / m, q);
  return m * std::pow(s, 1.0 / q);
}

/// Membership in the lq-ball complement {x : sum |x_n|^q >= rho^q}.
inline bool in_ball_complement(const Vector& x, double q, double rho) {
  if (rho <= 0.0) return true;
  return lq_norm(x, q) >= rho;
}

inline double spoq_value(const Vector& x, const SpoqParams& prm) {
  prm.validate();
  require_finite(x, "spoq_value");
  const double lp = detail::lp_smooth_pow(x, prm.p, prm.alpha);
  const double psi1 = std::log(lp + std::pow(prm.beta, prm.p)) / prm.p;
  const double psi2 = detail::lq_smooth_sum(x, prm.q, prm.eta).log_value(prm.q) / prm.q;
  return psi1 - psi2;
}

inline Vector spoq_gradient(const Vector& x, const SpoqParams& prm) {
  prm.validate();
  require_finite(x, "spoq_gradient");
  const double denom_p = detail::lp_smooth_pow(x, prm.p, prm.alpha) + std::pow(prm.beta, prm.p);
  const auto lq = detail::lq_smooth_sum(x, prm.q, prm.eta);
  Vector g(x.size());
  for (Index n = 0; n < x.size(); ++n) {
    const double g1 = x[n] * detail::smoothed_weight(x[n], prm.alpha, prm.p) / denom_p;
    // sign(x)|x|^{q-1} / (eta^q + sum|x|^q), scaled by lq.scale to stay finite.
    const double a = std::abs(x[n]) / lq.scale;
    const double g2 = sign(x[n]) * std::pow(a, prm.q - 1.0) / (lq.scale * lq.normalized);
    g[n] = g1 - g2;
  }
  return g;
}

/// Structured Hessian: Diag(diag) - u1 u1^T / p + u2 u2^T / q.
struct SpoqHessian {
  Vector diag;
  Vector u1;
  Vector u2;
  double p = 1.0;
  double q = 2.0;

  DenseMatrix dense() const {
    DenseMatrix h = diag.asDiagonal();
    h -= (u1 * u1.transpose()) / p;
    h += (u2 * u2.transpose()) / q;
    return h;
  }
};

inline SpoqHessian spoq_hessian(const Vector& x, const SpoqParams& prm) {
  prm.validate();
  const Index n_dim = x.size();
  const double sp = detail::lp_smooth_pow(x, prm.p, prm.alpha) + std::pow(prm.beta, prm.p);
  const double sq = detail::lq_smooth_sum(x, prm.q, prm.eta).value(prm.q);
  SpoqHessian h;
  h.p = prm.p;
  h.q = prm.q;
  h.diag.resize(n_dim);
  h.u1.resize(n_dim);
  h.u2.resize(n_dim);
  const double a2 = prm.alpha * prm.alpha;
  for (Index n = 0; n < n_dim; ++n) {
    const double xn = x[n];
    const double r = xn * xn + a2;
    const double hp = prm.p * ((prm.p - 1.0) * xn * xn + a2) * std::pow(r, 0.5 * prm.p - 2.0);
    // |x|^{q-2} with 0^0 = 1 when q = 2.
    const double hq = prm.q * (prm.q - 1.0) * std::pow(std::abs(xn), prm.q - 2.0);
    h.diag[n] = hp / (prm.p * sp) - hq / (prm.q * sq);
    h.u1[n] = prm.p * xn * std::pow(r, 0.5 * prm.p - 1.0) / sp;
    h.u2[n] = prm.q * sign(xn) * std::pow(std::abs(xn), prm.q - 1.0) / sq;
  }
  return h;
}

/// L = max(1,p) alpha^{p-2}/beta^p + p/(2 alpha^2) max{1, (N alpha^p/beta^p)^2} + (q-1)/eta^2.
/// The first term is the sup of the l_p Hessian diagonal, reached at x = 0.
inline double spoq_lipschitz(const SpoqParams& prm, Index n) {
  prm.validate();
  if (n < 1) throw InputError("spoq_lipschitz: dimension must be >= 1");
  const double ap = std::pow(prm.alpha, prm.p);
  const double bp = std::pow(prm.beta, prm.p);
  const double ratio = static_cast<double>(n) * ap / bp;
  return std::max(1.0, prm.p) * std::pow(prm.alpha, prm.p - 2.0) / bp +
         prm.p / (2.0 * prm.alpha * prm.alpha) * std::max(1.0, ratio * ratio) +
         (prm.q - 1.0) / (prm.eta * prm.eta);
}

/// chi_{q,rho} = (q-1) / (eta^q + rho^q)^{2/q}
inline double spoq_chi(const SpoqParams& prm, double rho) {
  const double m = std::max(prm.eta, rho);
  const double s = std::pow(prm.eta / m, prm.q) + std::pow(rho / m, prm.q);
  return (prm.q - 1.0) / (m * m * std::pow(s, 2.0 / prm.q));
}

/// Upper end of the metric sandwich, chi_{q,rho} + beta^{-p} alpha^{p-2}.
inline double spoq_metric_upper(const SpoqParams& prm, double rho) {
  return spoq_chi(prm, rho) + std::pow(prm.alpha, prm.p - 2.0) / std::pow(prm.beta, prm.p);
}

inline MajorantMetric spoq_majorant_metric(const Vector& x, double rho, const SpoqParams& prm) {
  prm.validate();
  if (!(rho >= 0.0)) throw InputError("spoq_majorant_metric: rho must be >= 0");
  require_finite(x, "spoq_majorant_metric");
  MajorantMetric m;
  m.rho = rho;
  m.chi = spoq_chi(prm, rho);
  const double denom_p = detail::lp_smooth_pow(x, prm.p, prm.alpha) + std::pow(prm.beta, prm.p);
  const double upper = spoq_metric_upper(prm, rho);
  m.diag.resize(x.size());
  for (Index n = 0; n < x.size(); ++n) {
    const double d = m.chi + detail::smoothed_weight(x[n], prm.alpha, prm.p) / denom_p;
    // Rounding can push an x = 0 entry one ulp past the analytic bound.
    m.diag[n] = std::clamp(d, m.chi, upper);
  }
  return m;
}

/// Majorant value at x_prime minus Psi(x_prime); nonnegative up to rounding when both points lie
/// in the lq-ball complement of radius rho.
inline double spoq_majorant_gap(const Vector& x, const Vector& x_prime, double rho,
                                const SpoqParams& prm) {
  if (x.size() != x_prime.size()) throw InputError("spoq_majorant_gap: size mismatch");
  if (!in_ball_complement(x, prm.q, rho) || !in_ball_complement(x_prime, prm.q, rho))
    throw DomainError("spoq_majorant_gap: point outside the lq-ball complement");
  const Vector d = x_prime - x;
  const MajorantMetric a = spoq_majorant_metric(x, rho, prm);
  const double maj = spoq_value(x, prm) + d.dot(spoq_gradient(x, prm)) +
                     0.5 * weighted_sq_norm(d, a.diag);
  return maj - spoq_value(x_prime, prm);
}

inline ZeroMinimizer check_zero_minimizer(const SpoqParams& prm) {
  prm.validate();
  const double p = prm.p, a = prm.alpha, b = prm.beta, e = prm.eta;
  const bool local = prm.q > 2.0 || (e * e * std::pow(a, p - 2.0) > std::pow(b, p));
  if (!local) return ZeroMinimizer::none;
  const double t1 = 8.0 * std::pow(a, 2.0 - p) / (p * (2.0 + p) * std::pow(b, 2.0 - p));
  const double t2 = 1.0 / std::pow(std::pow(2.0, 0.5 * p) - 1.0, 2.0 / p);
  return (e * e >= b * b * std::max(t1, t2)) ? ZeroMinimizer::global : ZeroMinimizer::local;
}

/// Unsmoothed lp-over-lq ratio; 0-degree homogeneous.
inline double exact_ratio(const Vector& x, double p, double q) {
  if (!(p > 0.0 && p < 2.0 && q >= 2.0)) throw InputError("exact_ratio: need 0 < p < 2 <= q");
  require_finite(x, "exact_ratio");
  const double m = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
  if (m == 0.0) throw DomainError("exact_ratio: zero vector");
  double sq = 0.0;
  for (Index n = 0; n < x.size(); ++n) sq += std::pow(std::abs(x[n]) / m, q);
  double acc = 0.0;
  for (Index n = 0; n < x.size(); ++n) {
    if (x[n] == 0.0) continue;
    acc += std::pow(std::pow(std::abs(x[n]) / m, q) / sq, p / q);
  }
  return std::pow(acc, 1.0 / p);
}

// ---------------------------------------------------------------------------
// Baseline separable penalties.
// ---------------------------------------------------------------------------

struct L1Penalty {};
struct L0Penalty {};
struct ScadPenalty {
  double delta = 1.0;
  double a = 2.25;
};
struct CauchyPenalty {
  double delta = 100.0;
};
struct WelschPenalty {
  double delta = 2.0;
};
struct Cel0Penalty {
  double delta = 0.5;
};

using PenaltySpec =
    std::variant<SpoqParams, L1Penalty, L0Penalty, ScadPenalty, CauchyPenalty, WelschPenalty, Cel0Penalty>;

template <class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

inline std::string penalty_name(const PenaltySpec& s) {
  return std::visit(overloaded{[](const SpoqParams&) { return std::string("spoq"); },
                               [](const L1Penalty&) { return std::string("l1"); },
                               [](const L0Penalty&) { return std::string("l0"); },
                               [](const ScadPenalty&) { return std::string("scad"); },
                               [](const CauchyPenalty&) { return std::string("cauchy"); },
                               [](const WelschPenalty&) { return std::string("welsch"); },
                               [](const Cel0Penalty&) { return std::string("cel0"); }},
                    s);
}

inline void validate(const PenaltySpec& s) {
  auto positive = [](double d, const char* who) {
    if (!(d > 0.0) || !std::isfinite(d)) throw InputError(std::string(who) + ": delta must be > 0");
  };
  std::visit(overloaded{[](const SpoqParams& p) { p.validate(); }, [](const L1Penalty&) {},
                        [](const L0Penalty&) {},
                        [&](const ScadPenalty& p) {
                          positive(p.delta, "SCAD");
                          if (!(p.a > 2.0)) throw InputError("SCAD: a must be > 2");
                        },
                        [&](const CauchyPenalty& p) { positive(p.delta, "Cauchy"); },
                        [&](const WelschPenalty& p) { positive(p.delta, "Welsch"); },
                        [&](const Cel0Penalty& p) { positive(p.delta, "CEL0"); }},
             s);
}

namespace detail {

inline double scad_scalar(double x, const ScadPenalty& s) {
  const double ax = std::abs(x), d = s.delta, a = s.a;
  if (ax < d) return d * ax;
  if (ax < a * d) return (2.0 * a * d * ax - ax * ax - d * d) / (2.0 * (a - 1.0));
  return (a + 1.0) * d * d / 2.0;
}

inline double cel0_scalar(double x, double delta, double col_norm) {
  const double thr = std::sqrt(2.0 * delta) / col_norm;
  const double ax = std::abs(x);
  if (ax < thr) return delta - 0.5 * col_norm * col_norm * (ax - thr) * (ax - thr);
  return delta;
}

} // namespace detail

inline double baseline_value(const Vector& x, const PenaltySpec& spec,
                             const Vector* column_norms = nullptr) {
  validate(spec);
  require_finite(x, "baseline_value");
  return std::visit(
      overloaded{
          [&](const SpoqParams& p) { return spoq_value(x, p); },
          [&](const L1Penalty&) { return x.cwiseAbs().sum(); },
          [&](const L0Penalty&) {
            return static_cast<double>((x.array() != 0.0).count());
          },
          [&](const ScadPenalty& s) {
            double v = 0.0;
            for (Index n = 0; n < x.size(); ++n) v += detail::scad_scalar(x[n], s);
            return v;
          },
          [&](const CauchyPenalty& c) {
            return (x.array() / c.delta).square().log1p().sum();
          },
          [&](const WelschPenalty& w) {
            return -(-(x.array() / w.delta).square()).expm1().sum();
          },
          [&](const Cel0Penalty& c) {
            if (column_norms == nullptr) throw ConfigError("CEL0 requires dictionary column norms");
            if (column_norms->size() != x.size()) throw InputError("CEL0: column norm size mismatch");
            if ((column_norms->array() <= 0.0).any()) throw InputError("CEL0: column norms must be > 0");
            double v = 0.0;
            for (Index n = 0; n < x.size(); ++n) v += detail::cel0_scalar(x[n], c.delta, (*column_norms)[n]);
            return v;
          }},
      spec);
}

/// Half-quadratic curvature psi'(x)/x (with its limit at 0) for Cauchy and Welsch.
inline Vector baseline_curvature(const Vector& x, const PenaltySpec& spec) {
  if (const auto* c = std::get_if<CauchyPenalty>(&spec)) {
    validate(spec);
    return (2.0 / (c->delta * c->delta + x.array().square())).matrix();
  }
  if (const auto* w = std::get_if<WelschPenalty>(&spec)) {
    validate(spec);
    const double d2 = w->delta * w->delta;
    return ((2.0 / d2) * (-x.array().square() / d2).exp()).matrix();
  }
  throw ConfigError("baseline_curvature: only Cauchy and Welsch are supported");
}

inline Vector baseline_gradient(const Vector& x, const PenaltySpec& spec) {
  return (baseline_curvature(x, spec).array() * x.array()).matrix();
}

// ---------------------------------------------------------------------------
// Piecewise-quadratic description of the separable baselines on x >= 0, used by
// the scalar proximity operators.
// ---------------------------------------------------------------------------

/// psi(x) = c0 + c1 x + c2 x^2 on [lo, hi) (or [lo, hi] for the last piece).
struct QuadraticPiece {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double c0 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  double operator()(double x) const { return c0 + x * (c1 + x * c2); }
};

/// Pieces for coordinate n (column_norm is used by CEL0 only).
inline std::vector<QuadraticPiece> nonnegative_pieces(const PenaltySpec& spec, double column_norm = 1.0) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  return std::visit(
      overloaded{
          [](const SpoqParams&) -> std::vector<QuadraticPiece> {
            throw ConfigError("SPOQ has no closed-form scalar proximity operator");
          },
          [](const L1Penalty&) { return std::vector<QuadraticPiece>{{0.0, inf, 0.0, 1.0, 0.0}}; },
          [](const L0Penalty&) {
            // psi(0) = 0, psi(x > 0) = 1; the degenerate first piece holds x = 0 only.
            return std::vector<QuadraticPiece>{{0.0, 0.0, 0.0, 0.0, 0.0}, {0.0, inf, 1.0, 0.0, 0.0}};
          },
          [](const ScadPenalty& s) {
            const double d = s.delta, a = s.a;
            return std::vector<QuadraticPiece>{
                {0.0, d, 0.0, d, 0.0},
                {d, a * d, -d * d / (2.0 * (a - 1.0)), a * d / (a - 1.0), -1.0 / (2.0 * (a - 1.0))},
                {a * d, inf, (a + 1.0) * d * d / 2.0, 0.0, 0.0}};
          },
          [](const CauchyPenalty&) -> std::vector<QuadraticPiece> {
            throw ConfigError("Cauchy is handled by the half-quadratic solver");
          },
          [](const WelschPenalty&) -> std::vector<QuadraticPiece> {
            throw ConfigError("Welsch is handled by the half-quadratic solver");
          },
          [&](const Cel0Penalty& c) {
            const double thr = std::sqrt(2.0 * c.delta) / column_norm;
            const double k = 0.5 * column_norm * column_norm;
            // delta - k (x - thr)^2 = (delta - k thr^2) + 2 k thr x - k x^2, and delta - k thr^2 = 0.
            return std::vector<QuadraticPiece>{{0.0, thr, c.delta - k * thr * thr, 2.0 * k * thr, -k},
                                               {thr, inf, c.delta, 0.0, 0.0}};
          }},
      spec);
}

} // namespace spoq
