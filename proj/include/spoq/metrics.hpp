#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "core.hpp"

namespace spoq {

inline constexpr double kSparsityThreshold = 1e-4;

/// 20 log10(||x|| / ||x - x_hat||); +inf when the residual is exactly zero.
inline double snr(const Vector& x_true, const Vector& x_hat) {
  if (x_true.size() != x_hat.size()) throw InputError("snr: size mismatch");
  const double num = x_true.norm();
  if (num == 0.0) throw DomainError("snr: reference signal is zero");
  const double den = (x_true - x_hat).norm();
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(num / den);
}

/// SNR restricted to the support of x_true.
inline double tsnr(const Vector& x_true, const Vector& x_hat) {
  if (x_true.size() != x_hat.size()) throw InputError("tsnr: size mismatch");
  double num = 0.0, den = 0.0;
  Index count = 0;
  for (Index i = 0; i < x_true.size(); ++i) {
    if (x_true[i] == 0.0) continue;
    ++count;
    num += x_true[i] * x_true[i];
    const double d = x_true[i] - x_hat[i];
    den += d * d;
  }
  if (count == 0) throw DomainError("tsnr: reference signal has empty support");
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(num / den);
}

inline Index sparsity_degree(const Vector& x_hat, double threshold = kSparsityThreshold) {
  if (!(threshold > 0.0)) throw InputError("sparsity_degree: threshold must be > 0");
  return (x_hat.array().abs() > threshold).count();
}

inline std::vector<Index> support_of(const Vector& x, double threshold = kSparsityThreshold) {
  std::vector<Index> s;
  for (Index i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) > threshold) s.push_back(i);
  return s;
}

struct DebiasResult {
  Vector x;           ///< clamped to x >= 0
  Vector x_unclamped;
  bool rank_deficient = false;
  bool clamped = false;
};

/// Least squares on the columns in `support`, minimum-norm when D_S is rank deficient.
template <class Matrix>
DebiasResult debias_least_squares(const Matrix& D, const Vector& y, const std::vector<Index>& support) {
  if (support.empty()) throw DomainError("debias_least_squares: empty support");
  if (y.size() != D.rows()) throw InputError("debias_least_squares: size mismatch");
  DenseMatrix Ds(D.rows(), static_cast<Index>(support.size()));
  for (std::size_t j = 0; j < support.size(); ++j) {
    const Index c = support[j];
    if (c < 0 || c >= D.cols()) throw InputError("debias_least_squares: support index out of range");
    Ds.col(static_cast<Index>(j)) = D.col(c);
  }
  Eigen::CompleteOrthogonalDecomposition<DenseMatrix> cod(Ds);
  const Vector c = cod.solve(y);
  DebiasResult out;
  out.rank_deficient = cod.rank() < Ds.cols();
  out.x_unclamped = Vector::Zero(D.cols());
  for (std::size_t j = 0; j < support.size(); ++j) out.x_unclamped[support[j]] = c[static_cast<Index>(j)];
  out.x = out.x_unclamped.cwiseMax(0.0);
  out.clamped = (out.x_unclamped.array() < 0.0).any();
  return out;
}

struct RunReport {
  std::string solver_id;
  std::string penalty_id;
  std::uint64_t seed = 0;
  double noise_percent = 0.0;
  double snr_db = 0.0;
  double tsnr_db = 0.0;
  double snr_raw_db = 0.0; ///< before debiasing
  Index sparsity_estimate = 0;
  double support_precision = 0.0;
  double support_recall = 0.0;
  double wall_time = 0.0;
  int iterations = 0;
  std::string status;
  bool rank_deficient = false;
};

struct SupportScores {
  double precision = 0.0;
  double recall = 0.0;
};

inline SupportScores support_scores(const Vector& x_true, const Vector& x_hat, double threshold = kSparsityThreshold) {
  Index tp = 0, est = 0, truth = 0;
  for (Index i = 0; i < x_true.size(); ++i) {
    const bool t = x_true[i] != 0.0;
    const bool e = std::abs(x_hat[i]) > threshold;
    truth += t;
    est += e;
    tp += t && e;
  }
  SupportScores s;
  s.precision = est ? static_cast<double>(tp) / static_cast<double>(est) : 1.0;
  s.recall = truth ? static_cast<double>(tp) / static_cast<double>(truth) : 1.0;
  return s;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Arithmetic mean and sample standard deviation.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  if (v.empty()) return m;
  for (double a : v) m.mean += a;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double a : v) s += (a - m.mean) * (a - m.mean);
    m.stddev = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

} // namespace spoq
