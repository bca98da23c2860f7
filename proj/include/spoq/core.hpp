#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace spoq {

using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Index = Eigen::Index;

/// Malformed input values (non-finite entries, wrong sizes, out-of-range parameters).
class InputError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Mathematically undefined request, e.g. a ratio of the zero vector.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Inconsistent configuration (missing side data, unsupported solver/penalty pairing).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require_finite(const Vector& x, const char* what) {
  if (!x.allFinite()) throw InputError(std::string(what) + ": non-finite component");
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Weighted squared norm u^T Diag(w) u.
inline double weighted_sq_norm(const Vector& u, const Vector& w) {
  return (u.array().square() * w.array()).sum();
}

} // namespace spoq
