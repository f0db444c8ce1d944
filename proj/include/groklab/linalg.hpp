#pragma once

// Small dense spectral routines: power iteration for the top singular value
// and for the dominant eigenvalue of a symmetric operator, and one-sided
// Jacobi for full singular-value spectra.

#include "groklab/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace groklab {

struct SigmaMaxResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Largest singular value by power iteration on M^T M.
template <class Derived>
SigmaMaxResult sigma_max_detail(const Eigen::MatrixBase<Derived>& m, double tol = 1e-10,
                                int max_iter = 1000) {
  SigmaMaxResult r;
  if (m.size() == 0) throw std::invalid_argument("sigma_max of an empty matrix");
  const Eigen::Index n = m.cols();
  // Deterministic start with no special alignment to any singular vector.
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.5 * std::sin(1.0 + 0.7 * static_cast<double>(i));
  v.normalize();
  double prev = -1.0;
  for (int it = 1; it <= max_iter; ++it) {
    const Vec mv = m * v;
    Vec w = m.transpose() * mv;
    const double norm_w = w.norm();
    const double est = std::sqrt(std::max(0.0, v.dot(w)));
    r.iterations = it;
    r.value = est;
    if (norm_w == 0.0) {
      r.converged = true;
      r.value = 0.0;
      return r;
    }
    if (prev >= 0.0 && std::abs(est - prev) <= tol * std::max(est, 1e-300)) {
      r.converged = true;
      return r;
    }
    prev = est;
    v = w / norm_w;
  }
  return r;
}

template <class Derived>
double sigma_max(const Eigen::MatrixBase<Derived>& m) {
  return sigma_max_detail(m).value;
}

/// All singular values (descending) by the one-sided Jacobi method.
inline Vec singular_values(const Mat& m, double tol = 1e-13, int max_sweeps = 80) {
  // Orthogonalize the columns of the thinner orientation.
  Eigen::MatrixXd a = m.rows() >= m.cols() ? Eigen::MatrixXd(m) : Eigen::MatrixXd(m.transpose());
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double alpha = a.col(i).squaredNorm();
        const double beta = a.col(j).squaredNorm();
        const double gamma = a.col(i).dot(a.col(j));
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index k = 0; k < a.rows(); ++k) {
          const double x = a(k, i), y = a(k, j);
          a(k, i) = c * x - s * y;
          a(k, j) = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }
  Vec sv(n);
  for (Eigen::Index i = 0; i < n; ++i) sv(i) = a.col(i).norm();
  std::sort(sv.data(), sv.data() + n, std::greater<>());
  return sv;
}

/// Number of singular values >= rel_tol * sigma_max.
inline int effective_rank(const Mat& m, double rel_tol = 1e-3) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw std::invalid_argument("rel_tol must lie in (0, 1)");
  if (m.size() == 0) return 0;
  const Vec sv = singular_values(m);
  if (sv(0) == 0.0) return 0;
  const double cut = rel_tol * sv(0);
  return static_cast<int>((sv.array() >= cut).count());
}

struct EigenEstimate {
  double value = 0.0;
  double residual = 0.0;  // ||A v - value v|| at the final iterate
  int iterations = 0;
  bool converged = false;
};

/// Dominant eigenvalue of a symmetric operator by power iteration:
/// normalize v, apply the operator, take the Rayleigh quotient v^T A v.
/// Stops once |lambda_k - lambda_{k-1}| < tol * max(1, |lambda_k|).
template <class Apply>
EigenEstimate power_iteration(Apply&& apply, Vec v, int max_iter, double tol) {
  if (max_iter < 1) throw std::invalid_argument("power iteration needs at least one iteration");
  EigenEstimate est;
  double norm = v.norm();
  if (!(norm > 0.0)) throw std::invalid_argument("power iteration start vector is zero");
  v /= norm;
  double prev = 0.0;
  for (int k = 1; k <= max_iter; ++k) {
    Vec av = apply(v);
    if (!av.allFinite()) throw NonFiniteError("operator produced non-finite values");
    const double lambda = v.dot(av);
    est.value = lambda;
    est.residual = (av - lambda * v).norm();
    est.iterations = k;
    if (k > 1 && std::abs(lambda - prev) < tol * std::max(1.0, std::abs(lambda))) {
      est.converged = true;
      return est;
    }
    prev = lambda;
    const double n_av = av.norm();
    if (n_av == 0.0) {
      est.converged = true;
      return est;
    }
    v = av / n_av;
  }
  return est;
}

}  // namespace groklab
