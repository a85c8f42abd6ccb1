#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qte {

/**
 * Second-order (piecewise linear) M-spline basis and its integrated I-spline
 * counterpart on [0, 1].
 *
 * The knot vector for K basis functions is
 *   0, 0, 1/(K-1), 2/(K-1), ..., (K-2)/(K-1), 1, 1
 * so M_k is supported on [t_k, t_{k+2}] and integrates to one. Basis indices
 * are zero-based throughout.
 */
class SplineBasis {
 public:
  explicit SplineBasis(int num_basis) : num_basis_(num_basis) {
    if (num_basis < 2) {
      throw std::invalid_argument("SplineBasis: need at least 2 basis functions, got " +
                                  std::to_string(num_basis));
    }
    const double h = 1.0 / (num_basis - 1);
    knots_.reserve(num_basis + 2);
    knots_.push_back(0.0);
    for (int i = 0; i < num_basis - 1; ++i) knots_.push_back(i * h);
    knots_.push_back(1.0);
    knots_.push_back(1.0);
    spacing_ = h;
  }

  int size() const noexcept { return num_basis_; }
  const std::vector<double>& knots() const noexcept { return knots_; }

  double mspline(int k, double y) const {
    check_index(k);
    check_point(y);
    return mspline_unchecked(k, y);
  }

  double ispline(int k, double y) const {
    check_index(k);
    check_point(y);
    return ispline_unchecked(k, y);
  }

  /// All K M-spline values at y; at most two are nonzero.
  void mspline_all(double y, std::span<double> out) const {
    check_point(y);
    check_span(out);
    std::fill(out.begin(), out.end(), 0.0);
    const int m = interval(y);
    out[m] = mspline_unchecked(m, y);
    out[m + 1] = mspline_unchecked(m + 1, y);
  }

  void ispline_all(double y, std::span<double> out) const {
    check_point(y);
    check_span(out);
    const int m = interval(y);
    for (int k = 0; k < num_basis_; ++k) {
      if (k < m) {
        out[k] = 1.0;
      } else if (k > m + 1) {
        out[k] = 0.0;
      } else {
        out[k] = ispline_unchecked(k, y);
      }
    }
  }

  /// Index m of the knot interval [m h, (m+1) h] containing y; basis
  /// functions m and m+1 are the only ones nonzero there.
  int interval(double y) const noexcept {
    int m = static_cast<int>(std::floor(y / spacing_));
    return std::clamp(m, 0, num_basis_ - 2);
  }

  double mspline_unchecked(int k, double y) const noexcept {
    const double lo = knots_[k], mid = knots_[k + 1], hi = knots_[k + 2];
    if (y < lo || y > hi) return 0.0;
    const double width = hi - lo;
    if (y < mid || (y == mid && mid == hi)) {
      // rising piece; empty when lo == mid
      if (mid == lo) return 0.0;
      return 2.0 * (y - lo) / (width * (mid - lo));
    }
    if (hi == mid) return 0.0;
    return 2.0 * (hi - y) / (width * (hi - mid));
  }

  double ispline_unchecked(int k, double y) const noexcept {
    const double lo = knots_[k], mid = knots_[k + 1], hi = knots_[k + 2];
    if (y <= lo) return 0.0;
    if (y >= hi) return 1.0;
    const double width = hi - lo;
    if (y < mid) {
      const double d = y - lo;
      return d * d / (width * (mid - lo));
    }
    const double d = hi - y;
    return 1.0 - d * d / (width * (hi - mid));
  }

 private:
  void check_index(int k) const {
    if (k < 0 || k >= num_basis_) {
      throw std::out_of_range("SplineBasis: basis index " + std::to_string(k) +
                              " outside [0, " + std::to_string(num_basis_) + ")");
    }
  }
  static void check_point(double y) {
    if (!(y >= 0.0 && y <= 1.0)) {
      throw std::domain_error("SplineBasis: evaluation point " + std::to_string(y) +
                              " outside [0, 1]");
    }
  }
  void check_span(std::span<double> out) const {
    if (static_cast<int>(out.size()) != num_basis_) {
      throw std::invalid_argument("SplineBasis: output span has wrong length");
    }
  }

  int num_basis_;
  double spacing_;
  std::vector<double> knots_;
};

/**
 * Convex mixture weights over the spline basis. Construction rejects negative
 * entries and sums further than 1e-9 from one; smaller drift is renormalized.
 */
class MixtureWeights {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit MixtureWeights(std::vector<double> theta) : theta_(std::move(theta)) {
    if (theta_.empty()) throw std::invalid_argument("MixtureWeights: empty");
    double sum = 0.0;
    for (double v : theta_) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("MixtureWeights: negative or non-finite component");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw std::invalid_argument("MixtureWeights: components sum to " + std::to_string(sum));
    }
    for (double& v : theta_) v /= sum;
  }

  std::size_t size() const noexcept { return theta_.size(); }
  double operator[](std::size_t k) const { return theta_[k]; }
  std::span<const double> values() const noexcept { return theta_; }

 private:
  std::vector<double> theta_;
};

struct PdfCdf {
  double pdf;
  double cdf;
};

/// Density and distribution function of sum_k theta_k M_k and sum_k theta_k I_k.
inline PdfCdf mixture_pdf_cdf(const SplineBasis& basis, std::span<const double> theta,
                              double y) {
  if (static_cast<int>(theta.size()) != basis.size()) {
    throw std::invalid_argument("mixture_pdf_cdf: weight length does not match basis");
  }
  if (!(y >= 0.0 && y <= 1.0)) {
    throw std::domain_error("mixture_pdf_cdf: y outside [0, 1]");
  }
  const int m = basis.interval(y);
  double pdf = theta[m] * basis.mspline_unchecked(m, y) +
               theta[m + 1] * basis.mspline_unchecked(m + 1, y);
  double cdf = 0.0;
  for (int k = 0; k < m; ++k) cdf += theta[k];
  cdf += theta[m] * basis.ispline_unchecked(m, y) +
         theta[m + 1] * basis.ispline_unchecked(m + 1, y);
  return {pdf, std::clamp(cdf, 0.0, 1.0)};
}

inline PdfCdf mixture_pdf_cdf(const SplineBasis& basis, const MixtureWeights& theta,
                              double y) {
  return mixture_pdf_cdf(basis, theta.values(), y);
}

}  // namespace qte
