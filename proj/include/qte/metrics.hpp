#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qte {

/// tau = 0.05, 0.10, ..., 0.95.
inline std::vector<double> standard_taus() {
  std::vector<double> taus;
  for (int i = 1; i <= 19; ++i) taus.push_back(i / 20.0);
  return taus;
}

/// Values of a function on a strictly increasing grid.
struct GridFunction {
  std::vector<double> grid;
  std::vector<double> values;

  void validate() const {
    if (grid.size() != values.size()) throw std::invalid_argument("GridFunction: length mismatch");
    for (std::size_t i = 1; i < grid.size(); ++i) {
      if (!(grid[i] > grid[i - 1])) {
        throw std::invalid_argument("GridFunction: grid not strictly increasing");
      }
    }
  }
};

/**
 * Integrated squared error by the trapezoid rule on an equidistant grid:
 * h * (sum of interior squared errors + half of the two endpoint terms).
 */
inline double ise(const GridFunction& f_hat, const GridFunction& f_true) {
  f_hat.validate();
  f_true.validate();
  const auto& g = f_hat.grid;
  if (g != f_true.grid) throw std::invalid_argument("ise: grids differ");
  if (g.size() < 2) throw std::invalid_argument("ise: need at least two grid points");
  const double h = (g.back() - g.front()) / static_cast<double>(g.size() - 1);
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (std::abs((g[i] - g[i - 1]) - h) > 1e-9 * std::max(1.0, std::abs(h))) {
      throw std::invalid_argument("ise: grid not equidistant");
    }
  }
  const std::size_t last = g.size() - 1;
  auto sq = [&](std::size_t i) {
    const double e = f_hat.values[i] - f_true.values[i];
    return e * e;
  };
  double s = 0.5 * (sq(0) + sq(last));
  for (std::size_t i = 1; i < last; ++i) s += sq(i);
  return h * s;
}

/// sqrt(mean((estimate - truth)^2)) over replicates.
inline double rmse_tau(std::span<const double> estimates, double truth) {
  if (estimates.empty()) throw std::invalid_argument("rmse_tau: no estimates");
  double s = 0.0;
  for (double e : estimates) s += (e - truth) * (e - truth);
  return std::sqrt(s / static_cast<double>(estimates.size()));
}

/**
 * Average absolute bias (1/m) sum_i |estimate_i - truth_i| over the quantile
 * levels. m must be 19 unless `allow_other_count` is set.
 */
inline double aab(std::span<const double> estimates, std::span<const double> truth,
                  bool allow_other_count = false) {
  if (estimates.size() != truth.size()) throw std::invalid_argument("aab: length mismatch");
  if (estimates.empty()) throw std::invalid_argument("aab: no quantile levels");
  if (estimates.size() != 19 && !allow_other_count) {
    throw std::invalid_argument("aab: expected 19 quantile levels, got " +
                                std::to_string(estimates.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i) s += std::abs(estimates[i] - truth[i]);
  return s / static_cast<double>(estimates.size());
}

/// Mean and sample standard deviation.
struct MeanSd {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
};

inline MeanSd mean_sd(std::span<const double> v) {
  MeanSd out;
  if (v.empty()) return out;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  out.mean = m;
  if (v.size() < 2) {
    out.sd = 0.0;
    return out;
  }
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  out.sd = std::sqrt(s / static_cast<double>(v.size() - 1));
  return out;
}

/**
 * AAB across replicates. `per_replicate` holds each replicate's AAB (its mean
 * and sd are what a results table reports); `of_mean` is the AAB of the
 * across-replicate mean QTE curve.
 */
struct AabSummary {
  std::vector<double> per_replicate;
  MeanSd replicate;
  double of_mean = std::numeric_limits<double>::quiet_NaN();
};

/// estimates[r][i]: replicate r at quantile level i.
inline AabSummary summarize_aab(const std::vector<std::vector<double>>& estimates,
                                std::span<const double> truth, bool allow_other_count = false) {
  AabSummary out;
  if (estimates.empty()) return out;
  std::vector<double> mean_curve(truth.size(), 0.0);
  for (const auto& r : estimates) {
    out.per_replicate.push_back(aab(r, truth, allow_other_count));
    for (std::size_t i = 0; i < truth.size(); ++i) mean_curve[i] += r[i];
  }
  for (double& m : mean_curve) m /= static_cast<double>(estimates.size());
  out.replicate = mean_sd(out.per_replicate);
  out.of_mean = aab(mean_curve, truth, allow_other_count);
  return out;
}

/**
 * WAIC on the deviance scale from a draws x observations matrix of pointwise
 * log-likelihoods: -2 * sum_i [log mean_s exp(ll_si) - var_s(ll_si)].
 */
inline double waic(const Eigen::MatrixXd& ll) {
  if (ll.rows() < 2) throw std::invalid_argument("waic: need at least two draws");
  if (!ll.allFinite()) throw std::invalid_argument("waic: non-finite log-likelihood");
  const double s = static_cast<double>(ll.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < ll.cols(); ++i) {
    const auto col = ll.col(i);
    const double mx = col.maxCoeff();
    const double lppd = mx + std::log((col.array() - mx).exp().sum() / s);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / (s - 1.0);
    total += lppd - var;
  }
  return -2.0 * total;
}

}  // namespace qte
