#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/distributions/skew_normal.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "qte/rng.hpp"

namespace qte {

/// Observed data, plus potential outcomes and true propensities when simulated.
struct Dataset {
  Eigen::VectorXd y;
  std::vector<int> t;
  Eigen::MatrixXd x;  // n x d, one row per subject

  Eigen::VectorXd y0, y1, pi;  // empty for real data

  std::size_t size() const noexcept { return t.size(); }
  int dim() const noexcept { return static_cast<int>(x.cols()); }
  bool has_truth() const noexcept { return pi.size() == y.size() && y.size() > 0; }
};

struct SimulationDesign {
  int id = 4;
  int J = 0;  // confounders in design 1
  int n = 500;
  double rate0 = 2.0;  // design 4 exponential rates
  double rate1 = 4.0;

  void validate() const {
    if (id < 1 || id > 4) throw std::invalid_argument("design id must be 1, 2, 3 or 4");
    if (n < 1) throw std::invalid_argument("sample size must be positive");
    if (id == 1 && (J < 0 || J > 5)) throw std::invalid_argument("design 1 needs J in 0..5");
    if (id == 4 && !(rate0 > 0.0 && rate1 > 0.0 && std::isfinite(rate0) && std::isfinite(rate1))) {
      throw std::invalid_argument("design 4 rates must be positive");
    }
  }

  int num_covariates() const {
    switch (id) {
      case 2: return 12;
      case 3: return 4;
      default: return 5;
    }
  }
};

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/**
 * Conditional law of one potential outcome given covariates. One of:
 * a two-component normal mixture, location + half-normal mixture error,
 * skew-normal, or exponential.
 */
struct ConditionalLaw {
  enum class Kind { NormalMixture, HalfNormalError, SkewNormal, Exponential };
  Kind kind = Kind::NormalMixture;
  // NormalMixture: (w[c], mean[c], sd[c]) for c = 0, 1
  // HalfNormalError: loc + e, e = +|N(0, sd0^2)| w.p. w0, else -|N(0, sd1^2)|
  // SkewNormal: location mean[0], scale sd[0], shape alpha
  // Exponential: rate
  std::array<double, 2> w{1.0, 0.0}, mean{0.0, 0.0}, sd{1.0, 1.0};
  double loc = 0.0, alpha = 0.0, rate = 1.0;

  static ConditionalLaw normal_mixture(double w0, double m0, double s0, double m1, double s1) {
    ConditionalLaw c;
    c.kind = Kind::NormalMixture;
    c.w = {w0, 1.0 - w0};
    c.mean = {m0, m1};
    c.sd = {s0, s1};
    return c;
  }
  static ConditionalLaw normal(double m, double s) { return normal_mixture(1.0, m, s, 0.0, 1.0); }
  static ConditionalLaw half_normal_error(double loc, double w_pos, double sd_pos, double sd_neg) {
    ConditionalLaw c;
    c.kind = Kind::HalfNormalError;
    c.loc = loc;
    c.w = {w_pos, 1.0 - w_pos};
    c.sd = {sd_pos, sd_neg};
    return c;
  }
  static ConditionalLaw skew_normal(double location, double scale, double shape) {
    ConditionalLaw c;
    c.kind = Kind::SkewNormal;
    c.mean = {location, 0.0};
    c.sd = {scale, 1.0};
    c.alpha = shape;
    return c;
  }
  static ConditionalLaw exponential(double rate) {
    ConditionalLaw c;
    c.kind = Kind::Exponential;
    c.rate = rate;
    return c;
  }

  double pdf(double y) const {
    switch (kind) {
      case Kind::NormalMixture: {
        double f = 0.0;
        for (int c = 0; c < 2; ++c) {
          if (w[c] > 0.0) f += w[c] * normal_pdf((y - mean[c]) / sd[c]) / sd[c];
        }
        return f;
      }
      case Kind::HalfNormalError: {
        const double e = y - loc;
        return e >= 0.0 ? w[0] * 2.0 * normal_pdf(e / sd[0]) / sd[0]
                        : w[1] * 2.0 * normal_pdf(e / sd[1]) / sd[1];
      }
      case Kind::SkewNormal:
        return boost::math::pdf(
            boost::math::skew_normal_distribution<double>(mean[0], sd[0], alpha), y);
      case Kind::Exponential:
        return y < 0.0 ? 0.0 : rate * std::exp(-rate * y);
    }
    return 0.0;
  }

  double cdf(double y) const {
    switch (kind) {
      case Kind::NormalMixture: {
        double f = 0.0;
        for (int c = 0; c < 2; ++c) {
          if (w[c] > 0.0) f += w[c] * normal_cdf((y - mean[c]) / sd[c]);
        }
        return f;
      }
      case Kind::HalfNormalError: {
        const double e = y - loc;
        return e >= 0.0 ? w[1] + w[0] * (2.0 * normal_cdf(e / sd[0]) - 1.0)
                        : w[1] * 2.0 * normal_cdf(e / sd[1]);
      }
      case Kind::SkewNormal:
        return boost::math::cdf(
            boost::math::skew_normal_distribution<double>(mean[0], sd[0], alpha), y);
      case Kind::Exponential:
        return y <= 0.0 ? 0.0 : -std::expm1(-rate * y);
    }
    return 0.0;
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case Kind::NormalMixture: {
        const int c = uniform01(rng) < w[0] ? 0 : 1;
        return mean[c] + sd[c] * std_normal(rng);
      }
      case Kind::HalfNormalError: {
        const bool pos = uniform01(rng) < w[0];
        const double h = std::abs(std_normal(rng));
        return pos ? loc + sd[0] * h : loc - sd[1] * h;
      }
      case Kind::SkewNormal: {
        const double delta = alpha / std::sqrt(1.0 + alpha * alpha);
        const double u0 = std_normal(rng), v = std_normal(rng);
        return mean[0] + sd[0] * (delta * std::abs(u0) + std::sqrt(1.0 - delta * delta) * v);
      }
      case Kind::Exponential:
        return -std::log1p(-uniform01(rng)) / rate;
    }
    return 0.0;
  }

  /// An interval holding all but a negligible tail of the law.
  std::pair<double, double> bracket() const {
    switch (kind) {
      case Kind::NormalMixture:
        return {std::min(mean[0] - 10 * sd[0], mean[1] - 10 * sd[1]),
                std::max(mean[0] + 10 * sd[0], mean[1] + 10 * sd[1])};
      case Kind::HalfNormalError:
        return {loc - 10 * sd[1], loc + 10 * sd[0]};
      case Kind::SkewNormal:
        return {mean[0] - 10 * sd[0], mean[0] + 10 * sd[0]};
      case Kind::Exponential:
        return {0.0, 40.0 / rate};
    }
    return {0.0, 1.0};
  }
};

/// Constants of the neural-network propensity model in design 3.
struct Sim3Params {
  Eigen::Matrix<double, 5, 4> Wh;
  Eigen::Matrix<double, 5, 1> bh;
  Eigen::Matrix<double, 1, 5> Wo;
  double bo;
  Eigen::Matrix4d covariance;

  static const Sim3Params& get() {
    static const Sim3Params p = [] {
      Sim3Params q;
      q.Wh << -0.99, -1.1, -0.14, -0.26,  //
          -0.18, 0.03, -1.45, -0.07,      //
          -0.44, 0.19, 0.86, 0.36,        //
          -1.07, 0.67, -0.58, -0.13,      //
          0.12, -0.37, 0.47, 1.25;
      q.bh << 0.96, 0.64, 0.74, -0.46, 0.21;
      q.Wo << -0.15, 0.3, -0.004, -0.21, -0.88;
      q.bo = -0.05;
      q.covariance << 1, 0.5, 0.2, 0.3,  //
          0.5, 1, 0.7, 0,                //
          0.2, 0.7, 1, 0,                //
          0.3, 0, 0, 1;
      return q;
    }();
    return p;
  }
};

namespace detail {

inline double sim1_z(const Eigen::Ref<const Eigen::RowVectorXd>& x, int k) {
  return expit(0.8 * x.sum() + 0.1 * x.array().abs().pow(k).sum());
}

inline double sim2_z(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  double s = -2.125 + 0.5 * x[0] * x[3] + x[1] * x[4];
  for (int j = 0; j < 6; ++j) s += x[j] * x[j + 6];
  return expit(s);
}

}  // namespace detail

/// True P(T = 1 | x).
inline double true_propensity(const SimulationDesign& d,
                              const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  switch (d.id) {
    case 1:
      return d.J == 0 ? 0.5 : expit(4.0 / d.J * x.head(d.J).sum());
    case 2:
      return detail::sim2_z(x);
    case 3: {
      const auto& p = Sim3Params::get();
      const Eigen::Matrix<double, 5, 1> h = (p.Wh * x.transpose() + p.bh).array().tanh();
      return expit(p.Wo.dot(h.transpose()) + p.bo);
    }
    default:
      return 0.5;
  }
}

/// Law of Y(t) given covariates x.
inline ConditionalLaw conditional_law(const SimulationDesign& d,
                                      const Eigen::Ref<const Eigen::RowVectorXd>& x, int t) {
  switch (d.id) {
    case 1: {
      if (t == 0) {
        const double z1 = detail::sim1_z(x, 1);
        return ConditionalLaw::half_normal_error(-2.3 + z1 + z1 * z1, 0.75, 0.9, 0.3);
      }
      const double z2 = detail::sim1_z(x, 2);
      return ConditionalLaw::normal_mixture(0.7, -2.5 + 5 * z2, 0.35, 2.5 - 5 * z2, 0.35);
    }
    case 2: {
      const double z = detail::sim2_z(x);
      if (t == 0) {
        const double a = std::sqrt(z), b = 1.0 - std::sqrt(z);
        const double w0 = a / (a + b);  // a + b == 1, kept explicit
        return ConditionalLaw::normal_mixture(w0, 2 * z * z + x[3] + x[2], 0.5,
                                              z * z + x[1] - x.head(3).squaredNorm(), 0.8);
      }
      return ConditionalLaw::normal_mixture(0.6, -z, 0.8, x[4] + z, 1.0);
    }
    case 3:
      if (t == 0) return ConditionalLaw::skew_normal(2 * std::tanh(x[1] - x[2] + 0.5 * x[3]), 0.5, 3.0);
      return ConditionalLaw::normal(2 * std::tanh(x[0] + 0.5 * x[1] - x[2] * x[2]), 0.5);
    default:
      return ConditionalLaw::exponential(t == 0 ? d.rate0 : d.rate1);
  }
}

/// One covariate vector from the design's covariate distribution.
inline Eigen::RowVectorXd draw_covariates(const SimulationDesign& d, Rng& rng) {
  Eigen::RowVectorXd x(d.num_covariates());
  switch (d.id) {
    case 2:
      for (int j = 0; j < 3; ++j) x[j] = uniform01(rng);
      for (int j = 3; j < 6; ++j) x[j] = 1.0 + uniform01(rng);
      for (int j = 6; j < 12; ++j) x[j] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
      break;
    case 3: {
      static const Eigen::Matrix4d chol = Sim3Params::get().covariance.llt().matrixL();
      Eigen::Vector4d z;
      for (int j = 0; j < 4; ++j) z[j] = std_normal(rng);
      x = (chol * z).transpose();
      break;
    }
    default:
      for (auto& v : x) v = -2.0 + 4.0 * uniform01(rng);
  }
  return x;
}

/// n subjects from the design; Y = T * Y(1) + (1 - T) * Y(0).
inline Dataset simulate(const SimulationDesign& d, Rng& rng) {
  d.validate();
  Dataset out;
  const int p = d.num_covariates();
  out.x.resize(d.n, p);
  out.y.resize(d.n);
  out.y0.resize(d.n);
  out.y1.resize(d.n);
  out.pi.resize(d.n);
  out.t.resize(d.n);
  for (int i = 0; i < d.n; ++i) {
    const Eigen::RowVectorXd x = draw_covariates(d, rng);
    out.x.row(i) = x;
    out.pi[i] = true_propensity(d, x);
    out.t[i] = uniform01(rng) < out.pi[i] ? 1 : 0;
    out.y0[i] = conditional_law(d, x, 0).sample(rng);
    out.y1[i] = conditional_law(d, x, 1).sample(rng);
    out.y[i] = out.t[i] == 1 ? out.y1[i] : out.y0[i];
  }
  return out;
}

inline Dataset gen_sim1(int J, int n, Rng& rng) {
  if (J != 0 && J != 2) throw std::invalid_argument("gen_sim1: J must be 0 or 2");
  return simulate({1, J, n}, rng);
}
inline Dataset gen_sim2(int n, Rng& rng) { return simulate({2, 0, n}, rng); }
inline Dataset gen_sim3(int n, Rng& rng) { return simulate({3, 0, n}, rng); }
inline Dataset gen_sim4(int n, Rng& rng, double rate0 = 2.0, double rate1 = 4.0) {
  return simulate({4, 0, n, rate0, rate1}, rng);
}

/**
 * Marginal counterfactual distributions F_t(y) = E_X[F(y | X, t)]. Exact for
 * design 4; otherwise the conditional laws are averaged over n_mc covariate
 * draws (common to both arms).
 */
class TrueMarginals {
 public:
  static constexpr int kMinMonteCarlo = 100000;
  /// Default oracle size; keeps the Monte Carlo sd of the medians near 0.002.
  static constexpr int kDefaultMonteCarlo = 1000000;

  TrueMarginals(const SimulationDesign& design, int n_mc, Rng& rng) : design_(design) {
    design.validate();
    if (design.id == 4) return;
    if (n_mc < kMinMonteCarlo) {
      throw std::invalid_argument("TrueMarginals: need at least 1e5 Monte Carlo draws");
    }
    for (auto& arm : laws_) arm.reserve(n_mc);
    for (int i = 0; i < n_mc; ++i) {
      const Eigen::RowVectorXd x = draw_covariates(design, rng);
      for (int t = 0; t < 2; ++t) laws_[t].push_back(conditional_law(design, x, t));
    }
  }

  const SimulationDesign& design() const noexcept { return design_; }
  bool exact() const noexcept { return design_.id == 4; }

  double cdf(int t, double y) const {
    if (exact()) return y <= 0.0 ? 0.0 : -std::expm1(-rate(t) * y);
    return average(t, [y](const ConditionalLaw& c) { return c.cdf(y); });
  }

  double pdf(int t, double y) const {
    if (exact()) return y < 0.0 ? 0.0 : rate(t) * std::exp(-rate(t) * y);
    return average(t, [y](const ConditionalLaw& c) { return c.pdf(y); });
  }

  /// Inverse of cdf(t, .), to absolute tolerance `tol` in y.
  double quantile(int t, double tau, double tol = 1e-9) const {
    if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("quantile: tau outside (0, 1)");
    if (exact()) return -std::log1p(-tau) / rate(t);
    auto [lo, hi] = support(t);
    // Newton from the bracket midpoint, falling back to bisection
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
      const double f = cdf(t, x) - tau;
      if (f < 0.0) {
        lo = x;
      } else {
        hi = x;
      }
      const double dens = pdf(t, x);
      double next = dens > 0.0 ? x - f / dens : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - x) < 0.25 * tol) break;
      x = next;
    }
    return x;
  }

  double qte(double tau) const { return quantile(1, tau) - quantile(0, tau); }

 private:
  double rate(int t) const { return t == 0 ? design_.rate0 : design_.rate1; }

  template <typename F>
  double average(int t, F f) const {
    const auto& arm = laws_.at(t);
    double s = 0.0;
    for (const auto& c : arm) s += f(c);
    return s / static_cast<double>(arm.size());
  }

  std::pair<double, double> support(int t) const {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : laws_.at(t)) {
      const auto [a, b] = c.bracket();
      lo = std::min(lo, a);
      hi = std::max(hi, b);
    }
    return {lo, hi};
  }

  SimulationDesign design_;
  std::array<std::vector<ConditionalLaw>, 2> laws_;
};

}  // namespace qte
