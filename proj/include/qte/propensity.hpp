#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qte/gsm_prior.hpp"
#include "qte/network.hpp"
#include "qte/neural_mixture.hpp"
#include "qte/rng.hpp"
#include "qte/sampler.hpp"

namespace qte {

inline constexpr double kPropensityClamp = 1e-6;

inline double clamp_probability(double p) {
  return std::clamp(p, kPropensityClamp, 1.0 - kPropensityClamp);
}

/// Per-column min-max scaling to [0, 1]; constant columns map to 0.
struct CovariateScale {
  Eigen::RowVectorXd lo, span;

  static CovariateScale fit(const Eigen::MatrixXd& x) {
    CovariateScale s;
    if (x.rows() == 0) {
      s.lo = Eigen::RowVectorXd::Zero(x.cols());
      s.span = Eigen::RowVectorXd::Zero(x.cols());
      return s;
    }
    s.lo = x.colwise().minCoeff();
    s.span = x.colwise().maxCoeff() - s.lo;
    return s;
  }

  /// n x d -> d x n (network input layout).
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != lo.size()) throw std::invalid_argument("CovariateScale: column count differs");
    Eigen::MatrixXd out(x.cols(), x.rows());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (span[j] > 0.0) {
        out.row(j) = ((x.col(j).array() - lo[j]) / span[j]).matrix().transpose();
      } else {
        out.row(j).setZero();
      }
    }
    return out;
  }
};

/// Out-of-sample evaluation of each retained propensity draw.
class PropensityPredictor {
 public:
  virtual ~PropensityPredictor() = default;
  /// Probabilities for the rows of x (n x d) under draw k.
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& x, int k) const = 0;
};

/**
 * N_pi posterior draws of the propensity score, materialized on the fitted
 * subjects (column k of `probs` is draw k), plus an optional predictor for
 * new covariates.
 */
struct PropensityDraws {
  Eigen::MatrixXd probs;  // n x N_pi, clamped to [1e-6, 1 - 1e-6]
  std::shared_ptr<const PropensityPredictor> predictor;

  int num_draws() const noexcept { return static_cast<int>(probs.cols()); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(probs.rows()); }
  Eigen::VectorXd draw(int k) const { return probs.col(k); }
  Eigen::VectorXd posterior_mean() const { return probs.rowwise().mean(); }

  Eigen::VectorXd predict(const Eigen::MatrixXd& x, int k) const {
    if (!predictor) throw std::logic_error("PropensityDraws: no out-of-sample predictor");
    return predictor->predict(x, k);
  }

  void validate() const {
    if (probs.cols() < 1) throw std::invalid_argument("PropensityDraws: no draws");
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      const double p = probs.data()[i];
      if (!(p >= kPropensityClamp && p <= 1.0 - kPropensityClamp)) {
        throw std::invalid_argument("PropensityDraws: probability outside the clamp bounds");
      }
    }
  }
};

/// Wrap known probabilities as a single draw. Values must lie strictly in (0, 1).
inline PropensityDraws known_propensity(std::span<const double> values) {
  PropensityDraws out;
  out.probs.resize(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double p = values[i];
    if (!(p > 0.0 && p < 1.0)) {
      throw std::invalid_argument("known_propensity: value " + std::to_string(p) + " at row " +
                                  std::to_string(i) + " is not strictly inside (0, 1)");
    }
    out.probs(static_cast<Eigen::Index>(i), 0) = clamp_probability(p);
  }
  return out;
}

inline PropensityDraws known_propensity(const Eigen::VectorXd& values) {
  return known_propensity(std::span<const double>(values.data(), values.size()));
}

/// Closed form evaluated on every row of x.
inline PropensityDraws known_propensity(
    const Eigen::MatrixXd& x, const std::function<double(const Eigen::RowVectorXd&)>& pi) {
  std::vector<double> v(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) v[i] = pi(x.row(i));
  auto out = known_propensity(std::span<const double>(v));

  struct Closed : PropensityPredictor {
    std::function<double(const Eigen::RowVectorXd&)> f;
    Eigen::VectorXd predict(const Eigen::MatrixXd& xs, int) const override {
      Eigen::VectorXd p(xs.rows());
      for (Eigen::Index i = 0; i < xs.rows(); ++i) p[i] = clamp_probability(f(xs.row(i)));
      return p;
    }
  };
  auto pred = std::make_shared<Closed>();
  pred->f = pi;
  out.predictor = std::move(pred);
  return out;
}

struct PropensityConfig {
  int num_draws = 5;  // N_pi
  int hidden = 10;
  int n_iter = 1000;
  int n_burnin = 500;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  GsmHyperParams hyper;

  void validate() const {
    if (num_draws < 1) throw std::invalid_argument("PropensityConfig: num_draws < 1");
    if (hidden < 1) throw std::invalid_argument("PropensityConfig: hidden < 1");
    if (n_burnin < 0 || n_iter - n_burnin < num_draws) {
      throw std::invalid_argument("PropensityConfig: too few post-burn-in iterations");
    }
    hyper.validate();
  }

  /// Evenly thinned so exactly num_draws draws are kept.
  SamplerConfig sampler(std::uint64_t seed) const {
    SamplerConfig s;
    s.n_iter = n_iter;
    s.n_burnin = n_burnin;
    s.thin = (n_iter - n_burnin) / num_draws;
    s.target_accept = target_accept;
    s.max_tree_depth = max_tree_depth;
    s.seed = seed;
    return s;
  }
};

/// Bernoulli-logit likelihood of a one-output tanh network plus the GSM prior.
class LogisticPosterior {
 public:
  LogisticPosterior(NetworkArchitecture arch, Eigen::MatrixXd inputs, std::vector<int> t)
      : arch_(std::move(arch)), inputs_(std::move(inputs)), t_(std::move(t)) {
    if (arch_.output_dim != 1) throw std::invalid_argument("LogisticPosterior: output_dim != 1");
    if (inputs_.rows() != arch_.input_dim || inputs_.cols() != static_cast<Eigen::Index>(t_.size())) {
      throw std::invalid_argument("LogisticPosterior: input shape mismatch");
    }
  }

  const NetworkArchitecture& arch() const noexcept { return arch_; }

  ValueAndGradient log_posterior_gradient(const double* flat, const PrecisionState& prec) const {
    ValueAndGradient out;
    out.gradient = Eigen::VectorXd::Zero(arch_.num_weights());
    const auto n = inputs_.cols();
    if (n > 0) {
      ForwardCache cache;
      const Eigen::MatrixXd z = mlp_forward(arch_, flat, inputs_, &cache);
      if (!z.allFinite()) throw std::domain_error("logistic: non-finite network output");
      Eigen::MatrixXd grad_z(1, n);
      Eigen::VectorXd ll(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double zi = z(0, i);
        // log sigma(z) = -softplus(-z), log(1 - sigma(z)) = -softplus(z)
        const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
        const double sigma = 1.0 / (1.0 + std::exp(-zi));
        ll[i] = t_[i] == 1 ? zi - softplus : -softplus;
        grad_z(0, i) = t_[i] - sigma;
      }
      out.value = SplineMixtureModel::pairwise_sum(ll);
      mlp_backward(arch_, flat, inputs_, cache, std::move(grad_z), out.gradient.data());
    }
    out.value += gsm_log_prior(arch_, flat, prec, out.gradient.data());
    return out;
  }

 private:
  NetworkArchitecture arch_;
  Eigen::MatrixXd inputs_;
  std::vector<int> t_;
};

/// Interface for a first-stage propensity model.
class PropensityBackend {
 public:
  virtual ~PropensityBackend() = default;
  virtual std::string name() const = 0;
  virtual PropensityDraws fit(const Eigen::MatrixXd& x, std::span<const int> t,
                              const PropensityConfig& config, Rng& rng) const = 0;
};

/// Bayesian neural network classifier: one tanh hidden layer, logistic link.
class BnnPropensity final : public PropensityBackend {
 public:
  std::string name() const override { return "bnn"; }

  PropensityDraws fit(const Eigen::MatrixXd& x, std::span<const int> t,
                      const PropensityConfig& config, Rng& rng) const override {
    config.validate();
    if (static_cast<std::size_t>(x.rows()) != t.size()) {
      throw std::invalid_argument("fit_propensity: covariate and treatment counts differ");
    }
    int treated = 0;
    for (int ti : t) {
      if (ti != 0 && ti != 1) throw std::invalid_argument("fit_propensity: treatment not binary");
      treated += ti;
    }
    if (treated == 0 || treated == static_cast<int>(t.size())) {
      throw std::invalid_argument("fit_propensity: both treatment arms must be populated");
    }

    auto model = std::make_shared<Fitted>();
    model->scale = CovariateScale::fit(x);
    model->arch = {static_cast<int>(x.cols()), {config.hidden}, 1};
    LogisticPosterior target(model->arch, model->scale.apply(x), {t.begin(), t.end()});
    SamplerConfig sc = config.sampler(0);
    PosteriorDraws draws = run_chain(target, config.hyper, sc, rng);
    draws.weights.resize(config.num_draws);
    model->weights = std::move(draws.weights);

    PropensityDraws out;
    out.probs.resize(x.rows(), config.num_draws);
    for (int k = 0; k < config.num_draws; ++k) out.probs.col(k) = model->predict(x, k);
    out.predictor = std::move(model);
    return out;
  }

 private:
  struct Fitted : PropensityPredictor {
    CovariateScale scale;
    NetworkArchitecture arch;
    std::vector<Eigen::VectorXd> weights;

    Eigen::VectorXd predict(const Eigen::MatrixXd& xs, int k) const override {
      const Eigen::MatrixXd z = mlp_forward(arch, weights.at(k).data(), scale.apply(xs), nullptr);
      Eigen::VectorXd p(xs.rows());
      for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = clamp_probability(1.0 / (1.0 + std::exp(-z(0, i))));
      return p;
    }
  };
};

inline PropensityDraws fit_propensity(const Eigen::MatrixXd& x, std::span<const int> t,
                                      const PropensityConfig& config, Rng& rng,
                                      const PropensityBackend& backend = BnnPropensity{}) {
  return backend.fit(x, t, config, rng);
}

/// n x N_pi CSV with header pi1..piK.
inline void write_propensity_csv(std::ostream& os, const PropensityDraws& d) {
  for (int k = 0; k < d.num_draws(); ++k) os << (k ? "," : "") << "pi" << (k + 1);
  os << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < d.probs.rows(); ++i) {
    for (int k = 0; k < d.num_draws(); ++k) os << (k ? "," : "") << d.probs(i, k);
    os << '\n';
  }
}

/// Reads the format written by write_propensity_csv (any header names).
inline PropensityDraws read_propensity_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("propensity CSV: empty input");
  const auto ncol = std::count(line.begin(), line.end(), ',') + 1;
  std::vector<double> values;
  int row = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    ++row;
    std::stringstream ss(line);
    std::string cell;
    int c = 0;
    while (std::getline(ss, cell, ',')) {
      std::size_t pos = 0;
      double v;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        throw std::invalid_argument("propensity CSV line " + std::to_string(row + 1) +
                                    ": not a number: '" + cell + "'");
      }
      if (!(v > 0.0 && v < 1.0)) {
        throw std::invalid_argument("propensity CSV line " + std::to_string(row + 1) +
                                    ": probability outside (0, 1)");
      }
      values.push_back(clamp_probability(v));
      ++c;
    }
    if (c != ncol) {
      throw std::invalid_argument("propensity CSV line " + std::to_string(row + 1) +
                                  ": expected " + std::to_string(ncol) + " columns");
    }
  }
  PropensityDraws d;
  d.probs = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), row, ncol);
  return d;
}

}  // namespace qte
