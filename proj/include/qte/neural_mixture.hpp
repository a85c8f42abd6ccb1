#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "qte/gsm_prior.hpp"
#include "qte/network.hpp"
#include "qte/spline_basis.hpp"

namespace qte {

/// Floor applied to a mixture density before taking its log.
inline constexpr double kDensityFloor = 1e-300;

/**
 * Observations for the conditional density model. Column i of `inputs` is
 * (t_i, s_i1, ..., s_iD); `y` holds outcomes on [0, 1]. The two nonzero
 * M-spline values at each y_i are cached, since the likelihood only needs
 * those.
 */
struct MixtureData {
  Eigen::MatrixXd inputs;
  std::vector<double> y;
  std::vector<int> interval;
  Eigen::Matrix2Xd mvalues;

  std::size_t size() const noexcept { return y.size(); }
};

inline MixtureData make_mixture_data(const SplineBasis& basis, std::span<const double> y,
                                     std::span<const int> t, const Eigen::MatrixXd& scores) {
  const auto n = y.size();
  if (t.size() != n || static_cast<std::size_t>(scores.cols()) != n) {
    throw std::invalid_argument("make_mixture_data: outcome, treatment and score counts differ");
  }
  MixtureData data;
  data.inputs.resize(scores.rows() + 1, static_cast<Eigen::Index>(n));
  data.y.assign(y.begin(), y.end());
  data.interval.resize(n);
  data.mvalues.resize(2, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!(y[i] >= 0.0 && y[i] <= 1.0)) {
      throw std::domain_error("make_mixture_data: outcome outside [0, 1] at row " +
                              std::to_string(i));
    }
    data.inputs(0, i) = static_cast<double>(t[i]);
    data.inputs.block(1, i, scores.rows(), 1) = scores.col(i);
    const int m = basis.interval(y[i]);
    data.interval[i] = m;
    data.mvalues(0, i) = basis.mspline_unchecked(m, y[i]);
    data.mvalues(1, i) = basis.mspline_unchecked(m + 1, y[i]);
  }
  return data;
}

struct LogLikelihood {
  double value = 0.0;
  int clamped = 0;  // observations whose density hit kDensityFloor
};

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
  int clamped = 0;
};

/**
 * Conditional density model f(y | t, s) = sum_k theta_k(t, s) M_k(y), with
 * theta the softmax output of a tanh network on (t, s).
 */
class SplineMixtureModel {
 public:
  SplineMixtureModel(NetworkArchitecture arch, SplineBasis basis)
      : arch_(std::move(arch)), basis_(std::move(basis)) {
    arch_.validate();
    if (arch_.output_dim != basis_.size()) {
      throw std::invalid_argument("SplineMixtureModel: network output width " +
                                  std::to_string(arch_.output_dim) + " != basis size " +
                                  std::to_string(basis_.size()));
    }
    if (arch_.input_dim < 1) {
      throw std::invalid_argument("SplineMixtureModel: network needs the treatment input");
    }
  }

  const NetworkArchitecture& arch() const noexcept { return arch_; }
  const SplineBasis& basis() const noexcept { return basis_; }
  int score_dim() const noexcept { return arch_.input_dim - 1; }

  /// Mixture weights for a single (t, s).
  MixtureWeights forward(const NetworkWeights& w, int t, std::span<const double> s) const {
    check_weights(w);
    if (static_cast<int>(s.size()) != score_dim()) {
      throw std::invalid_argument("forward: score has " + std::to_string(s.size()) +
                                  " components, network expects " +
                                  std::to_string(score_dim()));
    }
    Eigen::MatrixXd in(arch_.input_dim, 1);
    in(0, 0) = t;
    for (std::size_t j = 0; j < s.size(); ++j) in(j + 1, 0) = s[j];
    Eigen::MatrixXd theta = theta_batch(w.flat().data(), in);
    return MixtureWeights({theta.data(), theta.data() + theta.size()});
  }

  /// Mixture weights for every column of `inputs`, K x n.
  Eigen::MatrixXd theta_batch(const double* flat, const Eigen::MatrixXd& inputs) const {
    Eigen::MatrixXd logits = mlp_forward(arch_, flat, inputs, nullptr);
    if (!logits.allFinite()) throw std::domain_error("forward: non-finite network output");
    return softmax_columns(logits);
  }

  /// Per-observation log f(y_i | t_i, s_i), floored at log(kDensityFloor).
  Eigen::VectorXd pointwise_log_likelihood(const double* flat, const MixtureData& data,
                                           int* clamped = nullptr) const {
    const Eigen::MatrixXd theta = theta_batch(flat, data.inputs);
    Eigen::VectorXd f(static_cast<Eigen::Index>(data.size()));
    int count = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      const int m = data.interval[i];
      f[i] = theta(m, i) * data.mvalues(0, i) + theta(m + 1, i) * data.mvalues(1, i);
      if (!(f[i] >= kDensityFloor)) {
        f[i] = kDensityFloor;
        ++count;
      }
    }
    if (clamped) *clamped = count;
    return f.array().log().matrix();
  }

  LogLikelihood log_likelihood(const NetworkWeights& w, const MixtureData& data) const {
    check_weights(w);
    return log_likelihood(w.flat().data(), data);
  }

  LogLikelihood log_likelihood(const double* flat, const MixtureData& data) const {
    if (data.size() == 0) return {};
    LogLikelihood out;
    const Eigen::VectorXd ll = pointwise_log_likelihood(flat, data, &out.clamped);
    out.value = pairwise_sum(ll);
    return out;
  }

  double log_posterior(const NetworkWeights& w, const PrecisionState& prec,
                       const MixtureData& data) const {
    check_weights(w);
    return log_likelihood(w.flat().data(), data).value +
           gsm_log_prior(arch_, w.flat().data(), prec, nullptr);
  }

  /// log posterior and its exact gradient with respect to every weight.
  ValueAndGradient log_posterior_gradient(const double* flat, const PrecisionState& prec,
                                          const MixtureData& data) const {
    ValueAndGradient out;
    out.gradient = Eigen::VectorXd::Zero(arch_.num_weights());
    const auto n = static_cast<Eigen::Index>(data.size());
    if (n > 0) {
      ForwardCache cache;
      Eigen::MatrixXd logits = mlp_forward(arch_, flat, data.inputs, &cache);
      if (!logits.allFinite()) throw std::domain_error("forward: non-finite network output");
      Eigen::MatrixXd theta = softmax_columns(logits);
      // d log f_i / d z_ik = theta_ik (M_k(y_i) / f_i - 1)
      Eigen::MatrixXd grad_logits = -theta;
      Eigen::VectorXd f(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const int m = data.interval[i];
        const double a = theta(m, i) * data.mvalues(0, i);
        const double b = theta(m + 1, i) * data.mvalues(1, i);
        f[i] = a + b;
        if (!(f[i] >= kDensityFloor)) {
          f[i] = kDensityFloor;
          grad_logits.col(i).setZero();
          ++out.clamped;
          continue;
        }
        grad_logits(m, i) += a / f[i];
        grad_logits(m + 1, i) += b / f[i];
      }
      out.value = pairwise_sum(f.array().log().matrix());
      mlp_backward(arch_, flat, data.inputs, cache, std::move(grad_logits),
                   out.gradient.data());
    }
    out.value += gsm_log_prior(arch_, flat, prec, out.gradient.data());
    return out;
  }

  ValueAndGradient log_posterior_gradient(const NetworkWeights& w, const PrecisionState& prec,
                                          const MixtureData& data) const {
    check_weights(w);
    return log_posterior_gradient(w.flat().data(), prec, data);
  }

  /// Deterministic pairwise summation, so partitioned evaluation reduces identically.
  static double pairwise_sum(const Eigen::VectorXd& v) {
    return pairwise_sum(v.data(), static_cast<std::size_t>(v.size()));
  }
  static double pairwise_sum(const double* p, std::size_t n) {
    if (n <= 8) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += p[i];
      return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(p, half) + pairwise_sum(p + half, n - half);
  }

 private:
  void check_weights(const NetworkWeights& w) const {
    if (!(w.arch() == arch_)) {
      throw std::invalid_argument("SplineMixtureModel: weights built for a different network");
    }
  }

  NetworkArchitecture arch_;
  SplineBasis basis_;
};

/// Binds a model to its data so the block sampler can run on it.
class MixturePosterior {
 public:
  MixturePosterior(const SplineMixtureModel& model, const MixtureData& data)
      : model_(&model), data_(&data) {}

  const NetworkArchitecture& arch() const noexcept { return model_->arch(); }
  ValueAndGradient log_posterior_gradient(const double* flat, const PrecisionState& prec) const {
    return model_->log_posterior_gradient(flat, prec, *data_);
  }

 private:
  const SplineMixtureModel* model_;
  const MixtureData* data_;
};

}  // namespace qte
