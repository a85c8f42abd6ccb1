#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "qte/network.hpp"
#include "qte/rng.hpp"

namespace qte {

/// Gamma(shape, rate) hyper-priors on the layer precision kappa and the unit
/// precisions omega.
struct GsmHyperParams {
  double a_kappa = 0.01;
  double b_kappa = 0.01;
  double a_omega = 0.01;
  double b_omega = 0.01;

  void validate() const {
    if (!(a_kappa > 0 && b_kappa > 0 && a_omega > 0 && b_omega > 0)) {
      throw std::invalid_argument("GsmHyperParams: all shape/rate values must be positive");
    }
  }
};

/**
 * Gaussian-scale-mixture precisions. Weight W^(l)_{kj} has prior variance
 * 1 / (kappa[l] * omega[l][j]); omega[l][0] belongs to the bias column.
 */
struct PrecisionState {
  std::vector<double> kappa;
  std::vector<std::vector<double>> omega;

  static PrecisionState ones(const NetworkArchitecture& arch) {
    PrecisionState p;
    p.kappa.assign(arch.num_layers(), 1.0);
    for (int l = 0; l < arch.num_layers(); ++l) p.omega.emplace_back(arch.cols(l), 1.0);
    return p;
  }

  bool all_positive() const {
    for (double k : kappa) {
      if (!(k > 0) || !std::isfinite(k)) return false;
    }
    for (const auto& layer : omega) {
      for (double w : layer) {
        if (!(w > 0) || !std::isfinite(w)) return false;
      }
    }
    return true;
  }

  void validate(const NetworkArchitecture& arch) const {
    if (static_cast<int>(kappa.size()) != arch.num_layers() ||
        static_cast<int>(omega.size()) != arch.num_layers()) {
      throw std::invalid_argument("PrecisionState: layer count mismatch");
    }
    for (int l = 0; l < arch.num_layers(); ++l) {
      if (static_cast<int>(omega[l].size()) != arch.cols(l)) {
        throw std::invalid_argument("PrecisionState: unit count mismatch in layer " +
                                    std::to_string(l));
      }
    }
    if (!all_positive()) throw std::invalid_argument("PrecisionState: non-positive precision");
  }
};

/**
 * Sum over all weights of log N(w | 0, 1/(kappa omega)), including the full
 * Gaussian normalizer -1/2 log(2 pi) + 1/2 log(kappa omega). The Gamma
 * hyper-prior densities are not included (constant in the weights).
 * If `grad` is non-null the weight gradient -kappa omega w is added to it.
 */
inline double gsm_log_prior(const NetworkArchitecture& arch, const double* flat,
                            const PrecisionState& prec, double* grad) {
  constexpr double half_log_2pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
  double total = 0.0;
  for (int l = 0; l < arch.num_layers(); ++l) {
    auto w = layer_view(arch, flat, l);
    const double kappa = prec.kappa[l];
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      const double p = kappa * prec.omega[l][j];
      const double half_log_p = 0.5 * std::log(p);
      double sq = 0.0;
      for (Eigen::Index k = 0; k < w.rows(); ++k) sq += w(k, j) * w(k, j);
      total += static_cast<double>(w.rows()) * (half_log_p - half_log_2pi) - 0.5 * p * sq;
      if (grad) {
        double* g = grad + arch.offset(l) + j * w.rows();
        for (Eigen::Index k = 0; k < w.rows(); ++k) g[k] -= p * w(k, j);
      }
    }
  }
  return total;
}

/// Prior precision kappa^(l) * omega_j^(l) of every weight, in flat order.
inline Eigen::VectorXd weight_precisions(const NetworkArchitecture& arch, const PrecisionState& prec) {
  Eigen::VectorXd lam(arch.num_weights());
  for (int l = 0; l < arch.num_layers(); ++l) {
    for (int j = 0; j < arch.cols(l); ++j) {
      lam.segment(arch.offset(l) + j * arch.rows(l), arch.rows(l))
          .setConstant(prec.kappa[l] * prec.omega[l][j]);
    }
  }
  return lam;
}

// Gamma draws can underflow to zero for extreme rates.
inline constexpr double kMinPrecision = 1e-300;

struct GammaParams {
  double shape;
  double rate;
  double mean() const noexcept { return shape / rate; }
};

/// Full conditional of kappa^(l): Gamma(a + n_l/2, b + 1/2 sum_kj omega_j w_kj^2).
inline GammaParams kappa_conditional(const NetworkArchitecture& arch, const double* flat,
                                     const PrecisionState& prec, const GsmHyperParams& hyper,
                                     int layer) {
  auto w = layer_view(arch, flat, layer);
  double ss = 0.0;
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    ss += prec.omega[layer][j] * w.col(j).squaredNorm();
  }
  const double n_l = static_cast<double>(w.size());
  return {hyper.a_kappa + 0.5 * n_l, hyper.b_kappa + 0.5 * ss};
}

/// Full conditional of omega_j^(l): Gamma(a + m/2, b + 1/2 kappa sum_k w_kj^2),
/// m the number of outgoing weights of unit j (the layer's row count).
inline GammaParams omega_conditional(const NetworkArchitecture& arch, const double* flat,
                                     const PrecisionState& prec, const GsmHyperParams& hyper,
                                     int layer, int unit) {
  auto w = layer_view(arch, flat, layer);
  const double ss = prec.kappa[layer] * w.col(unit).squaredNorm();
  return {hyper.a_omega + 0.5 * static_cast<double>(w.rows()), hyper.b_omega + 0.5 * ss};
}

inline double gibbs_update_kappa(const NetworkArchitecture& arch, const double* flat,
                                 const PrecisionState& prec, const GsmHyperParams& hyper,
                                 int layer, Rng& rng) {
  const auto g = kappa_conditional(arch, flat, prec, hyper, layer);
  return std::max(gamma_shape_rate(g.shape, g.rate, rng), kMinPrecision);
}

inline double gibbs_update_omega(const NetworkArchitecture& arch, const double* flat,
                                 const PrecisionState& prec, const GsmHyperParams& hyper,
                                 int layer, int unit, Rng& rng) {
  const auto g = omega_conditional(arch, flat, prec, hyper, layer, unit);
  return std::max(gamma_shape_rate(g.shape, g.rate, rng), kMinPrecision);
}

/// One Gibbs sweep: every kappa^(l), then every omega_j^(l).
inline void gibbs_sweep(const NetworkArchitecture& arch, const double* flat,
                        PrecisionState& prec, const GsmHyperParams& hyper, Rng& rng) {
  for (int l = 0; l < arch.num_layers(); ++l) {
    prec.kappa[l] = gibbs_update_kappa(arch, flat, prec, hyper, l, rng);
  }
  for (int l = 0; l < arch.num_layers(); ++l) {
    for (int j = 0; j < arch.cols(l); ++j) {
      prec.omega[l][j] = gibbs_update_omega(arch, flat, prec, hyper, l, j, rng);
    }
  }
}

}  // namespace qte
