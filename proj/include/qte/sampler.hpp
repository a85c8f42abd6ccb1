#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qte/gsm_prior.hpp"
#include "qte/network.hpp"
#include "qte/nuts.hpp"
#include "qte/rng.hpp"

namespace qte {

struct SamplerConfig {
  int n_iter = 3000;
  int n_burnin = 1000;
  int thin = 10;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  double init_sd = 0.1;  // initial weights ~ N(0, init_sd^2)
  MetricKind metric = MetricKind::GradientScaled;  // diagonal metric estimated in warmup

  int num_draws() const { return (n_iter - n_burnin) / thin; }

  void validate() const {
    if (n_iter < 1 || n_burnin < 0 || thin < 1) {
      throw std::invalid_argument("SamplerConfig: iterations, burn-in and thin must be positive");
    }
    if (n_burnin >= n_iter) throw std::invalid_argument("SamplerConfig: n_burnin >= n_iter");
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw std::invalid_argument("SamplerConfig: target_accept outside (0, 1)");
    }
    if (max_tree_depth < 1) throw std::invalid_argument("SamplerConfig: max_tree_depth < 1");
  }
};

struct DrawDiagnostics {
  double accept_stat = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  double energy_error = 0.0;
};

struct PosteriorDraws {
  NetworkArchitecture arch;
  std::vector<Eigen::VectorXd> weights;
  std::vector<PrecisionState> precisions;
  std::vector<DrawDiagnostics> diagnostics;
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  int warmup_divergences = 0;

  std::size_t size() const noexcept { return weights.size(); }

  double divergence_rate() const {
    if (diagnostics.empty()) return 0.0;
    int d = 0;
    for (const auto& x : diagnostics) d += x.divergent ? 1 : 0;
    return static_cast<double>(d) / static_cast<double>(diagnostics.size());
  }
};

/**
 * Anything the block sampler can run on: a network architecture plus the
 * log posterior of the weights (likelihood + GSM prior) and its gradient at
 * fixed precisions.
 */
template <typename T>
concept NetworkPosterior = requires(const T& t, const double* w, const PrecisionState& p) {
  { t.arch() } -> std::convertible_to<const NetworkArchitecture&>;
  { t.log_posterior_gradient(w, p) };
};

/**
 * Block-updating MCMC: each iteration makes one NUTS transition over all
 * weights, then a Gibbs sweep over the layer and unit precisions. The step
 * size is tuned by dual averaging during burn-in and frozen afterwards.
 */
template <NetworkPosterior Target>
PosteriorDraws run_chain(const Target& target, const GsmHyperParams& hyper,
                         const SamplerConfig& config, Rng& rng) {
  config.validate();
  hyper.validate();
  const NetworkArchitecture& arch = target.arch();
  PrecisionState prec = PrecisionState::ones(arch);

  auto density = [&](const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
    auto vg = target.log_posterior_gradient(q.data(), prec);
    grad = std::move(vg.gradient);
    return vg.value;
  };

  Eigen::VectorXd q, grad(arch.num_weights());
  double logp = -std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 100 && !std::isfinite(logp); ++attempt) {
    q = NetworkWeights::random(arch, config.init_sd, rng).flat();
    logp = detail::safe_eval(density, q, grad);
  }
  if (!std::isfinite(logp)) {
    throw std::runtime_error("run_chain: no finite initial log posterior after 100 attempts");
  }

  WarmupAdapter warmup(config.n_burnin, arch.num_weights(), config.target_accept,
                       config.metric);
  warmup.start(q, logp, grad, density, rng);

  PosteriorDraws out;
  out.arch = arch;
  out.weights.reserve(config.num_draws());
  for (int it = 0; it < config.n_iter; ++it) {
    const bool in_warmup = it < config.n_burnin;
    // The metric may depend on the precisions (the conditioning variables)
    // without disturbing invariance of p(W | precisions). Capping each scale by
    // the prior variance keeps leapfrog stable when a precision grows large.
    const Eigen::VectorXd metric =
        (warmup.inv_metric().cwiseInverse() + weight_precisions(arch, prec)).cwiseInverse();
    NutsTransition tr = nuts_draw(q, logp, grad, density, warmup.step_size(),
                                  config.max_tree_depth, metric, rng);
    q = std::move(tr.position);
    if (in_warmup) {
      out.warmup_divergences += tr.divergent ? 1 : 0;
      warmup.update(it, tr.accept_stat, q, tr.logp, tr.gradient, density, rng);
    }

    gibbs_sweep(arch, q.data(), prec, hyper, rng);
    // the weight target moved with the precisions
    logp = detail::safe_eval(density, q, grad);
    if (!std::isfinite(logp)) {
      throw std::runtime_error("run_chain: log posterior became non-finite at iteration " +
                               std::to_string(it));
    }

    if (!in_warmup && (it - config.n_burnin + 1) % config.thin == 0) {
      out.weights.push_back(q);
      out.precisions.push_back(prec);
      out.diagnostics.push_back({tr.accept_stat, tr.tree_depth, tr.n_leapfrog, tr.divergent,
                                 tr.energy_error});
    }
  }
  out.step_size = warmup.step_size();
  out.inv_metric = warmup.inv_metric();
  return out;
}

template <NetworkPosterior Target>
PosteriorDraws run_chain(const Target& target, const GsmHyperParams& hyper,
                         const SamplerConfig& config) {
  Rng rng = make_stream(config.seed);
  return run_chain(target, hyper, config, rng);
}

/**
 * Chain dump: CSV with header
 *   draw,accept_stat,tree_depth,n_leapfrog,divergent,energy_error,
 *   w0..w{P-1},kappa0..kappa{L-1},omega{l}_{j}...
 * one row per retained draw; weights in layer-major, column-major order.
 */
inline void write_chain_dump(std::ostream& os, const PosteriorDraws& draws) {
  const auto& arch = draws.arch;
  os << "draw,accept_stat,tree_depth,n_leapfrog,divergent,energy_error";
  for (int i = 0; i < arch.num_weights(); ++i) os << ",w" << i;
  for (int l = 0; l < arch.num_layers(); ++l) os << ",kappa" << l;
  for (int l = 0; l < arch.num_layers(); ++l) {
    for (int j = 0; j < arch.cols(l); ++j) os << ",omega" << l << '_' << j;
  }
  os << '\n' << std::setprecision(17);
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const auto& diag = draws.diagnostics[d];
    os << d << ',' << diag.accept_stat << ',' << diag.tree_depth << ',' << diag.n_leapfrog
       << ',' << (diag.divergent ? 1 : 0) << ',' << diag.energy_error;
    for (Eigen::Index i = 0; i < draws.weights[d].size(); ++i) os << ',' << draws.weights[d][i];
    for (double k : draws.precisions[d].kappa) os << ',' << k;
    for (const auto& layer : draws.precisions[d].omega) {
      for (double w : layer) os << ',' << w;
    }
    os << '\n';
  }
}

}  // namespace qte
