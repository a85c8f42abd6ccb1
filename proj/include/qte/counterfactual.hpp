#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qte/gsm_prior.hpp"
#include "qte/metrics.hpp"
#include "qte/neural_mixture.hpp"
#include "qte/parallel.hpp"
#include "qte/propensity.hpp"
#include "qte/rng.hpp"
#include "qte/sampler.hpp"
#include "qte/simgen.hpp"
#include "qte/spline_basis.hpp"

namespace qte {

/// Which balancing score enters the outcome network next to the treatment.
enum class ScoreType {
  Double,  // (pi(X), X)
  PsOnly,  // pi(X)
  XOnly,   // X
};

inline std::string to_string(ScoreType s) {
  switch (s) {
    case ScoreType::PsOnly: return "ps-only";
    case ScoreType::XOnly: return "x-only";
    default: return "double";
  }
}

inline ScoreType parse_score_type(const std::string& s) {
  if (s == "double") return ScoreType::Double;
  if (s == "ps-only") return ScoreType::PsOnly;
  if (s == "x-only") return ScoreType::XOnly;
  throw std::invalid_argument("unknown score type '" + s + "' (double, ps-only, x-only)");
}

/// Affine map between raw outcomes and the unit interval.
struct OutcomeScale {
  double y_min = 0.0;
  double y_max = 1.0;
  double margin = 0.0;

  double width() const noexcept { return y_max - y_min + 2.0 * margin; }
  double to_unit(double y_raw) const { return (y_raw - y_min + margin) / width(); }
  double to_raw(double y) const { return y_min - margin + y * width(); }
  /// Density on the unit scale -> density on the raw scale.
  double density_to_raw(double f) const { return f / width(); }
};

struct NormalizedOutcome {
  Eigen::VectorXd y;
  OutcomeScale scale;
};

/// Min-max normalization with `margin` (raw units) of headroom on both sides.
inline NormalizedOutcome normalize_outcome(const Eigen::VectorXd& y_raw, double margin) {
  if (y_raw.size() < 2) throw std::invalid_argument("normalize_outcome: need at least two outcomes");
  if (!y_raw.allFinite()) throw std::invalid_argument("normalize_outcome: non-finite outcome");
  if (!(margin >= 0.0) || !std::isfinite(margin)) {
    throw std::invalid_argument("normalize_outcome: margin must be nonnegative");
  }
  NormalizedOutcome out;
  out.scale.y_min = y_raw.minCoeff();
  out.scale.y_max = y_raw.maxCoeff();
  out.scale.margin = margin;
  if (!(out.scale.y_max > out.scale.y_min)) {
    throw std::invalid_argument("normalize_outcome: outcomes are constant");
  }
  out.y.resize(y_raw.size());
  for (Eigen::Index i = 0; i < y_raw.size(); ++i) {
    out.y[i] = std::clamp(out.scale.to_unit(y_raw[i]), 0.0, 1.0);
  }
  return out;
}

/// Rows (pi_j(X_i), X_i): n x (d + 1).
inline Eigen::MatrixXd build_double_score(const Eigen::MatrixXd& x, const PropensityDraws& prop,
                                          int j) {
  if (j < 0 || j >= prop.num_draws()) throw std::out_of_range("build_double_score: draw index");
  if (static_cast<std::size_t>(x.rows()) != prop.size()) {
    throw std::invalid_argument("build_double_score: covariate and propensity counts differ");
  }
  Eigen::MatrixXd s(x.rows(), x.cols() + 1);
  s.col(0) = prop.probs.col(j);
  s.rightCols(x.cols()) = x;
  return s;
}

/// Network scores (D x n) from scaled covariates (d x n) and one propensity vector.
inline Eigen::MatrixXd network_scores(const Eigen::MatrixXd& x_scaled, const Eigen::VectorXd& pi,
                                      ScoreType type) {
  const auto n = x_scaled.cols();
  switch (type) {
    case ScoreType::PsOnly:
      return pi.transpose();
    case ScoreType::XOnly:
      return x_scaled;
    default: {
      Eigen::MatrixXd s(x_scaled.rows() + 1, n);
      s.row(0) = pi.transpose();
      s.bottomRows(x_scaled.rows()) = x_scaled;
      return s;
    }
  }
}

/// One Dirichlet(1, ..., 1) draw as normalized unit exponentials.
inline Eigen::VectorXd bayesian_bootstrap(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("bayesian_bootstrap: n < 1");
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u[i] = -std::log1p(-uniform01(rng));
  u /= u.sum();
  return u;
}

/**
 * Mixture weights of the marginal F_t = sum_i u_i F(. | t, S_i), which is
 * itself a spline mixture with weights sum_i u_i theta_k(t, S_i).
 */
inline Eigen::VectorXd marginal_mixture_weights(const SplineMixtureModel& model, const double* flat,
                                                const Eigen::MatrixXd& scores,
                                                const Eigen::VectorXd& u, int t) {
  if (scores.rows() != model.score_dim() || scores.cols() != u.size()) {
    throw std::invalid_argument("marginalize: score matrix shape mismatch");
  }
  Eigen::MatrixXd inputs(scores.rows() + 1, scores.cols());
  inputs.row(0).setConstant(t);
  inputs.bottomRows(scores.rows()) = scores;
  return model.theta_batch(flat, inputs) * u;
}

struct Marginal {
  Eigen::VectorXd theta_bar;
  Eigen::VectorXd f;  // density on the grid
  Eigen::VectorXd F;  // CDF on the grid
};

inline Marginal marginalize(const SplineMixtureModel& model, const double* flat,
                            const Eigen::MatrixXd& scores, const Eigen::VectorXd& u,
                            std::span<const double> grid, int t) {
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!(grid[g] >= 0.0 && grid[g] <= 1.0) || (g > 0 && !(grid[g] > grid[g - 1]))) {
      throw std::invalid_argument("marginalize: grid must be strictly increasing within [0, 1]");
    }
  }
  Marginal m;
  m.theta_bar = marginal_mixture_weights(model, flat, scores, u, t);
  m.f.resize(static_cast<Eigen::Index>(grid.size()));
  m.F.resize(static_cast<Eigen::Index>(grid.size()));
  const std::span<const double> th(m.theta_bar.data(), m.theta_bar.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto pc = mixture_pdf_cdf(model.basis(), th, grid[g]);
    m.f[g] = pc.pdf;
    m.F[g] = pc.cdf;
  }
  return m;
}

struct QuantileResult {
  double value = 0.0;
  bool flagged = false;  // tau outside the grid CDF's range; clamped to an endpoint
};

/**
 * Solves F(y) = tau: locate the first grid cell whose CDF range covers tau,
 * then bisect `exact_cdf` inside that cell. With no exact CDF the linear
 * interpolant of the grid values is returned.
 */
template <typename Cdf>
QuantileResult invert_quantile(std::span<const double> grid, std::span<const double> F, double tau,
                               Cdf&& exact_cdf) {
  if (grid.size() != F.size() || grid.empty()) {
    throw std::invalid_argument("invert_quantile: grid and CDF lengths differ");
  }
  if (!(tau > 0.0 && tau < 1.0)) throw std::domain_error("invert_quantile: tau outside (0, 1)");
  const auto it = std::lower_bound(F.begin(), F.end(), tau);
  if (it == F.begin()) return {grid.front(), tau < F.front()};
  if (it == F.end()) return {grid.back(), true};
  const std::size_t hi = static_cast<std::size_t>(it - F.begin());
  double a = grid[hi - 1], b = grid[hi];
  if constexpr (std::is_same_v<std::decay_t<Cdf>, std::nullptr_t>) {
    const double fa = F[hi - 1], fb = F[hi];
    return {fb > fa ? a + (tau - fa) / (fb - fa) * (b - a) : b, false};
  } else {
    // fixed iteration count keeps the map tau -> y monotone
    for (int iter = 0; iter < 60 && b - a > 1e-15; ++iter) {
      const double mid = 0.5 * (a + b);
      if (exact_cdf(mid) < tau) {
        a = mid;
      } else {
        b = mid;
      }
    }
    return {0.5 * (a + b), false};
  }
}

inline QuantileResult invert_quantile(std::span<const double> grid, std::span<const double> F,
                                      double tau) {
  return invert_quantile(grid, F, tau, nullptr);
}

/// Equidistant grid of g points on [0, 1].
inline std::vector<double> unit_grid(int g) {
  if (g < 2) throw std::invalid_argument("grid needs at least two points");
  std::vector<double> v(g);
  for (int i = 0; i < g; ++i) v[i] = static_cast<double>(i) / (g - 1);
  v.back() = 1.0;
  return v;
}

/// Per (j, l) posterior draws on the unit scale.
struct CounterfactualDraws {
  std::vector<double> grid;
  std::vector<double> taus;
  OutcomeScale scale;
  int n_pi = 0;
  int n_w = 0;
  std::vector<std::pair<int, int>> index;  // (j, l) of each row
  Eigen::MatrixXd f0, F0, f1, F1;          // draws x grid
  Eigen::MatrixXd q0, q1, delta;           // draws x taus
  Eigen::MatrixXd loglik;                  // draws x n, observed-data pointwise log density
  int quantile_flags = 0;
  std::vector<double> step_size;        // per j
  std::vector<double> divergence_rate;  // per j
  std::vector<PosteriorDraws> chains;   // per j, for chain dumps

  int num_draws() const noexcept { return static_cast<int>(index.size()); }
};

struct Band {
  std::vector<double> mean, lo, hi;
};

/// Posterior means and equal-tailed intervals, on the raw outcome scale.
struct Summary {
  std::vector<double> grid_y;
  Band f0, f1, F0, F1;
  std::vector<double> taus;
  Band qte, q0, q1;
  double ci_level = 0.95;
};

/// Linear-interpolation percentile of a sorted sample.
inline double sorted_percentile(const std::vector<double>& s, double p) {
  if (s.size() == 1) return s[0];
  const double h = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// Column summaries of a draws x m matrix, each entry mapped through `to_raw`.
template <typename Map>
Band summarize_columns(const Eigen::MatrixXd& m, double level, Map to_raw) {
  Band b;
  std::vector<double> col(m.rows());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) sum += (col[r] = to_raw(m(r, c)));
    std::sort(col.begin(), col.end());
    b.mean.push_back(sum / static_cast<double>(m.rows()));
    b.lo.push_back(sorted_percentile(col, 0.5 * (1.0 - level)));
    b.hi.push_back(sorted_percentile(col, 0.5 * (1.0 + level)));
  }
  return b;
}

inline Summary summarize(const CounterfactualDraws& d, double ci_level) {
  if (d.num_draws() < 1) throw std::invalid_argument("summarize: no draws");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw std::invalid_argument("summarize: ci_level");
  const OutcomeScale& s = d.scale;
  Summary out;
  out.ci_level = ci_level;
  for (double g : d.grid) out.grid_y.push_back(s.to_raw(g));
  auto dens = [&](double v) { return s.density_to_raw(v); };
  auto same = [](double v) { return v; };
  auto pos = [&](double v) { return s.to_raw(v); };
  auto diff = [&](double v) { return v * s.width(); };
  out.f0 = summarize_columns(d.f0, ci_level, dens);
  out.f1 = summarize_columns(d.f1, ci_level, dens);
  out.F0 = summarize_columns(d.F0, ci_level, same);
  out.F1 = summarize_columns(d.F1, ci_level, same);
  out.taus = d.taus;
  out.q0 = summarize_columns(d.q0, ci_level, pos);
  out.q1 = summarize_columns(d.q1, ci_level, pos);
  out.qte = summarize_columns(d.delta, ci_level, diff);
  return out;
}

struct EstimateConfig {
  int K = 10;  // spline basis size
  std::vector<int> hidden{8};
  SamplerConfig sampler;
  GsmHyperParams hyper;
  ScoreType score = ScoreType::Double;
  int grid_size = 200;
  std::vector<double> taus = standard_taus();
  double ci_level = 0.95;
  double margin_fraction = 0.0;  // margin = fraction * (y_max - y_min); 0 is bare min-max
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const {
    if (K < 2) throw std::invalid_argument("K must be at least 2");
    for (int v : hidden) {
      if (v < 1) throw std::invalid_argument("hidden widths must be positive");
    }
    sampler.validate();
    hyper.validate();
    if (grid_size < 2) throw std::invalid_argument("grid_size must be at least 2");
    if (taus.empty()) throw std::invalid_argument("need at least one tau");
    for (double t : taus) {
      if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("tau outside (0, 1)");
    }
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw std::invalid_argument("ci_level outside (0, 1)");
    if (!(margin_fraction >= 0.0)) throw std::invalid_argument("margin_fraction must be >= 0");
    if (threads < 1) throw std::invalid_argument("threads must be positive");
  }
};

/// Data prepared once per dataset: unit-scale outcomes and scaled covariates.
struct PreparedData {
  NormalizedOutcome outcome;
  Eigen::MatrixXd x_scaled;  // d x n
  std::vector<int> t;

  static PreparedData from(const Dataset& data, double margin_fraction) {
    validate_dataset(data);
    PreparedData p;
    const double range = data.y.maxCoeff() - data.y.minCoeff();
    p.outcome = normalize_outcome(data.y, margin_fraction * range);
    p.x_scaled = CovariateScale::fit(data.x).apply(data.x);
    p.t = data.t;
    return p;
  }

  static void validate_dataset(const Dataset& data) {
    const auto n = data.size();
    if (static_cast<std::size_t>(data.y.size()) != n || static_cast<std::size_t>(data.x.rows()) != n) {
      throw std::invalid_argument("dataset: column lengths differ");
    }
    int treated = 0;
    for (int ti : data.t) {
      if (ti != 0 && ti != 1) throw std::invalid_argument("dataset: treatment must be 0 or 1");
      treated += ti;
    }
    if (treated == 0 || treated == static_cast<int>(n)) {
      throw std::invalid_argument("dataset: both treatment arms must be populated");
    }
    if (!data.y.allFinite() || !data.x.allFinite()) {
      throw std::invalid_argument("dataset: non-finite values");
    }
  }

  Eigen::MatrixXd scores(const Eigen::VectorXd& pi, ScoreType type) const {
    return network_scores(x_scaled, pi, type);
  }
};

inline SplineMixtureModel make_outcome_model(const EstimateConfig& c, int score_dim) {
  return SplineMixtureModel({score_dim + 1, c.hidden, c.K}, SplineBasis(c.K));
}

inline int score_dim(ScoreType type, int d) {
  switch (type) {
    case ScoreType::PsOnly: return 1;
    case ScoreType::XOnly: return d;
    default: return d + 1;
  }
}

/// Number of propensity draws the estimator loops over for this score type.
inline int effective_num_pi(ScoreType type, const PropensityDraws& prop) {
  return type == ScoreType::XOnly ? 1 : prop.num_draws();
}

/**
 * The estimator: for each propensity draw j fit the conditional model, then
 * for each retained weight draw l take one Bayesian bootstrap draw,
 * marginalize both arms and invert the quantiles. `prefit`, when given,
 * supplies the chain for each j instead of running it.
 */
inline CounterfactualDraws estimate(const Dataset& data, const PropensityDraws& prop,
                                    const EstimateConfig& config,
                                    const std::vector<PosteriorDraws>* prefit = nullptr) {
  config.validate();
  const PreparedData prep = PreparedData::from(data, config.margin_fraction);
  if (config.score != ScoreType::XOnly) {
    prop.validate();
    if (prop.size() != data.size()) {
      throw std::invalid_argument("estimate: propensity rows do not match the dataset");
    }
  }
  const int n = static_cast<int>(data.size());
  const int n_pi = effective_num_pi(config.score, prop);
  const SplineMixtureModel model = make_outcome_model(config, score_dim(config.score, data.dim()));
  const std::vector<int>& t = prep.t;
  const std::span<const double> y(prep.outcome.y.data(), prep.outcome.y.size());

  std::vector<Eigen::MatrixXd> scores(n_pi);
  for (int j = 0; j < n_pi; ++j) {
    const Eigen::VectorXd pi =
        config.score == ScoreType::XOnly ? Eigen::VectorXd::Zero(n) : prop.draw(j);
    scores[j] = prep.scores(pi, config.score);
  }

  std::vector<PosteriorDraws> chains(n_pi);
  if (prefit) {
    if (static_cast<int>(prefit->size()) != n_pi) {
      throw std::invalid_argument("estimate: prefit chain count differs from N_pi");
    }
    chains = *prefit;
  } else {
    parallel_for(n_pi, config.threads, [&](int j) {
      const MixtureData md = make_mixture_data(model.basis(), y, t, scores[j]);
      const MixturePosterior target(model, md);
      Rng rng = make_stream(config.seed, {2, static_cast<std::uint64_t>(j)});
      try {
        chains[j] = run_chain(target, config.hyper, config.sampler, rng);
      } catch (const std::exception& e) {
        throw std::runtime_error("estimate: chain for propensity draw " + std::to_string(j) +
                                 " failed: " + e.what());
      }
    });
  }

  CounterfactualDraws out;
  out.grid = unit_grid(config.grid_size);
  out.taus = config.taus;
  out.scale = prep.outcome.scale;
  out.n_pi = n_pi;
  out.n_w = static_cast<int>(chains.front().size());
  for (const auto& c : chains) {
    if (static_cast<int>(c.size()) != out.n_w) throw std::runtime_error("estimate: ragged chains");
    out.step_size.push_back(c.step_size);
    out.divergence_rate.push_back(c.divergence_rate());
  }
  const int total = n_pi * out.n_w;
  const auto G = static_cast<Eigen::Index>(out.grid.size());
  const auto Q = static_cast<Eigen::Index>(out.taus.size());
  out.f0.resize(total, G);
  out.F0.resize(total, G);
  out.f1.resize(total, G);
  out.F1.resize(total, G);
  out.q0.resize(total, Q);
  out.q1.resize(total, Q);
  out.delta.resize(total, Q);
  out.loglik.resize(total, n);
  out.index.resize(total);

  std::vector<int> flags(n_pi, 0);
  parallel_for(n_pi, config.threads, [&](int j) {
    const MixtureData md = make_mixture_data(model.basis(), y, t, scores[j]);
    for (int l = 0; l < out.n_w; ++l) {
      const int r = j * out.n_w + l;
      out.index[r] = {j, l};
      const double* w = chains[j].weights[l].data();
      Rng rng = make_stream(config.seed, {3, static_cast<std::uint64_t>(j),
                                          static_cast<std::uint64_t>(l)});
      const Eigen::VectorXd u = bayesian_bootstrap(n, rng);
      out.loglik.row(r) = model.pointwise_log_likelihood(w, md).transpose();
      for (int arm = 0; arm < 2; ++arm) {
        const Marginal m = marginalize(model, w, scores[j], u, out.grid, arm);
        (arm == 0 ? out.f0 : out.f1).row(r) = m.f.transpose();
        (arm == 0 ? out.F0 : out.F1).row(r) = m.F.transpose();
        const std::span<const double> th(m.theta_bar.data(), m.theta_bar.size());
        auto cdf = [&](double v) { return mixture_pdf_cdf(model.basis(), th, v).cdf; };
        for (Eigen::Index q = 0; q < Q; ++q) {
          const auto res = invert_quantile(out.grid, {m.F.data(), static_cast<std::size_t>(G)},
                                           out.taus[q], cdf);
          (arm == 0 ? out.q0 : out.q1)(r, q) = res.value;
          flags[j] += res.flagged ? 1 : 0;
        }
      }
      out.delta.row(r) = out.q1.row(r) - out.q0.row(r);
    }
  });
  for (int f : flags) out.quantile_flags += f;
  out.chains = std::move(chains);
  return out;
}

/// One (K, V_1) choice for the outcome network.
struct Candidate {
  int K = 10;
  int V1 = 8;
};

inline std::vector<Candidate> default_candidates() {
  std::vector<Candidate> c;
  for (int K : {8, 10, 12}) {
    for (int V : {5, 8, 10}) c.push_back({K, V});
  }
  return c;
}

struct SelectionResult {
  std::vector<Candidate> candidates;
  std::vector<double> waic;
  std::vector<int> num_weights;
  int best = 0;
  std::vector<PosteriorDraws> fits;  // one chain per candidate
};

/**
 * Fits every candidate once, with the posterior-mean propensity score, and
 * picks the lowest WAIC; ties go to the smaller network.
 */
inline SelectionResult select_model(const Dataset& data, const PropensityDraws& prop,
                                    const EstimateConfig& base,
                                    const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("select_model: no candidates");
  base.validate();
  const PreparedData prep = PreparedData::from(data, base.margin_fraction);
  const int n = static_cast<int>(data.size());
  const Eigen::VectorXd pi =
      base.score == ScoreType::XOnly ? Eigen::VectorXd::Zero(n) : prop.posterior_mean();
  const Eigen::MatrixXd scores = prep.scores(pi, base.score);
  const std::span<const double> y(prep.outcome.y.data(), prep.outcome.y.size());

  SelectionResult out;
  out.candidates = candidates;
  out.waic.resize(candidates.size());
  out.num_weights.resize(candidates.size());
  out.fits.resize(candidates.size());
  parallel_for(static_cast<int>(candidates.size()), base.threads, [&](int c) {
    EstimateConfig cfg = base;
    cfg.K = candidates[c].K;
    cfg.hidden = {candidates[c].V1};
    const SplineMixtureModel model = make_outcome_model(cfg, static_cast<int>(scores.rows()));
    const MixtureData md = make_mixture_data(model.basis(), y, prep.t, scores);
    const MixturePosterior target(model, md);
    Rng rng = make_stream(base.seed, {1, static_cast<std::uint64_t>(c)});
    out.fits[c] = run_chain(target, cfg.hyper, cfg.sampler, rng);
    Eigen::MatrixXd ll(out.fits[c].size(), n);
    for (std::size_t s = 0; s < out.fits[c].size(); ++s) {
      ll.row(s) = model.pointwise_log_likelihood(out.fits[c].weights[s].data(), md).transpose();
    }
    out.waic[c] = waic(ll);
    out.num_weights[c] = model.arch().num_weights();
  });
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    const bool better = out.waic[c] < out.waic[out.best] ||
                        (out.waic[c] == out.waic[out.best] &&
                         out.num_weights[c] < out.num_weights[out.best]);
    if (better) out.best = static_cast<int>(c);
  }
  return out;
}

enum class PropensitySource {
  Estimate,  // fit the default backend
  Known,     // the dataset's true propensity column
  Provided,  // PipelineConfig::provided
};

struct PipelineConfig {
  EstimateConfig estimate;
  PropensityConfig propensity;
  PropensitySource source = PropensitySource::Estimate;
  std::vector<Candidate> candidates = default_candidates();  // one entry skips selection
  PropensityDraws provided;
};

struct PipelineResult {
  PropensityDraws propensity;
  std::optional<SelectionResult> selection;
  Candidate chosen;
  CounterfactualDraws draws;
  Summary summary;
};

/// Propensity, model selection, estimation and summary for one dataset.
inline PipelineResult run_pipeline(const Dataset& data, const PipelineConfig& config) {
  config.estimate.validate();
  PipelineResult out;
  if (config.estimate.score == ScoreType::XOnly) {
    out.propensity = known_propensity(Eigen::VectorXd::Constant(data.size(), 0.5));
  } else if (config.source == PropensitySource::Known) {
    if (!data.has_truth()) throw std::invalid_argument("known propensity requested but dataset has no pi");
    out.propensity = known_propensity(data.pi);
  } else if (config.source == PropensitySource::Provided) {
    config.provided.validate();
    if (config.provided.size() != data.size()) {
      throw std::invalid_argument("provided propensity has " + std::to_string(config.provided.size()) +
                                  " rows, dataset has " + std::to_string(data.size()));
    }
    out.propensity = config.provided;
  } else {
    Rng rng = make_stream(config.estimate.seed, {0});
    out.propensity = fit_propensity(data.x, data.t, config.propensity, rng);
  }

  EstimateConfig est = config.estimate;
  std::vector<PosteriorDraws> prefit;
  if (config.candidates.size() > 1) {
    out.selection = select_model(data, out.propensity, est, config.candidates);
    out.chosen = config.candidates[out.selection->best];
    // with a single propensity draw the selection fit is the estimator's chain
    if (effective_num_pi(est.score, out.propensity) == 1) {
      prefit.push_back(std::move(out.selection->fits[out.selection->best]));
    }
    out.selection->fits.clear();
  } else if (config.candidates.size() == 1) {
    out.chosen = config.candidates.front();
  } else {
    out.chosen = {est.K, est.hidden.empty() ? 0 : est.hidden.front()};
  }
  est.K = out.chosen.K;
  est.hidden = {out.chosen.V1};
  out.draws = estimate(data, out.propensity, est, prefit.empty() ? nullptr : &prefit);
  out.summary = summarize(out.draws, est.ci_level);
  return out;
}

inline void write_qte_csv(std::ostream& os, const Summary& s) {
  os << "tau,qte_mean,ci_lo,ci_hi\n" << std::setprecision(12);
  for (std::size_t i = 0; i < s.taus.size(); ++i) {
    os << s.taus[i] << ',' << s.qte.mean[i] << ',' << s.qte.lo[i] << ',' << s.qte.hi[i] << '\n';
  }
}

inline void write_density_csv(std::ostream& os, const Summary& s) {
  os << "grid_y,f0,f0_lo,f0_hi,f1,f1_lo,f1_hi\n" << std::setprecision(12);
  for (std::size_t g = 0; g < s.grid_y.size(); ++g) {
    os << s.grid_y[g] << ',' << s.f0.mean[g] << ',' << s.f0.lo[g] << ',' << s.f0.hi[g] << ','
       << s.f1.mean[g] << ',' << s.f1.lo[g] << ',' << s.f1.hi[g] << '\n';
  }
}

inline void write_cdf_csv(std::ostream& os, const Summary& s) {
  os << "grid_y,F0,F0_lo,F0_hi,F1,F1_lo,F1_hi\n" << std::setprecision(12);
  for (std::size_t g = 0; g < s.grid_y.size(); ++g) {
    os << s.grid_y[g] << ',' << s.F0.mean[g] << ',' << s.F0.lo[g] << ',' << s.F0.hi[g] << ','
       << s.F1.mean[g] << ',' << s.F1.lo[g] << ',' << s.F1.hi[g] << '\n';
  }
}

}  // namespace qte
