#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "qte/rng.hpp"

// No-U-Turn sampler with slice-based tree sampling and dual-averaging step
// size adaptation:
//
// Hoffman, M.D. and Gelman, A. 2014. The No-U-Turn sampler: adaptively
// setting path lengths in Hamiltonian Monte Carlo. JMLR 15(1), 1593-1623.

namespace qte {

inline constexpr double kMinStepSize = 1e-8;
inline constexpr double kMaxStepSize = 1e3;
// Energy error beyond which a trajectory is declared divergent.
inline constexpr double kDivergenceThreshold = 1000.0;

/// Target log density evaluated together with its gradient.
template <typename F>
concept LogDensityWithGradient =
    requires(F f, const Eigen::VectorXd& q, Eigen::VectorXd& g) {
      { f(q, g) } -> std::convertible_to<double>;
    };

struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double logp = 0.0;

  /// log density minus kinetic energy under a diagonal inverse metric.
  double joint(const Eigen::VectorXd& inv_metric) const {
    return logp - 0.5 * p.cwiseAbs2().dot(inv_metric);
  }
};

struct NutsTransition {
  Eigen::VectorXd position;
  Eigen::VectorXd gradient;
  double logp = 0.0;
  double accept_stat = 0.0;
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  // H(selected) - H(start); zero mean under the invariant joint distribution.
  double energy_error = 0.0;
};

namespace detail {

template <LogDensityWithGradient F>
double safe_eval(F& f, const Eigen::VectorXd& q, Eigen::VectorXd& grad) {
  double lp;
  try {
    lp = f(q, grad);
  } catch (const std::domain_error&) {
    return -std::numeric_limits<double>::infinity();
  }
  if (std::isnan(lp) || !grad.allFinite()) return -std::numeric_limits<double>::infinity();
  return lp;
}

template <LogDensityWithGradient F>
void leapfrog(PhasePoint& z, double eps, const Eigen::VectorXd& inv_metric, F& f) {
  z.p.noalias() += 0.5 * eps * z.grad;
  z.q.noalias() += eps * inv_metric.cwiseProduct(z.p);
  z.logp = safe_eval(f, z.q, z.grad);
  if (std::isfinite(z.logp)) z.p.noalias() += 0.5 * eps * z.grad;
}

struct Subtree {
  PhasePoint minus;
  PhasePoint plus;
  PhasePoint proposal;
  int n_valid = 0;      // states inside the slice
  bool keep_going = true;
  double alpha_sum = 0.0;
  int n_alpha = 0;
  bool divergent = false;
};

inline bool no_u_turn(const PhasePoint& minus, const PhasePoint& plus,
                      const Eigen::VectorXd& inv_metric) {
  const Eigen::VectorXd span = (plus.q - minus.q).cwiseProduct(inv_metric);
  return span.dot(minus.p) >= 0.0 && span.dot(plus.p) >= 0.0;
}

template <LogDensityWithGradient F>
Subtree build_tree(const PhasePoint& start, double log_slice, int direction, int depth,
                   double eps, const Eigen::VectorXd& m, double joint0, F& f, Rng& rng) {
  if (depth == 0) {
    PhasePoint z = start;
    leapfrog(z, direction * eps, m, f);
    const double joint = std::isfinite(z.logp) ? z.joint(m)
                                               : -std::numeric_limits<double>::infinity();
    Subtree t;
    t.n_valid = log_slice <= joint ? 1 : 0;
    t.keep_going = log_slice < joint + kDivergenceThreshold;
    t.divergent = !t.keep_going;
    t.alpha_sum = std::isfinite(joint) ? std::min(1.0, std::exp(joint - joint0)) : 0.0;
    t.n_alpha = 1;
    t.minus = z;
    t.plus = z;
    t.proposal = std::move(z);
    return t;
  }
  Subtree t = build_tree(start, log_slice, direction, depth - 1, eps, m, joint0, f, rng);
  if (!t.keep_going) return t;
  const PhasePoint& edge = direction < 0 ? t.minus : t.plus;
  Subtree u = build_tree(edge, log_slice, direction, depth - 1, eps, m, joint0, f, rng);
  if (direction < 0) {
    t.minus = std::move(u.minus);
  } else {
    t.plus = std::move(u.plus);
  }
  const int total = t.n_valid + u.n_valid;
  if (total > 0 && uniform01(rng) * total < u.n_valid) t.proposal = std::move(u.proposal);
  t.n_valid = total;
  t.alpha_sum += u.alpha_sum;
  t.n_alpha += u.n_alpha;
  t.divergent = t.divergent || u.divergent;
  t.keep_going = u.keep_going && no_u_turn(t.minus, t.plus, m);
  return t;
}

}  // namespace detail

/**
 * One NUTS transition from `position` (with cached log density and gradient),
 * using momentum covariance diag(1 / inv_metric). A divergent trajectory is
 * flagged and its selected state kept.
 */
template <LogDensityWithGradient F>
NutsTransition nuts_draw(const Eigen::VectorXd& position, double logp,
                         const Eigen::VectorXd& gradient, F&& log_density, double step_size,
                         int max_tree_depth, const Eigen::VectorXd& inv_metric, Rng& rng) {
  if (!std::isfinite(logp)) {
    throw std::domain_error("nuts_draw: log density at the current state is not finite");
  }
  if (inv_metric.size() != position.size() || !(inv_metric.array() > 0.0).all()) {
    throw std::invalid_argument("nuts_draw: inverse metric must be positive, one per coordinate");
  }
  const Eigen::VectorXd& m = inv_metric;
  PhasePoint z0;
  z0.q = position;
  z0.grad = gradient;
  z0.logp = logp;
  z0.p.resize(position.size());
  for (Eigen::Index i = 0; i < z0.p.size(); ++i) z0.p[i] = std_normal(rng) / std::sqrt(m[i]);
  const double joint0 = z0.joint(m);
  const double log_slice = joint0 + std::log1p(-uniform01(rng));

  PhasePoint minus = z0, plus = z0, selected = z0;
  int n_valid = 1;
  bool keep_going = true;
  NutsTransition out;
  double alpha_sum = 0.0;
  int n_alpha = 0;
  int depth = 0;
  while (keep_going && depth < max_tree_depth) {
    const int direction = uniform01(rng) < 0.5 ? -1 : 1;
    detail::Subtree sub =
        direction < 0
            ? detail::build_tree(minus, log_slice, -1, depth, step_size, m, joint0, log_density,
                                 rng)
            : detail::build_tree(plus, log_slice, 1, depth, step_size, m, joint0, log_density,
                                 rng);
    if (direction < 0) {
      minus = std::move(sub.minus);
    } else {
      plus = std::move(sub.plus);
    }
    if (sub.keep_going && sub.n_valid > 0 &&
        uniform01(rng) * n_valid < static_cast<double>(sub.n_valid)) {
      selected = std::move(sub.proposal);
    }
    n_valid += sub.n_valid;
    alpha_sum += sub.alpha_sum;
    n_alpha += sub.n_alpha;
    out.divergent = out.divergent || sub.divergent;
    keep_going = sub.keep_going && detail::no_u_turn(minus, plus, m);
    ++depth;
  }
  out.position = std::move(selected.q);
  out.gradient = std::move(selected.grad);
  out.logp = selected.logp;
  out.accept_stat = n_alpha > 0 ? alpha_sum / n_alpha : 0.0;
  out.tree_depth = depth;
  out.n_leapfrog = n_alpha;
  out.energy_error = joint0 - selected.joint(m);
  return out;
}

/// Unit metric.
template <LogDensityWithGradient F>
NutsTransition nuts_draw(const Eigen::VectorXd& position, double logp,
                         const Eigen::VectorXd& gradient, F&& log_density, double step_size,
                         int max_tree_depth, Rng& rng) {
  return nuts_draw(position, logp, gradient, log_density, step_size, max_tree_depth,
                   Eigen::VectorXd::Ones(position.size()), rng);
}

/**
 * Dual-averaging step size adaptation. Acceptance statistics above the target
 * push the step size up, below push it down; the iterate average is used once
 * warmup ends.
 */
class DualAverage {
 public:
  DualAverage(double initial_step, double target_accept, double shrink_log_step,
              double t0 = 10.0, double gamma = 0.05, double kappa = 0.75)
      : log_step_(std::log(initial_step)),
        log_step_avg_(0.0),
        h_bar_(0.0),
        mu_(shrink_log_step),
        target_(target_accept),
        t0_(t0),
        gamma_(gamma),
        kappa_(kappa) {
    if (!(initial_step > 0.0) || !std::isfinite(initial_step)) {
      throw std::invalid_argument("DualAverage: initial step size must be positive and finite");
    }
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw std::invalid_argument("DualAverage: target acceptance must lie in (0, 1)");
    }
  }

  /// Shrinks toward log(10 * initial_step).
  DualAverage(double initial_step, double target_accept)
      : DualAverage(initial_step, target_accept, std::log(10.0 * initial_step)) {}

  /// Feed one acceptance statistic; returns the step size for the next iteration.
  double update(double accept_stat) {
    ++m_;
    const double m = static_cast<double>(m_);
    const double w = 1.0 / (m + t0_);
    h_bar_ = (1.0 - w) * h_bar_ + w * (target_ - accept_stat);
    log_step_ = mu_ - std::sqrt(m) / gamma_ * h_bar_;
    log_step_ = std::clamp(log_step_, std::log(kMinStepSize), std::log(kMaxStepSize));
    const double eta = std::pow(m, -kappa_);
    log_step_avg_ = eta * log_step_ + (1.0 - eta) * log_step_avg_;
    return step_size();
  }

  double step_size() const { return std::exp(log_step_); }
  /// Averaged step size, frozen after warmup.
  double final_step_size() const {
    return m_ == 0 ? step_size() : std::exp(log_step_avg_);
  }
  int iterations() const noexcept { return m_; }

 private:
  double log_step_;
  double log_step_avg_;
  double h_bar_;
  double mu_;
  double target_;
  double t0_;
  double gamma_;
  double kappa_;
  int m_ = 0;
};

/// Replay a warmup acceptance history through dual averaging and return the
/// adapted (averaged) step size.
inline double adapt_step_size(std::span<const double> history, double target_accept,
                              double initial_step) {
  DualAverage da(initial_step, target_accept);
  for (double a : history) da.update(a);
  return da.final_step_size();
}

/**
 * Heuristic initial step size: double or halve until the one-step acceptance
 * ratio crosses 1/2.
 */
template <LogDensityWithGradient F>
double find_initial_step_size(const Eigen::VectorXd& position, double logp,
                              const Eigen::VectorXd& gradient, F&& log_density,
                              const Eigen::VectorXd& inv_metric, Rng& rng,
                              double eps = 1.0) {
  PhasePoint z0;
  z0.q = position;
  z0.grad = gradient;
  z0.logp = logp;
  z0.p.resize(position.size());
  for (Eigen::Index i = 0; i < z0.p.size(); ++i) {
    z0.p[i] = std_normal(rng) / std::sqrt(inv_metric[i]);
  }
  const double joint0 = z0.joint(inv_metric);
  auto log_ratio = [&](double e) {
    PhasePoint z = z0;
    detail::leapfrog(z, e, inv_metric, log_density);
    if (!std::isfinite(z.logp)) return -std::numeric_limits<double>::infinity();
    return z.joint(inv_metric) - joint0;
  };
  double lr = log_ratio(eps);
  const double dir = lr > std::log(0.5) ? 1.0 : -1.0;
  for (int iter = 0; iter < 100; ++iter) {
    if (dir * lr <= -dir * std::log(2.0)) break;
    eps *= std::pow(2.0, dir);
    if (eps < kMinStepSize || eps > kMaxStepSize) break;
    lr = log_ratio(eps);
  }
  return std::clamp(eps, kMinStepSize, kMaxStepSize);
}

template <LogDensityWithGradient F>
double find_initial_step_size(const Eigen::VectorXd& position, double logp,
                              const Eigen::VectorXd& gradient, F&& log_density, Rng& rng) {
  return find_initial_step_size(position, logp, gradient, log_density,
                                Eigen::VectorXd::Ones(position.size()), rng);
}

/// How the diagonal inverse metric is estimated from warmup windows.
enum class MetricKind {
  Unit,            // identity, never adapted
  Variance,        // sample variance of the positions
  GradientScaled,  // sqrt(var(q) / var(grad log p)), robust to state-dependent stiffness
};

/**
 * Warmup controller: dual averaging of the step size throughout, plus (when
 * enabled) a diagonal inverse metric estimated from the states visited in a
 * sequence of doubling windows. Fast buffers of 75 and 50 iterations bracket
 * the windows; each window restarts the step size search. Short warmups shrink
 * the buffers to 15% and 10%.
 */
class WarmupAdapter {
 public:
  WarmupAdapter(int n_warmup, int dim, double target_accept, MetricKind kind)
      : n_warmup_(n_warmup),
        target_(target_accept),
        kind_(kind),
        inv_metric_(Eigen::VectorXd::Ones(dim)),
        adapt_(1.0, target_accept) {
    if (kind != MetricKind::Unit && n_warmup >= 20) {
      int init = 75, term = 50, base = 25;
      if (init + term + base > n_warmup) {
        init = static_cast<int>(0.15 * n_warmup);
        term = static_cast<int>(0.1 * n_warmup);
        base = n_warmup - init - term;
      }
      window_start_ = init;
      window_size_ = base;
      window_end_ = init + base;
      slow_end_ = n_warmup - term;
      if (window_end_ + 2 * window_size_ > slow_end_) window_end_ = slow_end_;
      reset_moments(dim);
    }
  }

  template <LogDensityWithGradient F>
  void start(const Eigen::VectorXd& q, double logp, const Eigen::VectorXd& grad, F& f,
             Rng& rng) {
    step_ = find_initial_step_size(q, logp, grad, f, inv_metric_, rng);
    adapt_ = DualAverage(step_, target_);
  }

  /// Call after warmup transition `it` (0-based) landed at `q`.
  template <LogDensityWithGradient F>
  void update(int it, double accept_stat, const Eigen::VectorXd& q, double logp,
              const Eigen::VectorXd& grad, F& f, Rng& rng) {
    step_ = adapt_.update(accept_stat);
    if (window_size_ > 0 && it >= window_start_ && it < slow_end_) {
      ++count_;
      const Eigen::VectorXd delta = q - mean_;
      mean_ += delta / count_;
      m2_ += delta.cwiseProduct(q - mean_);
      const Eigen::VectorXd gdelta = grad - grad_mean_;
      grad_mean_ += gdelta / count_;
      grad_m2_ += gdelta.cwiseProduct(grad - grad_mean_);
      if (it + 1 == window_end_) {
        const double c = count_;
        Eigen::VectorXd scale = m2_ / (c - 1.0);
        if (kind_ == MetricKind::GradientScaled) {
          const Eigen::VectorXd gvar = grad_m2_ / (c - 1.0);
          for (Eigen::Index i = 0; i < scale.size(); ++i) {
            scale[i] = gvar[i] > 0.0 ? std::sqrt(scale[i] / gvar[i]) : scale[i];
          }
        }
        inv_metric_ = (c / (c + 5.0)) * scale;
        inv_metric_.array() += 1e-3 * 5.0 / (c + 5.0);
        reset_moments(q.size());
        window_size_ *= 2;
        window_end_ = it + 1 + window_size_;
        if (window_end_ + 2 * window_size_ > slow_end_) window_end_ = slow_end_;
        start(q, logp, grad, f, rng);
      }
    }
    if (it + 1 == n_warmup_) step_ = adapt_.final_step_size();
  }

  double step_size() const noexcept { return step_; }
  const Eigen::VectorXd& inv_metric() const noexcept { return inv_metric_; }

 private:
  void reset_moments(Eigen::Index dim) {
    count_ = 0;
    mean_ = Eigen::VectorXd::Zero(dim);
    m2_ = Eigen::VectorXd::Zero(dim);
    grad_mean_ = Eigen::VectorXd::Zero(dim);
    grad_m2_ = Eigen::VectorXd::Zero(dim);
  }

  int n_warmup_;
  double target_;
  MetricKind kind_;
  Eigen::VectorXd inv_metric_;
  DualAverage adapt_;
  double step_ = 1.0;
  int window_start_ = 0, window_size_ = 0, window_end_ = 0, slow_end_ = 0;
  int count_ = 0;
  Eigen::VectorXd mean_, m2_, grad_mean_, grad_m2_;
};

struct NutsRun {
  std::vector<Eigen::VectorXd> draws;
  std::vector<NutsTransition> transitions;  // post-warmup only
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
};

/// Adaptive warmup, then `n_draws` transitions with step size and metric frozen.
template <LogDensityWithGradient F>
NutsRun run_nuts(F&& log_density, Eigen::VectorXd init, int n_warmup, int n_draws,
                 double target_accept, int max_tree_depth, Rng& rng,
                 MetricKind metric = MetricKind::Variance) {
  Eigen::VectorXd grad(init.size());
  double logp = detail::safe_eval(log_density, init, grad);
  if (!std::isfinite(logp)) throw std::domain_error("run_nuts: initial log density not finite");
  WarmupAdapter warmup(n_warmup, static_cast<int>(init.size()), target_accept, metric);
  warmup.start(init, logp, grad, log_density, rng);
  NutsRun out;
  Eigen::VectorXd q = std::move(init);
  for (int it = 0; it < n_warmup + n_draws; ++it) {
    NutsTransition tr = nuts_draw(q, logp, grad, log_density, warmup.step_size(),
                                  max_tree_depth, warmup.inv_metric(), rng);
    q = tr.position;
    grad = tr.gradient;
    logp = tr.logp;
    if (it < n_warmup) {
      warmup.update(it, tr.accept_stat, q, logp, grad, log_density, rng);
      continue;
    }
    out.draws.push_back(q);
    out.transitions.push_back(std::move(tr));
  }
  out.step_size = warmup.step_size();
  out.inv_metric = warmup.inv_metric();
  return out;
}

}  // namespace qte
