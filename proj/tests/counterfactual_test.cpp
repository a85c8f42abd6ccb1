#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "qte/counterfactual.hpp"

namespace qte {
namespace {

Eigen::VectorXd random_flat(const NetworkArchitecture& arch, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::VectorXd w(arch.num_weights());
  for (auto& v : w) v = normal(gen);
  return w;
}

Eigen::MatrixXd random_scores(int dim, int n, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> unif;
  Eigen::MatrixXd s(dim, n);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = unif(gen);
  return s;
}

SamplerConfig short_sampler(int n_iter, int n_burnin, int thin) {
  SamplerConfig c;
  c.n_iter = n_iter;
  c.n_burnin = n_burnin;
  c.thin = thin;
  return c;
}

TEST(NormalizeOutcome, MinMaxIdentity) {
  const auto r = normalize_outcome(Eigen::Vector3d(2, 4, 6), 0.0);
  EXPECT_DOUBLE_EQ(r.y[0], 0.0);
  EXPECT_DOUBLE_EQ(r.y[1], 0.5);
  EXPECT_DOUBLE_EQ(r.y[2], 1.0);
}

TEST(NormalizeOutcome, MarginShrinksIntoInterior) {
  const auto r = normalize_outcome(Eigen::Vector3d(2, 4, 6), 1.0);
  EXPECT_DOUBLE_EQ(r.y[0], 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.y[2], 5.0 / 6.0);
  EXPECT_DOUBLE_EQ(r.scale.width(), 6.0);
}

TEST(NormalizeOutcome, RoundTrip) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> normal(3.0, 10.0);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd y(20);
    for (auto& v : y) v = normal(gen);
    const auto r = normalize_outcome(y, 0.05 * rep);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      EXPECT_NEAR(r.scale.to_raw(r.y[i]), y[i], 1e-12);
      EXPECT_GE(r.y[i], 0.0);
      EXPECT_LE(r.y[i], 1.0);
    }
  }
}

TEST(NormalizeOutcome, BackTransformedDensityKeepsUnitMass) {
  const SplineBasis basis(6);
  const std::vector<double> theta{0.1, 0.3, 0.05, 0.25, 0.2, 0.1};
  const auto r = normalize_outcome(Eigen::Vector4d(-1.5, 0.2, 2.0, 7.25), 0.4);
  const auto& s = r.scale;
  auto raw_pdf = [&](double x) {
    return s.density_to_raw(mixture_pdf_cdf(basis, theta, std::clamp(s.to_unit(x), 0.0, 1.0)).pdf);
  };
  // split at the knots so each piece is a polynomial
  double mass = 0.0;
  for (int k = 0; k < 5; ++k) {
    mass += boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
        raw_pdf, s.to_raw(k / 5.0), s.to_raw((k + 1) / 5.0));
  }
  EXPECT_NEAR(mass, 1.0, 1e-6);
}

TEST(NormalizeOutcome, Errors) {
  EXPECT_THROW(normalize_outcome(Eigen::Vector3d(1, 1, 1), 0.0), std::invalid_argument);
  EXPECT_THROW(normalize_outcome(Eigen::VectorXd::Constant(1, 2.0), 0.0), std::invalid_argument);
  EXPECT_THROW(normalize_outcome(Eigen::Vector2d(0, 1), -0.1), std::invalid_argument);
}

TEST(DoubleScore, Concatenation) {
  Eigen::MatrixXd x(1, 2);
  x << 0.1, 0.2;
  const auto s = build_double_score(x, known_propensity(Eigen::VectorXd::Constant(1, 0.5)), 0);
  ASSERT_EQ(s.cols(), 3);
  EXPECT_EQ(s(0, 0), 0.5);
  EXPECT_EQ(s(0, 1), 0.1);
  EXPECT_EQ(s(0, 2), 0.2);
}

TEST(DoubleScore, ConstantPropensityPassthroughAndShape) {
  std::mt19937_64 gen(2);
  for (int d = 0; d < 5; ++d) {
    const Eigen::MatrixXd x = random_scores(7, d, gen);
    const auto s = build_double_score(x, known_propensity(Eigen::VectorXd::Constant(7, 0.3)), 0);
    EXPECT_EQ(s.cols(), d + 1);
    EXPECT_TRUE((s.col(0).array() == 0.3).all());
    EXPECT_EQ(network_scores(x.transpose(), Eigen::VectorXd::Constant(7, 0.3), ScoreType::Double).rows(),
              d + 1);
  }
  EXPECT_THROW(build_double_score(Eigen::MatrixXd::Zero(3, 1),
                                  known_propensity(Eigen::VectorXd::Constant(2, 0.5)), 0),
               std::invalid_argument);
}

TEST(ScoreTypeNames, RoundTrip) {
  for (auto s : {ScoreType::Double, ScoreType::PsOnly, ScoreType::XOnly}) {
    EXPECT_EQ(parse_score_type(to_string(s)), s);
  }
  EXPECT_THROW(parse_score_type("bart"), std::invalid_argument);
}

TEST(BayesianBootstrap, SingletonIsOne) {
  Rng rng = make_stream(3);
  EXPECT_EQ(bayesian_bootstrap(1, rng)[0], 1.0);
}

TEST(BayesianBootstrap, DirichletMoments) {
  Rng rng = make_stream(4);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  const int reps = 100000;
  for (int r = 0; r < reps; ++r) {
    const Eigen::VectorXd u = bayesian_bootstrap(3, rng);
    ASSERT_NEAR(u.sum(), 1.0, 1e-12);
    ASSERT_GE(u.minCoeff(), 0.0);
    mean += u;
  }
  mean /= reps;
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(mean[i], 1.0 / 3.0, 0.005);
}

class MarginalizeTest : public ::testing::Test {
 protected:
  const SplineMixtureModel model{{3, {4}, 6}, SplineBasis(6)};
  std::mt19937_64 gen{5};
};

TEST_F(MarginalizeTest, SingletonEqualsConditional) {
  const Eigen::VectorXd w = random_flat(model.arch(), gen);
  const Eigen::MatrixXd s = random_scores(2, 1, gen);
  const auto grid = unit_grid(50);
  for (int t = 0; t < 2; ++t) {
    const Marginal m = marginalize(model, w.data(), s, Eigen::VectorXd::Ones(1), grid, t);
    Eigen::MatrixXd in(3, 1);
    in << t, s(0, 0), s(1, 0);
    const Eigen::VectorXd theta = model.theta_batch(w.data(), in).col(0);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto pc = mixture_pdf_cdf(model.basis(), {theta.data(), 6}, grid[g]);
      EXPECT_NEAR(m.f[g], pc.pdf, 1e-12);
      EXPECT_NEAR(m.F[g], pc.cdf, 1e-12);
    }
  }
}

TEST_F(MarginalizeTest, IdenticalSubjectsCollapse) {
  const Eigen::VectorXd w = random_flat(model.arch(), gen);
  Eigen::MatrixXd s = random_scores(2, 1, gen).replicate(1, 2);
  const auto grid = unit_grid(30);
  const Marginal both = marginalize(model, w.data(), s, Eigen::VectorXd::Constant(2, 0.5), grid, 1);
  const Marginal one = marginalize(model, w.data(), s.leftCols(1), Eigen::VectorXd::Ones(1), grid, 1);
  EXPECT_LT((both.F - one.F).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((both.f - one.f).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(MarginalizeTest, MatchesNaiveDoubleLoop) {
  Rng rng = make_stream(6);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::VectorXd w = random_flat(model.arch(), gen);
    const Eigen::MatrixXd s = random_scores(2, 5, gen);
    const Eigen::VectorXd u = bayesian_bootstrap(5, rng);
    const auto grid = unit_grid(50);
    const int t = rep % 2;
    const Marginal m = marginalize(model, w.data(), s, u, grid, t);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double f = 0.0, F = 0.0;
      for (int i = 0; i < 5; ++i) {
        Eigen::MatrixXd in(3, 1);
        in << t, s(0, i), s(1, i);
        const Eigen::VectorXd theta = model.theta_batch(w.data(), in).col(0);
        const auto pc = mixture_pdf_cdf(model.basis(), {theta.data(), 6}, grid[g]);
        f += u[i] * pc.pdf;
        F += u[i] * pc.cdf;
      }
      EXPECT_NEAR(m.f[g], f, 1e-12);
      EXPECT_NEAR(m.F[g], F, 1e-12);
    }
  }
}

TEST_F(MarginalizeTest, InvariantToWeightScale) {
  const Eigen::VectorXd w = random_flat(model.arch(), gen);
  const Eigen::MatrixXd s = random_scores(2, 8, gen);
  Rng rng = make_stream(7);
  const Eigen::VectorXd u = bayesian_bootstrap(8, rng);
  const Eigen::VectorXd scaled = 3.7 * u;
  const auto grid = unit_grid(40);
  const Marginal a = marginalize(model, w.data(), s, u, grid, 0);
  const Marginal b = marginalize(model, w.data(), s, scaled / scaled.sum(), grid, 0);
  EXPECT_LT((a.F - b.F).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.f - b.f).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(MarginalizeTest, CdfIsMonotoneWithinUnitRange) {
  Rng rng = make_stream(8);
  for (int rep = 0; rep < 100; ++rep) {
    const Eigen::VectorXd w = random_flat(model.arch(), gen, 2.0);
    const Eigen::MatrixXd s = random_scores(2, 10, gen);
    const Marginal m = marginalize(model, w.data(), s, bayesian_bootstrap(10, rng), unit_grid(200),
                                   rep % 2);
    EXPECT_GE(m.F[0], 0.0);
    EXPECT_LE(m.F[m.F.size() - 1], 1.0 + 1e-9);
    EXPECT_GE(m.f.minCoeff(), 0.0);
    for (Eigen::Index g = 1; g < m.F.size(); ++g) ASSERT_GE(m.F[g], m.F[g - 1]);
  }
}

TEST_F(MarginalizeTest, RejectsBadGrid) {
  const Eigen::VectorXd w = random_flat(model.arch(), gen);
  const Eigen::MatrixXd s = random_scores(2, 1, gen);
  const std::vector<double> backwards{0.5, 0.4}, outside{0.5, 1.5};
  EXPECT_THROW(marginalize(model, w.data(), s, Eigen::VectorXd::Ones(1), backwards, 0),
               std::invalid_argument);
  EXPECT_THROW(marginalize(model, w.data(), s, Eigen::VectorXd::Ones(1), outside, 0),
               std::invalid_argument);
}

TEST(InvertQuantile, UniformCdf) {
  const auto grid = unit_grid(200);
  const auto r = invert_quantile(grid, grid, 0.3, [](double y) { return y; });
  EXPECT_NEAR(r.value, 0.3, 1e-12);
  EXPECT_FALSE(r.flagged);
  EXPECT_NEAR(invert_quantile(grid, grid, 0.3).value, 0.3, 1e-12);
}

TEST(InvertQuantile, QuadraticCdf) {
  const SplineBasis basis(2);
  const std::vector<double> theta{1.0, 0.0};
  const auto grid = unit_grid(200);
  std::vector<double> F;
  for (double y : grid) {
    F.push_back(mixture_pdf_cdf(basis, theta, y).cdf);
    ASSERT_NEAR(F.back(), 2 * y - y * y, 1e-12);
  }
  auto cdf = [&](double y) { return mixture_pdf_cdf(basis, theta, y).cdf; };
  const auto r = invert_quantile(grid, F, 0.75, cdf);
  EXPECT_NEAR(r.value, 0.5, 1e-10);
  EXPECT_LT(std::abs(cdf(r.value) - 0.75), 1e-8);
}

TEST(InvertQuantile, MonotoneInTau) {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> unif;
  const auto grid = unit_grid(50);
  for (int rep = 0; rep < 10000; ++rep) {
    std::vector<double> F(grid.size());
    double acc = 0.0;
    for (auto& v : F) v = (acc += (unif(gen) < 0.2 ? 0.0 : unif(gen)));
    for (auto& v : F) v /= acc;
    auto cdf = [&](double y) {
      const double pos = y * (grid.size() - 1);
      const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), grid.size() - 2);
      return F[i] + (pos - i) * (F[i + 1] - F[i]);
    };
    double t1 = 0.01 + 0.98 * unif(gen), t2 = 0.01 + 0.98 * unif(gen);
    if (t1 > t2) std::swap(t1, t2);
    ASSERT_LE(invert_quantile(grid, F, t1, cdf).value, invert_quantile(grid, F, t2, cdf).value);
    ASSERT_LE(invert_quantile(grid, F, t1).value, invert_quantile(grid, F, t2).value);
  }
}

TEST(InvertQuantile, FlagsTauOutsideGridRange) {
  const std::vector<double> grid{0.0, 0.5, 1.0};
  const std::vector<double> F{0.2, 0.5, 0.9};
  const auto low = invert_quantile(grid, F, 0.1);
  EXPECT_TRUE(low.flagged);
  EXPECT_EQ(low.value, 0.0);
  const auto high = invert_quantile(grid, F, 0.95);
  EXPECT_TRUE(high.flagged);
  EXPECT_EQ(high.value, 1.0);
  EXPECT_FALSE(invert_quantile(grid, F, 0.5).flagged);
  EXPECT_THROW(invert_quantile(grid, F, 1.0), std::domain_error);
}

CounterfactualDraws synthetic_draws(int rows, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> unif;
  CounterfactualDraws d;
  d.grid = unit_grid(5);
  d.taus = {0.25, 0.5, 0.75};
  d.scale = {10.0, 20.0, 1.0};
  d.n_pi = 1;
  d.n_w = rows;
  for (int r = 0; r < rows; ++r) d.index.emplace_back(0, r);
  for (auto* m : {&d.f0, &d.f1}) *m = Eigen::MatrixXd::NullaryExpr(rows, 5, [&] { return unif(gen); });
  for (auto* m : {&d.F0, &d.F1}) *m = Eigen::MatrixXd::NullaryExpr(rows, 5, [&] { return unif(gen); });
  for (auto* m : {&d.q0, &d.q1}) *m = Eigen::MatrixXd::NullaryExpr(rows, 3, [&] { return unif(gen); });
  d.delta = d.q1 - d.q0;
  return d;
}

TEST(Summarize, IdenticalDrawsGiveZeroWidth) {
  std::mt19937_64 gen(10);
  CounterfactualDraws d = synthetic_draws(1, gen);
  for (auto* m : {&d.f0, &d.f1, &d.F0, &d.F1, &d.q0, &d.q1, &d.delta}) {
    *m = m->row(0).replicate(4, 1).eval();
  }
  d.index.assign(4, {0, 0});
  const Summary s = summarize(d, 0.95);
  for (std::size_t q = 0; q < 3; ++q) {
    EXPECT_NEAR(s.qte.hi[q] - s.qte.lo[q], 0.0, 1e-12);
    EXPECT_NEAR(s.qte.mean[q], d.delta(0, q) * 12.0, 1e-12);
    EXPECT_NEAR(s.q1.mean[q], 9.0 + 12.0 * d.q1(0, q), 1e-12);
  }
  for (std::size_t g = 0; g < 5; ++g) {
    EXPECT_NEAR(s.f0.mean[g], d.f0(0, g) / 12.0, 1e-12);
    EXPECT_NEAR(s.F1.mean[g], d.F1(0, g), 1e-12);
    EXPECT_NEAR(s.grid_y[g], 9.0 + 12.0 * d.grid[g], 1e-12);
  }
}

TEST(Summarize, MeanEffectIsDifferenceOfMeanQuantiles) {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Summary s = summarize(synthetic_draws(2 + rep, gen), 0.9);
    for (std::size_t q = 0; q < 3; ++q) {
      EXPECT_NEAR(s.qte.mean[q], s.q1.mean[q] - s.q0.mean[q], 1e-12);
      EXPECT_LE(s.qte.lo[q], s.qte.mean[q] + 1e-12);
      EXPECT_GE(s.qte.hi[q], s.qte.mean[q] - 1e-12);
    }
  }
}

TEST(SortedPercentile, MatchesLinearInterpolation) {
  const std::vector<double> s{1.0, 2.0, 3.0, 4.0, 5.0};
  EXPECT_DOUBLE_EQ(sorted_percentile(s, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(sorted_percentile(s, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(sorted_percentile(s, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(sorted_percentile(s, 0.1), 1.4);
}

Dataset small_sim4(int n, std::uint64_t seed) {
  Rng rng = make_stream(seed);
  return gen_sim4(n, rng);
}

TEST(Estimate, SingleDrawPassesThroughSummary) {
  const Dataset data = small_sim4(40, 12);
  EstimateConfig cfg;
  cfg.K = 4;
  cfg.hidden = {3};
  cfg.sampler = short_sampler(2, 1, 1);
  cfg.grid_size = 30;
  const auto d = estimate(data, known_propensity(data.pi), cfg);
  ASSERT_EQ(d.num_draws(), 1);
  const Summary s = summarize(d, 0.95);
  for (std::size_t q = 0; q < cfg.taus.size(); ++q) {
    EXPECT_NEAR(s.qte.mean[q], d.delta(0, q) * d.scale.width(), 1e-12);
    EXPECT_EQ(s.qte.lo[q], s.qte.hi[q]);
  }
}

TEST(Estimate, DrawCountIsProductAndEffectIsExactDifference) {
  const Dataset data = small_sim4(40, 13);
  PropensityDraws prop;
  prop.probs.resize(40, 2);
  prop.probs.col(0).setConstant(0.5);
  prop.probs.col(1).setConstant(0.45);
  EstimateConfig cfg;
  cfg.K = 4;
  cfg.hidden = {3};
  cfg.sampler = short_sampler(10, 4, 2);
  cfg.grid_size = 40;
  const auto d = estimate(data, prop, cfg);
  EXPECT_EQ(d.n_pi, 2);
  EXPECT_EQ(d.n_w, 3);
  EXPECT_EQ(d.num_draws(), 6);
  EXPECT_EQ(d.delta, (d.q1 - d.q0).eval());
  for (int r = 0; r < d.num_draws(); ++r) {
    for (Eigen::Index g = 1; g < d.F0.cols(); ++g) {
      ASSERT_GE(d.F0(r, g), d.F0(r, g - 1));
      ASSERT_GE(d.F1(r, g), d.F1(r, g - 1));
    }
    ASSERT_LE(d.F0(r, d.F0.cols() - 1), 1.0 + 1e-9);
  }
  // x-only ignores the propensity draws
  cfg.score = ScoreType::XOnly;
  EXPECT_EQ(estimate(data, prop, cfg).num_draws(), 3);
}

TEST(Estimate, DeterministicGivenSeed) {
  const Dataset data = small_sim4(30, 14);
  EstimateConfig cfg;
  cfg.K = 4;
  cfg.hidden = {3};
  cfg.sampler = short_sampler(12, 6, 2);
  const auto a = estimate(data, known_propensity(data.pi), cfg);
  const auto b = estimate(data, known_propensity(data.pi), cfg);
  EXPECT_EQ(a.delta, b.delta);
  EXPECT_EQ(a.F1, b.F1);
  cfg.seed = 2;
  EXPECT_NE(estimate(data, known_propensity(data.pi), cfg).delta, a.delta);
}

TEST(Estimate, RejectsInvalidInputs) {
  Dataset data = small_sim4(20, 15);
  EstimateConfig cfg;
  cfg.sampler = short_sampler(2, 1, 1);
  EXPECT_THROW(estimate(data, known_propensity(Eigen::VectorXd::Constant(19, 0.5)), cfg),
               std::invalid_argument);
  Dataset one_arm = data;
  std::fill(one_arm.t.begin(), one_arm.t.end(), 1);
  EXPECT_THROW(estimate(one_arm, known_propensity(data.pi), cfg), std::invalid_argument);
  EstimateConfig bad = cfg;
  bad.taus = {0.0};
  EXPECT_THROW(estimate(data, known_propensity(data.pi), bad), std::invalid_argument);
}

TEST(SelectModel, PicksLowestWaic) {
  const Dataset data = small_sim4(60, 16);
  EstimateConfig cfg;
  cfg.sampler = short_sampler(30, 10, 2);
  const std::vector<Candidate> cands{{4, 2}, {6, 3}, {3, 2}};
  const auto sel = select_model(data, known_propensity(data.pi), cfg, cands);
  ASSERT_EQ(sel.waic.size(), 3u);
  const auto best = std::min_element(sel.waic.begin(), sel.waic.end()) - sel.waic.begin();
  EXPECT_EQ(sel.best, best);
  for (double w : sel.waic) EXPECT_TRUE(std::isfinite(w));
}

TEST(RunChain, Sim4DivergenceRateBelowFivePercent) {
  const Dataset data = small_sim4(500, 18);
  EstimateConfig cfg;
  cfg.K = 8;
  cfg.hidden = {5};
  const PreparedData prep = PreparedData::from(data, cfg.margin_fraction);
  const SplineMixtureModel model = make_outcome_model(cfg, score_dim(cfg.score, data.dim()));
  const MixtureData md = make_mixture_data(
      model.basis(), {prep.outcome.y.data(), static_cast<std::size_t>(prep.outcome.y.size())},
      prep.t, prep.scores(data.pi, cfg.score));
  const PosteriorDraws draws = run_chain(MixturePosterior(model, md), cfg.hyper, cfg.sampler);
  EXPECT_EQ(draws.size(), 200u);
  EXPECT_LT(draws.divergence_rate(), 0.05);
}

TEST(Pipeline, CovariateFreeDoubleScoreMatchesInterceptOnly) {
  Dataset data = small_sim4(500, 17);
  data.x.resize(static_cast<Eigen::Index>(data.size()), 0);
  PipelineConfig pc;
  pc.source = PropensitySource::Known;
  pc.candidates = {{8, 5}};
  pc.estimate.sampler = short_sampler(400, 200, 2);
  const auto ds = run_pipeline(data, pc);
  pc.estimate.score = ScoreType::XOnly;  // no covariates left: intercept-only in the network
  const auto io = run_pipeline(data, pc);
  double sup = 0.0;
  for (std::size_t g = 0; g < ds.summary.grid_y.size(); ++g) {
    sup = std::max({sup, std::abs(ds.summary.F0.mean[g] - io.summary.F0.mean[g]),
                    std::abs(ds.summary.F1.mean[g] - io.summary.F1.mean[g])});
  }
  EXPECT_LT(sup, 0.05);
}

}  // namespace
}  // namespace qte
