#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>

#include "qte/simgen.hpp"
#include "test_util.hpp"

namespace qte {
namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TEST(Sim1, ZeroCovariatesGiveHalfAndKnownLocation) {
  const Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(5);
  const SimulationDesign d{1, 2, 10};
  const auto c0 = conditional_law(d, x, 0);
  EXPECT_DOUBLE_EQ(c0.loc, -1.55);
  const auto c1 = conditional_law(d, x, 1);
  // Z_2 = 0.5: components at 0 and 0
  EXPECT_DOUBLE_EQ(c1.mean[0], 0.0);
  EXPECT_DOUBLE_EQ(c1.mean[1], 0.0);
  EXPECT_DOUBLE_EQ(c1.w[0], 0.7);
  EXPECT_DOUBLE_EQ(true_propensity(d, x), 0.5);
}

TEST(Sim1, ConfoundedPropensityUsesFirstJCovariates) {
  Eigen::RowVectorXd x(5);
  x << 0.3, -0.1, 1.5, -2.0, 0.7;
  EXPECT_NEAR(true_propensity({1, 2, 10}, x), logistic(2.0 * (0.3 - 0.1)), 1e-15);
  x[0] = 0.0;
  x[1] = 0.0;
  EXPECT_DOUBLE_EQ(true_propensity({1, 2, 10}, x), 0.5);
}

TEST(Sim1, RandomizedWhenNoConfounders) {
  Rng rng = make_stream(1);
  const Dataset d = gen_sim1(0, 10000, rng);
  double mean = 0.0;
  for (int t : d.t) mean += t;
  EXPECT_NEAR(mean / 1e4, 0.5, 0.02);
  EXPECT_THROW(gen_sim1(1, 10, rng), std::invalid_argument);
}

TEST(Sim1, ErrorMixtureMoments) {
  // E[e] = 0.75 * 0.9 * sqrt(2/pi) - 0.25 * 0.3 * sqrt(2/pi)
  const auto law = ConditionalLaw::half_normal_error(0.0, 0.75, 0.9, 0.3);
  Rng rng = make_stream(2);
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) s += law.sample(rng);
  const double expected = (0.75 * 0.9 - 0.25 * 0.3) * std::sqrt(2.0 / std::numbers::pi);
  EXPECT_NEAR(s / n, expected, 0.005);
  EXPECT_DOUBLE_EQ(law.cdf(0.0), 0.25);
}

TEST(Sim2, LowerBoundCovariates) {
  Eigen::RowVectorXd x = Eigen::RowVectorXd::Zero(12);
  x.segment(3, 3).setOnes();
  EXPECT_NEAR(true_propensity({2, 0, 1}, x), logistic(-2.125), 1e-15);
  EXPECT_NEAR(logistic(-2.125), 0.1067, 1e-4);
}

TEST(Sim2, ControlMixtureWeightsAreAProbabilityVector) {
  Rng rng = make_stream(3);
  const SimulationDesign d{2, 0, 1};
  for (int i = 0; i < 1000; ++i) {
    const auto x = draw_covariates(d, rng);
    const auto law = conditional_law(d, x, 0);
    const double z = true_propensity(d, x);
    EXPECT_NEAR(law.w[0], std::sqrt(z), 1e-15);
    EXPECT_NEAR(law.w[0] + law.w[1], 1.0, 1e-15);
  }
}

TEST(Sim2, CovariateBlocks) {
  Rng rng = make_stream(4);
  const Dataset d = gen_sim2(10000, rng);
  for (int j = 0; j < 3; ++j) {
    EXPECT_GE(d.x.col(j).minCoeff(), 0.0);
    EXPECT_LE(d.x.col(j).maxCoeff(), 1.0);
  }
  for (int j = 3; j < 6; ++j) {
    EXPECT_GE(d.x.col(j).minCoeff(), 1.0);
    EXPECT_LE(d.x.col(j).maxCoeff(), 2.0);
  }
  for (int j = 6; j < 12; ++j) {
    EXPECT_NEAR(d.x.col(j).mean(), 0.5, 0.02);
    for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
      ASSERT_TRUE(d.x(i, j) == 0.0 || d.x(i, j) == 1.0);
    }
  }
}

TEST(Sim3, ConstantsLiteralTable) {
  const auto& p = Sim3Params::get();
  const double wh[5][4] = {{-0.99, -1.1, -0.14, -0.26},
                           {-0.18, 0.03, -1.45, -0.07},
                           {-0.44, 0.19, 0.86, 0.36},
                           {-1.07, 0.67, -0.58, -0.13},
                           {0.12, -0.37, 0.47, 1.25}};
  const double bh[5] = {0.96, 0.64, 0.74, -0.46, 0.21};
  const double wo[5] = {-0.15, 0.3, -0.004, -0.21, -0.88};
  const double cov[4][4] = {{1, 0.5, 0.2, 0.3}, {0.5, 1, 0.7, 0}, {0.2, 0.7, 1, 0}, {0.3, 0, 0, 1}};
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_EQ(p.Wh(i, j), wh[i][j]);
    EXPECT_EQ(p.bh[i], bh[i]);
    EXPECT_EQ(p.Wo[i], wo[i]);
  }
  EXPECT_EQ(p.bo, -0.05);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_EQ(p.covariance(i, j), cov[i][j]);
  }
  EXPECT_EQ(p.covariance, p.covariance.transpose());
  EXPECT_EQ(p.covariance.llt().info(), Eigen::Success);
}

TEST(Sim3, PropensityAtOrigin) {
  const double bh[5] = {0.96, 0.64, 0.74, -0.46, 0.21};
  const double wo[5] = {-0.15, 0.3, -0.004, -0.21, -0.88};
  double s = -0.05;
  for (int i = 0; i < 5; ++i) s += wo[i] * std::tanh(bh[i]);
  EXPECT_NEAR(true_propensity({3, 0, 1}, Eigen::RowVectorXd::Zero(4)), logistic(s), 1e-15);
}

TEST(Sim3, CovariateCovariance) {
  Rng rng = make_stream(5);
  const Dataset d = gen_sim3(100000, rng);
  const Eigen::MatrixXd centered = d.x.rowwise() - d.x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / (d.x.rows() - 1.0);
  const auto& target = Sim3Params::get().covariance;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(cov(i, j), target(i, j), 0.02);
  }
}

TEST(SkewNormal, ZeroShapeIsNormal) {
  const auto sn = ConditionalLaw::skew_normal(0.7, 1.3, 0.0);
  const auto nm = ConditionalLaw::normal(0.7, 1.3);
  for (double y = -4; y <= 5; y += 0.37) {
    EXPECT_NEAR(sn.pdf(y), nm.pdf(y), 1e-14);
    EXPECT_NEAR(sn.cdf(y), nm.cdf(y), 1e-14);
  }
  Rng rng = make_stream(6);
  std::vector<double> xs;
  for (int i = 0; i < 5000; ++i) xs.push_back(sn.sample(rng));
  EXPECT_GT(test::ks_pvalue(xs, [&](double v) { return nm.cdf(v); }), 0.01);
}

TEST(SkewNormal, MeanMatchesClosedForm) {
  const double alpha = 3.0, omega = 0.5;
  const auto sn = ConditionalLaw::skew_normal(0.0, omega, alpha);
  Rng rng = make_stream(7);
  double s = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) s += sn.sample(rng);
  const double delta = alpha / std::sqrt(1 + alpha * alpha);
  EXPECT_NEAR(s / n, omega * delta * std::sqrt(2.0 / std::numbers::pi), 0.004);
}

TEST(Sim4, ExponentialMeanAndTruth) {
  Rng rng = make_stream(8);
  const Dataset d = gen_sim4(100000, rng);
  EXPECT_NEAR(d.y0.mean(), 0.5, 0.01);
  EXPECT_NEAR(d.y1.mean(), 0.25, 0.01);
  TrueMarginals truth({4, 0, 1}, 0, rng);
  EXPECT_NEAR(truth.qte(0.5), std::log(0.5) / 4.0, 1e-15);
  EXPECT_NEAR(truth.qte(0.5), -0.1733, 1e-4);
  EXPECT_LT(std::abs(truth.qte(1e-9)), 1e-8);
  for (double y : {0.0, 0.01, 0.3, 1.0, 4.0}) {
    EXPECT_NEAR(truth.cdf(0, y), 1 - std::exp(-2 * y), 1e-12);
    EXPECT_NEAR(truth.cdf(1, y), 1 - std::exp(-4 * y), 1e-12);
  }
}

TEST(Simulate, ConsistencyOverlapDeterminism) {
  for (int id = 1; id <= 4; ++id) {
    const SimulationDesign d{id, id == 1 ? 2 : 0, 3000};
    Rng a = make_stream(9, {static_cast<std::uint64_t>(id)});
    Rng b = make_stream(9, {static_cast<std::uint64_t>(id)});
    const Dataset da = simulate(d, a), db = simulate(d, b);
    EXPECT_EQ(da.y, db.y);
    EXPECT_EQ(da.x, db.x);
    EXPECT_EQ(da.t, db.t);
    for (std::size_t i = 0; i < da.size(); ++i) {
      ASSERT_EQ(da.y[i], da.t[i] == 1 ? da.y1[i] : da.y0[i]);
      ASSERT_GT(da.pi[i], 0.0);
      ASSERT_LT(da.pi[i], 1.0);
    }
  }
}

// Probability integral transform: F(Y | X) ~ U(0, 1) when the sampler and the
// closed-form CDF describe the same law.
TEST(ConditionalLaw, SamplerAgreesWithCdf) {
  for (int id = 1; id <= 4; ++id) {
    const SimulationDesign d{id, id == 1 ? 2 : 0, 1};
    Rng rng = make_stream(10, {static_cast<std::uint64_t>(id)});
    for (int t = 0; t < 2; ++t) {
      std::vector<double> u;
      for (int i = 0; i < 4000; ++i) {
        const auto law = conditional_law(d, draw_covariates(d, rng), t);
        u.push_back(law.cdf(law.sample(rng)));
      }
      EXPECT_GT(test::ks_pvalue(u, [](double v) { return v; }), 0.01)
          << "design " << id << " arm " << t;
    }
  }
}

TEST(ConditionalLaw, DensityIsCdfDerivative) {
  for (int id = 1; id <= 4; ++id) {
    const SimulationDesign d{id, 0, 1};
    Rng rng = make_stream(11, {static_cast<std::uint64_t>(id)});
    for (int t = 0; t < 2; ++t) {
      const auto law = conditional_law(d, draw_covariates(d, rng), t);
      const auto [lo, hi] = law.bracket();
      for (int k = 1; k < 50; ++k) {
        const double y = lo + (hi - lo) * k / 50.0 + 1e-3;
        if (law.kind == ConditionalLaw::Kind::HalfNormalError && std::abs(y - law.loc) < 1e-3) {
          continue;
        }
        const double h = 1e-6;
        const double fd = (law.cdf(y + h) - law.cdf(y - h)) / (2 * h);
        EXPECT_NEAR(fd, law.pdf(y), 1e-6) << "design " << id << " arm " << t << " y " << y;
      }
    }
  }
}

TEST(TrueMarginals, RejectsSmallMonteCarlo) {
  Rng rng = make_stream(12);
  EXPECT_THROW(TrueMarginals({1, 0, 1}, 1000, rng), std::invalid_argument);
}

TEST(TrueMarginals, DensityIntegratesToOne) {
  for (int id = 1; id <= 3; ++id) {
    Rng rng = make_stream(13, {static_cast<std::uint64_t>(id)});
    const TrueMarginals truth({id, 2, 1}, 100000, rng);
    for (int t = 0; t < 2; ++t) {
      const double lo = truth.quantile(t, 1e-7), hi = truth.quantile(t, 1 - 1e-7);
      const double mass = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
          [&](double y) { return truth.pdf(t, y); }, lo, hi, 5, 1e-8);
      EXPECT_NEAR(mass, 1.0, 1e-3) << "design " << id << " arm " << t;
      EXPECT_NEAR(truth.cdf(t, truth.quantile(t, 0.3)), 0.3, 1e-8);
    }
  }
}

TEST(TrueMarginals, MedianStableUnderDoubling) {
  for (int id = 1; id <= 3; ++id) {
    // the doubled run extends the same covariate stream; at 1e5 draws the
    // design 3 median has Monte Carlo sd near 0.007, so the oracle size is 1e6
    Rng a = make_stream(14, {static_cast<std::uint64_t>(id)});
    Rng b = make_stream(14, {static_cast<std::uint64_t>(id)});
    const TrueMarginals small({id, 2, 1}, TrueMarginals::kDefaultMonteCarlo, a), large({id, 2, 1}, 2 * TrueMarginals::kDefaultMonteCarlo, b);
    for (int t = 0; t < 2; ++t) {
      EXPECT_LT(std::abs(small.quantile(t, 0.5) - large.quantile(t, 0.5)), 0.005)
          << "design " << id << " arm " << t;
    }
  }
}

}  // namespace
}  // namespace qte
