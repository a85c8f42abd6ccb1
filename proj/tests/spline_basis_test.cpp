#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <random>
#include <vector>

#include "qte/spline_basis.hpp"
#include "test_util.hpp"

namespace qte {
namespace {

using boost::math::quadrature::gauss_kronrod;

// Adaptive Gauss-Kronrod over each knot interval (the integrand is smooth there).
template <typename F>
double integrate_over_knots(const SplineBasis& basis, F f, double upper = 1.0) {
  double total = 0.0;
  const auto& knots = basis.knots();
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const double a = knots[i], b = std::min(knots[i + 1], upper);
    if (b <= a) continue;
    total += gauss_kronrod<double, 15>::integrate(f, a, b, 15, 1e-14);
  }
  return total;
}

TEST(SplineBasis, KnotLayout) {
  SplineBasis b(5);
  const std::vector<double> expected{0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0};
  ASSERT_EQ(b.knots().size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_DOUBLE_EQ(b.knots()[i], expected[i]);
  EXPECT_THROW(SplineBasis(1), std::invalid_argument);
}

TEST(SplineBasis, TwoFunctionClosedForms) {
  // knots {0,0,1,1}: M_1 = 2(1-y), M_2 = 2y, I_1 = 2y - y^2, I_2 = y^2
  SplineBasis b(2);
  EXPECT_DOUBLE_EQ(b.mspline(0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(b.mspline(1, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(b.ispline(0, 0.5), 0.75);
  EXPECT_DOUBLE_EQ(b.ispline(1, 0.5), 0.25);
  for (double y : {0.0, 0.13, 0.5, 0.77, 1.0}) {
    EXPECT_NEAR(b.mspline(0, y), 2.0 * (1.0 - y), 1e-15);
    EXPECT_NEAR(b.mspline(1, y), 2.0 * y, 1e-15);
    EXPECT_NEAR(b.ispline(0, y), 2.0 * y - y * y, 1e-15);
    EXPECT_NEAR(b.ispline(1, y), y * y, 1e-15);
  }
}

TEST(SplineBasis, MSplinesIntegrateToOne) {
  for (int K : {2, 3, 8, 10, 12, 25}) {
    SplineBasis b(K);
    for (int k = 0; k < K; ++k) {
      const double mass = integrate_over_knots(b, [&](double y) { return b.mspline(k, y); });
      EXPECT_NEAR(mass, 1.0, 1e-8) << "K=" << K << " k=" << k;
    }
  }
}

TEST(SplineBasis, ISplineIsRunningIntegral) {
  SplineBasis b(8);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = rep % 8;
    const double y = unif(rng);
    const double integral =
        integrate_over_knots(b, [&](double u) { return b.mspline(k, u); }, y);
    EXPECT_NEAR(b.ispline(k, y), integral, 1e-12);
  }
  for (int k = 0; k < 8; ++k) {
    EXPECT_EQ(b.ispline(k, 0.0), 0.0);
    EXPECT_EQ(b.ispline(k, 1.0), 1.0);
  }
}

TEST(SplineBasis, BatchEvaluationMatchesScalar) {
  SplineBasis b(10);
  std::vector<double> m(10), i(10);
  for (double y : {0.0, 1.0 / 9.0, 0.31, 0.5, 0.999, 1.0}) {
    b.mspline_all(y, m);
    b.ispline_all(y, i);
    for (int k = 0; k < 10; ++k) {
      EXPECT_DOUBLE_EQ(m[k], b.mspline(k, y));
      EXPECT_NEAR(i[k], b.ispline(k, y), 1e-15);
    }
  }
}

TEST(SplineBasis, RejectsBadArguments) {
  SplineBasis b(4);
  EXPECT_THROW(b.mspline(4, 0.5), std::out_of_range);
  EXPECT_THROW(b.mspline(-1, 0.5), std::out_of_range);
  EXPECT_THROW(b.ispline(0, 1.5), std::domain_error);
  EXPECT_THROW(b.mspline(0, -0.01), std::domain_error);
}

TEST(MixtureWeights, Validation) {
  EXPECT_THROW(MixtureWeights({0.5, 0.6}), std::invalid_argument);
  EXPECT_THROW(MixtureWeights({1.1, -0.1}), std::invalid_argument);
  MixtureWeights w({0.5, 0.5 + 1e-11});
  EXPECT_NEAR(w[0] + w[1], 1.0, 1e-15);
}

TEST(MixturePdfCdf, EqualWeightsGiveUniform) {
  SplineBasis b(2);
  const auto r = mixture_pdf_cdf(b, MixtureWeights({0.5, 0.5}), 0.3);
  EXPECT_NEAR(r.pdf, 1.0, 1e-15);
  EXPECT_NEAR(r.cdf, 0.3, 1e-15);
}

TEST(MixturePdfCdf, OneHotAtUpperBoundary) {
  SplineBasis b(6);
  for (int k = 0; k < 6; ++k) {
    std::vector<double> theta(6, 0.0);
    theta[k] = 1.0;
    const auto r = mixture_pdf_cdf(b, MixtureWeights(theta), 1.0);
    EXPECT_DOUBLE_EQ(r.pdf, b.mspline(k, 1.0));
    EXPECT_DOUBLE_EQ(r.cdf, 1.0);
  }
}

TEST(MixturePdfCdf, PartitionOfUnityByQuadrature) {
  std::mt19937_64 rng(3);
  for (int K : {2, 8, 10, 12}) {
    SplineBasis b(K);
    for (int rep = 0; rep < 20; ++rep) {
      const auto theta = rep == 0 ? std::vector<double>(K, 1.0 / K) : test::random_simplex(K, rng);
      MixtureWeights w(theta);
      const double mass =
          integrate_over_knots(b, [&](double y) { return mixture_pdf_cdf(b, w, y).pdf; });
      EXPECT_NEAR(mass, 1.0, 1e-8);
    }
  }
}

TEST(MixturePdfCdf, CdfDerivativeMatchesPdfAwayFromKnots) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int K : {2, 8, 10, 12}) {
    SplineBasis b(K);
    const double spacing = 1.0 / (K - 1);
    for (int rep = 0; rep < 500; ++rep) {
      MixtureWeights w(test::random_simplex(K, rng));
      double y = unif(rng);
      const double frac = y / spacing - std::floor(y / spacing);
      if (frac < 1e-3 || frac > 1 - 1e-3) continue;
      const double h = 1e-7;
      const double deriv =
          (mixture_pdf_cdf(b, w, y + h).cdf - mixture_pdf_cdf(b, w, y - h).cdf) / (2 * h);
      EXPECT_NEAR(deriv, mixture_pdf_cdf(b, w, y).pdf, 1e-5);
    }
  }
}

TEST(MixturePdfCdf, MonotoneAndPinnedAtBoundaries) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 10000; ++rep) {
    const int K = 2 + rep % 11;
    SplineBasis b(K);
    MixtureWeights w(test::random_simplex(K, rng));
    double y1 = unif(rng), y2 = unif(rng);
    if (y1 > y2) std::swap(y1, y2);
    EXPECT_LE(mixture_pdf_cdf(b, w, y1).cdf, mixture_pdf_cdf(b, w, y2).cdf);
    if (rep % 100 == 0) {
      EXPECT_NEAR(mixture_pdf_cdf(b, w, 0.0).cdf, 0.0, 1e-12);
      EXPECT_NEAR(mixture_pdf_cdf(b, w, 1.0).cdf, 1.0, 1e-12);
    }
  }
}

}  // namespace
}  // namespace qte
