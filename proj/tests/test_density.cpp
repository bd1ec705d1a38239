#include "csp/bspline.hpp"
#include "csp/density.hpp"
#include "csp/io.hpp"
#include "csp/optimize.hpp"
#include "csp/simgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace csp;

namespace {

struct Normalized {
  PointMatrix x;
  std::vector<double> y;
};

Normalized case_sample(CaseId c, std::size_t n, std::uint64_t seed) {
  const Dataset d = generate({c, n, seed}).data;
  Normalized out{d.x, std::vector<double>(d.y.data(), d.y.data() + d.y.size())};
  for (Eigen::Index q = 0; q < out.x.cols(); ++q) {
    const double lo = out.x.col(q).minCoeff(), hi = out.x.col(q).maxCoeff();
    out.x.col(q) = (out.x.col(q).array() - lo) / (hi - lo);
  }
  const Interval yr = expanded_range(out.y, 0.01);
  for (auto& v : out.y) v = (v - yr.lo) / yr.length();
  return out;
}

Vector random_coeffs(std::size_t n, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Vector c(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = g(rng);
  return c;
}

double gradient_rel_error(const std::function<CriterionValue(const Vector&)>& f, const Vector& c) {
  const Vector g = f(c).gradient;
  Vector fd(c.size());
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    Vector a = c, b = c;
    a[i] += h, b[i] -= h;
    fd[i] = (f(a).value - f(b).value) / (2 * h);
  }
  return (fd - g).norm() / std::max(g.norm(), 1e-12);
}

// Reference that integrates to 1 over y in [0, 1] and varies with x.
double tilted_rho(std::span<const double> x, double y) {
  const double a = 0.8 * (x[0] - 0.5);
  return 1.0 + a * (2.0 * y - 1.0);
}

FitConfig quick_config(std::size_t d, Interval domain) {
  FitConfig cfg;
  cfg.basis = BasisConfig::defaults(d);
  cfg.domain = domain;
  cfg.lambdas = {1e-4};
  return cfg;
}

}  // namespace

TEST(BSpline, PartitionOfUnityAndDerivatives) {
  const BSplineBasis b({0.1, 0.35, 0.4, 0.8}, {0.0, 1.0});
  EXPECT_EQ(b.size(), 8u);
  for (double t = 0.0; t <= 1.0; t += 0.01) {
    EXPECT_NEAR(b.eval(t).sum(), 1.0, 1e-13);
    EXPECT_NEAR(b.eval(t, 1).sum(), 0.0, 1e-10);
  }
  const double h = 1e-6;
  for (double t : {0.05, 0.2, 0.37, 0.5, 0.9}) {
    const Vector d1 = (b.eval(t + h) - b.eval(t - h)) / (2 * h);
    const Vector d2 = (b.eval(t + h, 1) - b.eval(t - h, 1)) / (2 * h);
    EXPECT_LT((d1 - b.eval(t, 1)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((d2 - b.eval(t, 2)).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(BSpline, LocalSupport) {
  const BSplineBasis b({0.25, 0.5, 0.75}, {0.0, 1.0});
  for (double t : {0.0, 0.1, 0.3, 0.6, 0.99, 1.0}) {
    const Vector v = b.eval(t);
    const std::size_t f = b.first_active(t);
    std::array<double, 4> local;
    b.eval_local(t, local);
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (j >= f && j < f + 4)
        EXPECT_DOUBLE_EQ(v[static_cast<Eigen::Index>(j)], local[j - f]);
      else
        EXPECT_EQ(v[static_cast<Eigen::Index>(j)], 0.0);
    }
  }
}

TEST(Basis, FeatureCountAndCentering) {
  const auto s = case_sample(CaseId::case1, 500, 1);
  BasisConfig cfg = BasisConfig::defaults(2);
  cfg.included_terms.push_back({0, 1});
  const DensityBasis b = DensityBasis::from_data(cfg, s.x, s.y);
  const std::size_t ny = cfg.y_knots - 2 + 4 - 1;
  const std::size_t nx = cfg.x_knots_per_dim - 2 + 4 - 1;
  EXPECT_EQ(b.y_size(), ny);
  EXPECT_EQ(b.psi_size(), 1 + nx + nx + nx * nx);
  EXPECT_EQ(b.coefficient_count(), ny * (1 + 2 * nx + nx * nx));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vector mean = b.quad_features().transpose() * Eigen::Map<const Vector>(b.quad().weights.data(), static_cast<Eigen::Index>(b.quad().size()));
  EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-12);
  // eta(x, .) averages to zero at any x.
  const Vector c = random_coeffs(b.coefficient_count(), rng, 1.0);
  const Eigen::Map<const Eigen::MatrixXd> C(c.data(), static_cast<Eigen::Index>(ny), static_cast<Eigen::Index>(b.psi_size()));
  for (int t = 0; t < 10; ++t) {
    const std::vector<double> x{u(rng), u(rng)};
    const Vector w = C * b.psi(x);
    double avg = 0.0;
    for (std::size_t k = 0; k < b.quad().size(); ++k) avg += b.quad().weights[k] * b.quad_features().row(static_cast<Eigen::Index>(k)).dot(w);
    EXPECT_NEAR(avg, 0.0, 1e-8);
  }
}

TEST(Basis, ConfigValidation) {
  BasisConfig cfg = BasisConfig::defaults(2);
  cfg.y_knots = 3;
  EXPECT_THROW(cfg.validate(2), DomainError);
  cfg = BasisConfig::defaults(2);
  cfg.included_terms.push_back({2});
  EXPECT_THROW(cfg.validate(2), DomainError);
}

TEST(Criteria, ValuesAtZero) {
  const auto s = case_sample(CaseId::case3, 200, 3);
  const DensityBasis b = DensityBasis::from_data(BasisConfig::defaults(2), s.x, s.y);
  const FitProblem prob(b, s.x, s.y);
  EXPECT_NEAR(criterion_likelihood(Vector::Zero(static_cast<Eigen::Index>(prob.parameter_count(FitMode::likelihood))), prob, 0.1).value, 0.0, 1e-14);
  EXPECT_NEAR(criterion_pseudo(Vector::Zero(static_cast<Eigen::Index>(prob.parameter_count(FitMode::pseudo))), prob, 0.1).value, 1.0, 1e-14);
}

TEST(Criteria, PenaltyScalesWithLambda) {
  const auto s = case_sample(CaseId::case2, 200, 4);
  const DensityBasis b = DensityBasis::from_data(BasisConfig::defaults(2), s.x, s.y);
  const FitProblem prob(b, s.x, s.y);
  std::mt19937_64 rng(5);
  const Vector c = random_coeffs(prob.parameter_count(FitMode::likelihood), rng, 0.5);
  const double v0 = criterion_likelihood(c, prob, 0.0).value;
  const double v1 = criterion_likelihood(c, prob, 0.3).value;
  const double v2 = criterion_likelihood(c, prob, 0.6).value;
  EXPECT_NEAR(v2 - v0, 2.0 * (v1 - v0), 1e-10 * std::max(1.0, std::abs(v2)));
}

TEST(Criteria, GradientsMatchFiniteDifferences) {
  const auto s = case_sample(CaseId::case3, 200, 6);
  const DensityBasis b = DensityBasis::from_data(BasisConfig::defaults(2), s.x, s.y);
  const FitProblem plain(b, s.x, s.y);
  const FitProblem tilted(b, s.x, s.y, tilted_rho);
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    const double lambda = std::pow(10.0, -4 + t % 4);
    const Vector cl = random_coeffs(plain.parameter_count(FitMode::likelihood), rng, 0.3);
    EXPECT_LT(gradient_rel_error([&](const Vector& c) { return criterion_likelihood(c, plain, lambda); }, cl), 1e-5);
    const Vector cp = random_coeffs(plain.parameter_count(FitMode::pseudo), rng, 0.3);
    EXPECT_LT(gradient_rel_error([&](const Vector& c) { return criterion_pseudo(c, tilted, lambda); }, cp), 1e-5);
  }
}

TEST(Criteria, PseudoCacheMatchesRecomputation) {
  const auto s = case_sample(CaseId::case1, 200, 8);
  const DensityBasis b = DensityBasis::from_data(BasisConfig::defaults(2), s.x, s.y);
  const FitProblem prob(b, s.x, s.y, tilted_rho);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 5; ++t) {
    const Vector c = random_coeffs(prob.parameter_count(FitMode::pseudo), rng, 0.5);
    const auto a = criterion_pseudo(c, prob, 1e-3), u = criterion_pseudo_uncached(c, prob, 1e-3);
    EXPECT_NEAR(a.value, u.value, 1e-12);
    EXPECT_LT((a.gradient - u.gradient).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Criteria, HessianMatchesGradientDifferences) {
  const auto s = case_sample(CaseId::case2, 150, 10);
  const DensityBasis b = DensityBasis::from_data(BasisConfig::defaults(2), s.x, s.y);
  const FitProblem prob(b, s.x, s.y, tilted_rho);
  std::mt19937_64 rng(11);
  for (FitMode m : {FitMode::likelihood, FitMode::pseudo}) {
    const Vector c = random_coeffs(prob.parameter_count(m), rng, 0.2);
    auto grad = [&](const Vector& v) {
      return m == FitMode::likelihood ? criterion_likelihood(v, prob, 1e-2).gradient : criterion_pseudo(v, prob, 1e-2).gradient;
    };
    const Eigen::MatrixXd H = criterion_hessian(m, c, prob, 1e-2);
    const double h = 1e-6;
    for (Eigen::Index j = 0; j < c.size(); j += 7) {
      Vector a = c, bb = c;
      a[j] += h, bb[j] -= h;
      const Vector col = (grad(a) - grad(bb)) / (2 * h);
      EXPECT_LT((col - H.col(j)).norm(), 1e-6 * std::max(1.0, H.col(j).norm()));
    }
  }
}

TEST(Optimizer, Rosenbrock) {
  auto f = [](const Vector& v) {
    CriterionValue r;
    const double a = 1 - v[0], b = v[1] - v[0] * v[0];
    r.value = a * a + 100 * b * b;
    r.gradient.resize(2);
    r.gradient << -2 * a - 400 * v[0] * b, 200 * b;
    return r;
  };
  const auto res = minimize_bfgs(f, Vector::Constant(2, -1.2), {1e-8, 500, {}});
  EXPECT_TRUE(res.converged);
  EXPECT_NEAR(res.x[0], 1.0, 1e-6);
  EXPECT_NEAR(res.x[1], 1.0, 1e-6);
}

TEST(Model, ZeroCoefficientsGiveUniform) {
  const auto s = case_sample(CaseId::case1, 100, 12);
  DensityBasis b = DensityBasis::from_data(BasisConfig::defaults(2), s.x, s.y);
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(b.coefficient_count()));
  const DensityModel m(b, zero, 1.0, {2.0, 6.0}, {{0, 1}, {0, 1}}, FitMode::likelihood);
  const std::vector<double> x{0.3, 0.6};
  for (double y : {2.0, 2.5, 3.9, 5.0, 6.0}) {
    EXPECT_NEAR(m.cond_density(x, y), 0.25, 1e-12);
    EXPECT_NEAR(m.cond_cdf(x, y), (y - 2.0) / 4.0, 1e-12);
  }
}

TEST(Fit, LargeLambdaOnIndependentUniformIsFlat) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Linear tilts are unpenalized, so their sampling noise must be small.
  Dataset d;
  d.x.resize(20000, 2);
  d.y.resize(20000);
  for (Eigen::Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < 20000; ++i) d.y[i] = u(rng);
  d.covariate_names = default_covariate_names(2);
  FitConfig cfg = quick_config(2, {0, 1});
  cfg.lambdas = {10.0};
  const FitResult r = fit_density(d, cfg);
  for (double x1 = 0.05; x1 < 1; x1 += 0.3)
    for (double x2 = 0.05; x2 < 1; x2 += 0.3)
      for (double y = 0; y <= 1.0; y += 0.05) EXPECT_NEAR(r.model.cond_density(std::vector<double>{x1, x2}, y), 1.0, 0.1);
  EXPECT_LE(r.report.criterion, r.report.criterion_at_zero);
}

TEST(Fit, NormalizationAndMonotoneCdf) {
  for (FitMode mode : {FitMode::likelihood, FitMode::pseudo}) {
    const Dataset d = generate({CaseId::case3, 300, 14}).data;
    FitConfig cfg = quick_config(2, case_domain(CaseId::case3, d.responses()));
    cfg.mode = mode;
    const FitResult r = fit_density(d, cfg);
    EXPECT_TRUE(r.report.converged);
    EXPECT_LE(r.report.criterion, r.report.criterion_at_zero);
    // 10-point Gauss on 8 subpanels of every knot panel, independent of the model's rules.
    std::vector<double> edges;
    const auto knots = r.model.basis().y_basis().breakpoints();
    for (std::size_t k = 0; k + 1 < knots.size(); ++k)
      for (int s = 0; s < 8; ++s) edges.push_back(knots[k] + (knots[k + 1] - knots[k]) * s / 8.0);
    edges.push_back(1.0);
    const Interval dom0 = r.model.domain();
    for (auto& e : edges) e = dom0.lo + dom0.length() * e;
    edges.back() = dom0.hi;
    const QuadratureRule q = QuadratureRule::composite_gauss_legendre(edges, 10);
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 10; ++t) {
      const std::vector<double> x{u(rng), u(rng)};
      double mass = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) mass += q.weights[k] * r.model.cond_density(x, q.nodes[k]);
      EXPECT_NEAR(mass, 1.0, 1e-6);
      const Interval dom = r.model.domain();
      EXPECT_NEAR(r.model.cond_cdf(x, dom.lo), 0.0, 1e-12);
      EXPECT_NEAR(r.model.cond_cdf(x, dom.hi), 1.0, 1e-6);
      double prev = -1.0;
      for (int i = 0; i <= 400; ++i) {
        const double y = i == 400 ? dom.hi : dom.lo + dom.length() * i / 400.0;
        const double F = r.model.cond_cdf(x, y);
        EXPECT_GE(F, prev - 1e-12);
        EXPECT_GT(r.model.cond_density(x, y), 0.0);
        prev = F;
      }
    }
  }
}

TEST(Fit, RoughnessDecreasesWithLambda) {
  const Dataset d = generate({CaseId::case1, 300, 16}).data;
  double prev = INFINITY;
  for (double lambda : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    FitConfig cfg = quick_config(2, {0, 1});
    cfg.lambdas = {lambda};
    const double J = fit_density(d, cfg).model.roughness();
    EXPECT_LE(J, prev * (1 + 1e-6));
    prev = J;
  }
}

TEST(Fit, LambdaSelectionReportsPath) {
  const Dataset d = generate({CaseId::case1, 250, 17}).data;
  FitConfig cfg = quick_config(2, {0, 1});
  cfg.lambdas = default_lambda_grid();
  const FitResult r = fit_density(d, cfg);
  ASSERT_EQ(r.report.lambda_path.size(), 8u);
  ASSERT_EQ(r.report.validation_crps.size(), 8u);
  const auto best = std::min_element(r.report.validation_crps.begin(), r.report.validation_crps.end());
  EXPECT_EQ(r.report.lambda, r.report.lambda_path[static_cast<std::size_t>(best - r.report.validation_crps.begin())]);
}

TEST(Fit, MarginalReferenceConverges) {
  const Dataset d = generate({CaseId::case2, 300, 18}).data;
  FitConfig cfg = quick_config(2, case_domain(CaseId::case2, d.responses()));
  cfg.mode = FitMode::pseudo;
  cfg.reference = PseudoReference::marginal;
  const FitResult r = fit_density(d, cfg);
  EXPECT_TRUE(r.report.converged);
}

TEST(Fit, RejectsResponsesOutsideDomain) {
  const Dataset d = generate({CaseId::case2, 100, 19}).data;
  FitConfig cfg = quick_config(2, {0.0, 0.01});
  EXPECT_THROW(fit_density(d, cfg), DomainError);
}

TEST(Distribution, CrpsMatchesNumericIntegral) {
  const Dataset d = generate({CaseId::case3, 300, 20}).data;
  const FitResult r = fit_density(d, quick_config(2, case_domain(CaseId::case3, d.responses())));
  const std::vector<double> x{0.4, 0.7};
  const ConditionalDistribution dist = r.model.distribution(x);
  const Cdf F = dist.as_cdf();
  for (double y : {-0.2, 0.3, 0.5, 1.1})
    EXPECT_NEAR(dist.crps(y), crps_single(F, y, 20000), 1e-6);
  // Outside the domain the CDF is 0 below and 1 above.
  const Interval dom = dist.domain();
  EXPECT_NEAR(dist.crps(dom.hi + 2.0), dist.crps(dom.hi) + 2.0, 1e-12);
}

TEST(Model, JsonRoundTrip) {
  const Dataset d = generate({CaseId::case2, 300, 21}).data;
  const FitResult r = fit_density(d, quick_config(2, case_domain(CaseId::case2, d.responses())));
  const Json j = model_to_json(r.model);
  const DensityModel back = model_from_json(Json::parse(j.dump()));
  EXPECT_EQ(model_to_json(back).dump(), j.dump());
  for (double y : {0.1, 0.5, 2.0})
    EXPECT_EQ(back.cond_cdf(std::vector<double>{0.3, 0.3}, y), r.model.cond_cdf(std::vector<double>{0.3, 0.3}, y));
}

TEST(Model, ClampsCovariatesOutsideRange) {
  const Dataset d = generate({CaseId::case1, 200, 22}).data;
  const FitResult r = fit_density(d, quick_config(2, {0, 1}));
  bool clamped = false;
  r.model.cond_density(std::vector<double>{-5.0, 0.5}, 0.5, &clamped);
  EXPECT_TRUE(clamped);
}
