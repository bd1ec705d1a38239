#include "csp/simgen.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace csp {

namespace {

constexpr double kShapeFloor = 1e-3;
constexpr double kSigmaFloor = 1e-3;

struct CaseName {
  CaseId id;
  const char* name;
};

constexpr CaseName kNames[] = {
    {CaseId::case1, "case1"},       {CaseId::case2, "case2"},       {CaseId::case3, "case3"},
    {CaseId::case4, "case4"},       {CaseId::case5, "case5"},       {CaseId::case6, "case6"},
    {CaseId::case1_6d, "case1_6d"}, {CaseId::case2_6d, "case2_6d"}, {CaseId::case3_6d, "case3_6d"},
    {CaseId::banana, "banana"},     {CaseId::cond_beta, "cond_beta"},
};

enum class Family { beta, exponential, normal_mixture, banana, cond_beta };

Family family(CaseId c) {
  switch (c) {
    case CaseId::case1:
    case CaseId::case4:
    case CaseId::case1_6d: return Family::beta;
    case CaseId::case2:
    case CaseId::case5:
    case CaseId::case2_6d: return Family::exponential;
    case CaseId::case3:
    case CaseId::case6:
    case CaseId::case3_6d: return Family::normal_mixture;
    case CaseId::banana: return Family::banana;
    case CaseId::cond_beta: return Family::cond_beta;
  }
  throw DomainError("unknown case");
}

// Beta shapes of the response given x.
std::pair<double, double> beta_shapes(CaseId c, std::span<const double> x) {
  double a = 0.0, b = 0.0;
  switch (c) {
    case CaseId::case1:
      a = x[0];
      b = x[1];
      break;
    case CaseId::case4:
      a = x[0] + x[2];
      b = x[1] + x[2];
      break;
    case CaseId::case1_6d:
      a = x[0] + x[2] + x[4];
      b = x[1] + x[3] + x[5];
      break;
    case CaseId::cond_beta:
      a = x[0];
      b = x[0] * x[0] + 10.0;
      break;
    default: throw DomainError("beta_shapes: not a Beta case");
  }
  return {std::max(a, kShapeFloor), std::max(b, kShapeFloor)};
}

// Mixture weights for the Gaussian-mixture cases. Case 3 uses 1 - x1 and x1;
// the Dirichlet cases average to x_q / sum(x).
std::vector<double> mixture_weights(CaseId c, std::span<const double> x) {
  if (c == CaseId::case3) return {1.0 - x[0], x[0]};
  std::vector<double> a(x.size());
  for (std::size_t q = 0; q < x.size(); ++q) a[q] = std::max(x[q], kShapeFloor);
  const double s = std::accumulate(a.begin(), a.end(), 0.0);
  for (double& v : a) v /= s;
  return a;
}

double rate_of(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double normal_cdf(double y, double mu, double sigma) {
  return boost::math::cdf(boost::math::normal_distribution<>(mu, sigma), y);
}

double normal_pdf(double y, double mu, double sigma) {
  return boost::math::pdf(boost::math::normal_distribution<>(mu, sigma), y);
}

double draw_response(CaseId c, std::span<const double> x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  switch (family(c)) {
    case Family::beta:
    case Family::cond_beta: {
      auto [a, b] = beta_shapes(c, x);
      return beta_variate(a, b, rng);
    }
    case Family::exponential: {
      std::exponential_distribution<double> e(rate_of(x));
      return e(rng);
    }
    case Family::normal_mixture: {
      std::size_t comp = 0;
      if (c == CaseId::case3) {
        comp = unif(rng) < x[0] ? 1 : 0;
      } else {
        // Mixing probabilities are themselves a Dirichlet(x) draw.
        std::vector<double> lg(x.size());
        for (std::size_t q = 0; q < x.size(); ++q) lg[q] = log_gamma_variate(std::max(x[q], kShapeFloor), rng);
        const double mx = *std::max_element(lg.begin(), lg.end());
        std::vector<double> p(x.size());
        for (std::size_t q = 0; q < x.size(); ++q) p[q] = std::exp(lg[q] - mx);
        std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
        comp = pick(rng);
      }
      std::normal_distribution<double> nd(x[comp], std::max(x[comp], kSigmaFloor));
      return nd(rng);
    }
    case Family::banana: {
      std::normal_distribution<double> nd(x[0] * x[0] - 1.0, 0.5);
      return nd(rng);
    }
  }
  throw DomainError("draw_response: unknown case");
}

void draw_covariates(CaseId c, std::span<double> x, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm5(0.0, std::sqrt(5.0));
  switch (c) {
    case CaseId::case1:
    case CaseId::case4:
    case CaseId::case1_6d:
      x[0] = beta_variate(2.0, 5.0, rng);
      x[1] = beta_variate(5.0, 2.0, rng);
      for (std::size_t q = 2; q < x.size(); ++q) x[q] = beta_variate(2.0, 2.0, rng);
      break;
    case CaseId::case2:
    case CaseId::case5:
    case CaseId::case2_6d:
      for (double& v : x) v = norm5(rng);
      break;
    case CaseId::case3:
    case CaseId::case6:
    case CaseId::case3_6d:
    case CaseId::cond_beta:
      for (double& v : x) v = unif(rng);
      break;
    case CaseId::banana: {
      std::normal_distribution<double> n01(0.0, 1.0);
      do x[0] = n01(rng);
      while (std::abs(x[0]) > 3.0);
      break;
    }
  }
}

}  // namespace

const char* to_string(CaseId c) {
  for (const auto& n : kNames)
    if (n.id == c) return n.name;
  return "unknown";
}

CaseId parse_case_id(const std::string& s) {
  for (const auto& n : kNames)
    if (s == n.name) return n.id;
  throw DomainError("unknown case id '" + s + "'");
}

std::vector<CaseId> all_cases() {
  std::vector<CaseId> v;
  for (const auto& n : kNames) v.push_back(n.id);
  return v;
}

std::size_t case_dims(CaseId c) {
  switch (c) {
    case CaseId::case1:
    case CaseId::case2:
    case CaseId::case3: return 2;
    case CaseId::case4:
    case CaseId::case5:
    case CaseId::case6: return 3;
    case CaseId::case1_6d:
    case CaseId::case2_6d:
    case CaseId::case3_6d: return 6;
    case CaseId::banana:
    case CaseId::cond_beta: return 1;
  }
  throw DomainError("unknown case");
}

bool case_bounded(CaseId c) {
  const Family f = family(c);
  return f == Family::beta || f == Family::cond_beta;
}

double log_gamma_variate(double shape, std::mt19937_64& rng) {
  if (!(shape > 0.0)) throw DomainError("log_gamma_variate: shape must be positive");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double boost_log = 0.0;
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a), kept on the log scale.
    double u;
    do u = unif(rng);
    while (u <= 0.0);
    boost_log = std::log(u) / shape;
    shape += 1.0;
  }
  // Marsaglia and Tsang.
  std::normal_distribution<double> n01(0.0, 1.0);
  const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double z, v;
    do {
      z = n01(rng);
      v = 1.0 + c * z;
    } while (v <= 0.0);
    v = v * v * v;
    double u = unif(rng);
    if (u <= 0.0) continue;
    if (std::log(u) < 0.5 * z * z + d - d * v + d * std::log(v)) return std::log(d * v) + boost_log;
  }
}

double beta_variate(double a, double b, std::mt19937_64& rng) {
  const double la = log_gamma_variate(a, rng), lb = log_gamma_variate(b, rng);
  // a / (a + b) on the log scale.
  const double t = lb - la;
  return t > 0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
}

TruthOracle truth_oracle(CaseId c) {
  TruthOracle o;
  switch (family(c)) {
    case Family::beta:
    case Family::cond_beta:
      o.cond_cdf = [c](std::span<const double> x, double y) {
        if (y <= 0.0) return 0.0;
        if (y >= 1.0) return 1.0;
        auto [a, b] = beta_shapes(c, x);
        return boost::math::ibeta(a, b, y);
      };
      o.cond_density = [c](std::span<const double> x, double y) {
        if (y <= 0.0 || y >= 1.0) return 0.0;
        auto [a, b] = beta_shapes(c, x);
        return boost::math::pdf(boost::math::beta_distribution<>(a, b), y);
      };
      break;
    case Family::exponential:
      o.cond_cdf = [](std::span<const double> x, double y) { return y <= 0.0 ? 0.0 : -std::expm1(-rate_of(x) * y); };
      o.cond_density = [](std::span<const double> x, double y) {
        const double r = rate_of(x);
        return y < 0.0 ? 0.0 : r * std::exp(-r * y);
      };
      break;
    case Family::normal_mixture:
      o.cond_cdf = [c](std::span<const double> x, double y) {
        const auto w = mixture_weights(c, x);
        double F = 0.0;
        for (std::size_t q = 0; q < w.size(); ++q) F += w[q] * normal_cdf(y, x[q], std::max(x[q], kSigmaFloor));
        return F;
      };
      o.cond_density = [c](std::span<const double> x, double y) {
        const auto w = mixture_weights(c, x);
        double f = 0.0;
        for (std::size_t q = 0; q < w.size(); ++q) f += w[q] * normal_pdf(y, x[q], std::max(x[q], kSigmaFloor));
        return f;
      };
      break;
    case Family::banana:
      o.cond_cdf = [](std::span<const double> x, double y) { return normal_cdf(y, x[0] * x[0] - 1.0, 0.5); };
      o.cond_density = [](std::span<const double> x, double y) { return normal_pdf(y, x[0] * x[0] - 1.0, 0.5); };
      break;
  }
  return o;
}

CdfFamily TruthOracle::cdf_family(Interval domain) const {
  auto F = cond_cdf;
  return [F, domain](std::span<const double> x) {
    std::vector<double> xc(x.begin(), x.end());
    return Cdf{[F, xc](double y) { return F(xc, y); }, domain, {}};
  };
}

DensityFamily TruthOracle::density_family() const {
  auto f = cond_density;
  return [f](std::span<const double> x) -> DensityFunction {
    std::vector<double> xc(x.begin(), x.end());
    return [f, xc](double y) { return f(xc, y); };
  };
}

GeneratedCase generate(const CaseSpec& spec) {
  if (spec.N < 1) throw DomainError("generate: N must be >= 1");
  const std::size_t d = case_dims(spec.id);
  GeneratedCase g;
  g.data.x.resize(static_cast<Eigen::Index>(spec.N), static_cast<Eigen::Index>(d));
  g.data.y.resize(static_cast<Eigen::Index>(spec.N));
  g.data.covariate_names = default_covariate_names(d);
  g.data.response_name = "y";
  std::mt19937_64 rng(spec.seed);
  std::vector<double> x(d);
  for (std::size_t r = 0; r < spec.N; ++r) {
    draw_covariates(spec.id, x, rng);
    const auto ri = static_cast<Eigen::Index>(r);
    for (std::size_t q = 0; q < d; ++q) g.data.x(ri, static_cast<Eigen::Index>(q)) = x[q];
    g.data.y[ri] = draw_response(spec.id, x, rng);
  }
  g.truth = truth_oracle(spec.id);
  return g;
}

std::vector<double> sample_conditional(CaseId c, std::span<const double> x, std::size_t count, std::uint64_t seed) {
  if (x.size() != case_dims(c)) throw DomainError("sample_conditional: covariate dimension mismatch");
  std::mt19937_64 rng(seed);
  std::vector<double> out(count);
  for (double& v : out) v = draw_response(c, x, rng);
  return out;
}

Interval case_domain(CaseId c, std::span<const double> responses) {
  if (case_bounded(c)) return {0.0, 1.0};
  return expanded_range(responses, 0.01);
}

double truth_crps(const TruthOracle& truth, const PointMatrix& x, std::span<const double> y, Interval domain,
                  std::size_t grid_size) {
  return crps_average(truth.cdf_family(domain), x, y, grid_size);
}

}  // namespace csp
