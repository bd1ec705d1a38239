#pragma once

// Conditional density estimation on a reduced set: a logistic-transformed
// tensor-spline ANOVA model fitted by penalized likelihood or penalized
// pseudo-likelihood.

#include "csp/bspline.hpp"
#include "csp/common.hpp"
#include "csp/dataset.hpp"
#include "csp/metrics.hpp"
#include "csp/optimize.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace csp {

/// Covariate dimensions of one ANOVA term. Every term is paired with the
/// response; the empty term is the response main effect.
using AnovaTerm = std::vector<std::size_t>;

struct BasisConfig {
  /// Distinct knots in the response direction, boundaries included.
  std::size_t y_knots = 12;
  /// Distinct knots per covariate, boundaries included.
  std::size_t x_knots_per_dim = 6;
  std::vector<AnovaTerm> included_terms;

  /// {y} plus one (q, y) interaction per covariate.
  static BasisConfig defaults(std::size_t dims);
  void validate(std::size_t dims) const;
};

enum class FitMode { likelihood, pseudo };
const char* to_string(FitMode m);
FitMode parse_fit_mode(const std::string& s);

/// Reference density rho of the pseudo-likelihood: uniform on the domain,
/// or a response-only likelihood fit shared by every x.
enum class PseudoReference { uniform, marginal };
const char* to_string(PseudoReference r);
PseudoReference parse_pseudo_reference(const std::string& s);

/// Feature map on normalized coordinates (x in [0,1]^d, y in [0,1]).
///
/// eta(x, y) = sum_{j,t} C(j, t) phi_j(y) psi_t(x), where phi are the
/// response B-splines minus their quadrature mean (last one dropped) and
/// psi stacks, per term, the tensor product of covariate B-splines (last
/// one per dimension dropped), first dimension fastest.
class DensityBasis {
 public:
  DensityBasis() = default;
  DensityBasis(BasisConfig cfg, std::size_t dims, std::vector<double> y_interior,
               std::vector<std::vector<double>> x_interior);

  /// Knots at equally spaced quantiles of the normalized data.
  static DensityBasis from_data(const BasisConfig& cfg, const PointMatrix& x_norm,
                                std::span<const double> y_norm);

  const BasisConfig& config() const { return cfg_; }
  std::size_t dims() const { return dims_; }
  std::size_t y_size() const { return ny_; }
  std::size_t psi_size() const { return npsi_; }
  /// Entries of C; column-major, response index fastest.
  std::size_t coefficient_count() const { return ny_ * npsi_; }
  std::size_t term_count() const { return terms_.size(); }
  /// First psi index and length of each term's block.
  std::size_t term_offset(std::size_t t) const { return terms_[t].offset; }
  std::size_t term_size(std::size_t t) const { return terms_[t].size; }
  const AnovaTerm& term_dims(std::size_t t) const { return terms_[t].dims; }

  const BSplineBasis& y_basis() const { return y_basis_; }
  const BSplineBasis& x_basis(std::size_t q) const { return x_bases_[q]; }
  const std::vector<double>& y_centering() const { return y_mean_; }

  void y_features(double y, std::span<double> out) const;
  Vector y_features(double y) const;
  void psi(std::span<const double> x, std::span<double> out) const;
  Vector psi(std::span<const double> x) const;

  /// Main quadrature over [0,1] and the centered response features at its
  /// nodes (one row per node).
  const QuadratureRule& quad() const { return quad_; }
  const Eigen::MatrixXd& quad_features() const { return quad_phi_; }

  /// J = sum over terms of tr(C_T' Ryy C_T Gx_T) + tr(C_T' Gyy C_T Rx_T).
  double roughness(const Eigen::MatrixXd& C) const;
  /// dJ/dC added into `grad` scaled by `scale`.
  void add_roughness_gradient(const Eigen::MatrixXd& C, double scale, Eigen::MatrixXd& grad) const;
  /// Full penalty matrix on vec(C).
  Eigen::MatrixXd penalty_matrix() const;
  /// Covariate roughness on psi (zero block for the main effect), used for
  /// the offset in pseudo mode.
  Eigen::MatrixXd psi_roughness() const;

 private:
  struct TermBlock {
    AnovaTerm dims;
    std::size_t offset = 0;
    std::size_t size = 0;
    Eigen::MatrixXd gram;       // covariate L2 Gram, 1x1 for the main effect
    Eigen::MatrixXd roughness;  // covariate roughness, zero for the main effect
  };

  BasisConfig cfg_;
  std::size_t dims_ = 0;
  BSplineBasis y_basis_;
  std::vector<BSplineBasis> x_bases_;
  std::vector<double> y_mean_;
  std::size_t ny_ = 0;
  std::size_t npsi_ = 0;
  std::vector<TermBlock> terms_;
  QuadratureRule quad_;
  Eigen::MatrixXd quad_phi_;
  Eigen::MatrixXd ryy_, gyy_;
};

/// Reference conditional density for the pseudo-likelihood on normalized
/// coordinates; must integrate to 1 over y in [0,1] at every x.
using ReferenceDensity = std::function<double(std::span<const double> x_norm, double y_norm)>;

/// Data of one fit in normalized coordinates with per-row features.
class FitProblem {
 public:
  FitProblem(const DensityBasis& basis, const PointMatrix& x_norm, std::span<const double> y_norm,
             ReferenceDensity rho = {}, unsigned threads = 1);

  const DensityBasis& basis() const { return *basis_; }
  std::size_t rows() const { return static_cast<std::size_t>(psi_.rows()); }
  const Eigen::MatrixXd& psi() const { return psi_; }     // n x npsi
  const Eigen::MatrixXd& phi_y() const { return phi_; }   // n x ny
  const PointMatrix& x_norm() const { return x_; }
  const std::vector<double>& y_norm() const { return y_; }
  const ReferenceDensity& rho() const { return rho_; }
  /// (1/n) sum_i r_i psi_i' with r_i = integral of phi(y) rho(x_i, y).
  const Eigen::MatrixXd& rho_moment() const { return rho_moment_; }
  /// (1/n) sum_i (integral of rho(x_i, y)) psi_i, the offset's rho term.
  const Vector& offset_moment() const { return offset_moment_; }
  unsigned threads() const { return threads_; }

  /// Parameter count of each criterion.
  std::size_t parameter_count(FitMode mode) const;

 private:
  const DensityBasis* basis_;
  PointMatrix x_;
  std::vector<double> y_;
  Eigen::MatrixXd psi_, phi_;
  ReferenceDensity rho_;
  Eigen::MatrixXd rho_moment_;
  Vector offset_moment_;
  unsigned threads_;
};

/// -(1/n) sum {eta(x_i,y_i) - log int e^eta} + (lambda/2) J, quadrature in y.
CriterionValue criterion_likelihood(const Vector& coeffs, const FitProblem& prob, double lambda);

/// (1/n) sum {e^{-eta_i} + int eta rho} + (lambda/2) J. The parameter
/// vector is vec(C) followed by an offset gamma on psi(x) that is constant
/// in y; gamma cancels in the fitted density.
CriterionValue criterion_pseudo(const Vector& coeffs, const FitProblem& prob, double lambda);
/// Same criterion with the rho integral recomputed row by row.
CriterionValue criterion_pseudo_uncached(const Vector& coeffs, const FitProblem& prob, double lambda);

/// Exact Hessian of either criterion.
Eigen::MatrixXd criterion_hessian(FitMode mode, const Vector& coeffs, const FitProblem& prob,
                                  double lambda);

/// Piecewise-linear conditional CDF on a fine table over the domain.
class ConditionalDistribution {
 public:
  ConditionalDistribution(std::vector<double> grid, std::vector<double> cdf, Interval domain);

  Interval domain() const { return domain_; }
  double cdf(double y) const;
  /// Exact CRPS of the piecewise-linear CDF against an observation.
  double crps(double y) const;
  Cdf as_cdf() const;

 private:
  std::vector<double> t_;  // original units
  std::vector<double> F_;
  Interval domain_;
};

class DensityModel {
 public:
  DensityModel(DensityBasis basis, Vector coefficients, double lambda, Interval domain,
               std::vector<Interval> x_ranges, FitMode mode);

  const DensityBasis& basis() const { return basis_; }
  const Vector& coefficients() const { return coeffs_; }
  double lambda() const { return lambda_; }
  Interval domain() const { return domain_; }
  const std::vector<Interval>& x_ranges() const { return x_ranges_; }
  FitMode mode() const { return mode_; }
  /// Main quadrature in original response units.
  QuadratureRule quad() const;

  /// Maps x into [0,1]^d; sets *clamped when any coordinate was outside.
  std::vector<double> normalize_x(std::span<const double> x, bool* clamped = nullptr) const;

  double eta(std::span<const double> x, double y) const;
  double cond_density(std::span<const double> x, double y, bool* clamped = nullptr) const;
  /// Density at many responses for one x; normalizes once.
  std::vector<double> cond_density(std::span<const double> x, std::span<const double> ys,
                                   bool* clamped = nullptr) const;
  double cond_cdf(std::span<const double> x, double y, bool* clamped = nullptr) const;
  ConditionalDistribution distribution(std::span<const double> x, bool* clamped = nullptr) const;
  CdfFamily cdf_family() const;
  DensityFamily density_family() const;

  /// J(eta) of the fitted coefficients.
  double roughness() const;

 private:
  Eigen::MatrixXd coefficient_matrix() const;
  Vector response_weights(std::span<const double> x, bool* clamped) const;

  DensityBasis basis_;
  Vector coeffs_;
  double lambda_;
  Interval domain_;
  std::vector<Interval> x_ranges_;
  FitMode mode_;
  Eigen::MatrixXd table_phi_;
  std::vector<double> table_w_;
  std::vector<double> table_edges_;
  std::size_t table_per_edge_ = 0;
};

/// 8 log-spaced values from 1e-6 to 10.
std::vector<double> default_lambda_grid();

struct FitConfig {
  BasisConfig basis;
  FitMode mode = FitMode::likelihood;
  /// Pseudo mode only; the marginal reference needs the response main effect.
  PseudoReference reference = PseudoReference::uniform;
  /// A single value, or a grid selected by held-out CRPS.
  std::vector<double> lambdas = default_lambda_grid();
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
  MinimizeOptions optimizer;
  /// Response domain; required.
  Interval domain;
  /// Defaults to the observed covariate ranges widened by 1%.
  std::optional<std::vector<Interval>> x_ranges;
  unsigned threads = 1;
};

struct FitReport {
  double criterion = 0.0;
  double criterion_at_zero = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Newton polishing was needed after the quasi-Newton phase.
  bool newton_polish = false;
  double lambda = 0.0;
  std::vector<double> lambda_path;
  std::vector<double> validation_crps;
  std::vector<std::string> warnings;
};

struct FitResult {
  DensityModel model;
  FitReport report;
};

FitResult fit_density(const Dataset& reduced, const FitConfig& cfg);

}  // namespace csp
