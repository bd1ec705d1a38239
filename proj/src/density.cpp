#include "csp/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

namespace csp {

namespace {

constexpr double kKnotMergeTol = 1e-4;
constexpr std::size_t kTableSubpanels = 16;
constexpr std::size_t kTableNodes = 8;
constexpr std::size_t kChunk = 128;
constexpr double kMaxPanelsPerUnit = 16.0;
constexpr double kReferenceLambda = 1e-4;

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

struct Metric {
  Eigen::MatrixXd gram;
  Eigen::MatrixXd rough;
};

// L2 Gram and roughness of the first `keep` basis functions (minus
// `center`, if given) in a coordinate where every knot interval has the
// same length 1/M.
Metric uniformized_metric(const BSplineBasis& b, std::size_t keep, const std::vector<double>* center) {
  const auto edges = b.breakpoints();
  const double M = static_cast<double>(edges.size() - 1);
  Metric m{Eigen::MatrixXd::Zero(keep, keep), Eigen::MatrixXd::Zero(keep, keep)};
  Vector v(b.size()), d2(b.size());
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const double h = edges[i + 1] - edges[i];
    const auto gl = QuadratureRule::gauss_legendre(4, {edges[i], edges[i + 1]});
    for (std::size_t k = 0; k < gl.size(); ++k) {
      b.eval(gl.nodes[k], {v.data(), b.size()}, 0);
      b.eval(gl.nodes[k], {d2.data(), b.size()}, 2);
      Vector f = v.head(keep);
      if (center) f -= Eigen::Map<const Vector>(center->data(), keep);
      Vector g = d2.head(keep);
      m.gram.noalias() += (gl.weights[k] / (h * M)) * f * f.transpose();
      m.rough.noalias() += (gl.weights[k] * std::pow(h * M, 3)) * g * g.transpose();
    }
  }
  return m;
}

std::vector<double> quantile_knots(std::vector<double> v, std::size_t distinct) {
  std::sort(v.begin(), v.end());
  std::vector<double> knots;
  double prev = 0.0;
  for (std::size_t k = 1; k + 1 < distinct; ++k) {
    double pos = static_cast<double>(k) / static_cast<double>(distinct - 1) * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    double q = v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    if (q > prev + kKnotMergeTol && q < 1.0 - kKnotMergeTol) {
      knots.push_back(q);
      prev = q;
    }
  }
  return knots;
}

Eigen::Map<const Eigen::MatrixXd> coef_matrix(const Vector& coeffs, const DensityBasis& b) {
  return {coeffs.data(), static_cast<Eigen::Index>(b.y_size()), static_cast<Eigen::Index>(b.psi_size())};
}

void check_size(const Vector& coeffs, std::size_t expected, const char* who) {
  if (static_cast<std::size_t>(coeffs.size()) != expected)
    throw DomainError(std::string(who) + ": coefficient vector has the wrong length");
  if (!coeffs.allFinite()) throw DomainError(std::string(who) + ": non-finite coefficients");
}

[[noreturn]] void non_finite(const char* who, const char* term, std::size_t row) {
  std::ostringstream os;
  os << who << ": non-finite " << term << " at row " << row;
  throw NumericalError(os.str());
}

struct Partial {
  double value = 0.0;
  Eigen::MatrixXd grad;
  Vector grad_offset;
};

// Runs body over fixed row chunks and sums partials in chunk order, so the
// result does not depend on the thread count.
Partial reduce_chunks(std::size_t rows, unsigned threads, std::size_t ny, std::size_t npsi, bool offset,
                      const std::function<void(std::size_t, std::size_t, Partial&)>& body) {
  const std::size_t chunks = (rows + kChunk - 1) / kChunk;
  std::vector<Partial> parts(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Partial& p = parts[c];
    p.grad = Eigen::MatrixXd::Zero(ny, npsi);
    if (offset) p.grad_offset = Vector::Zero(npsi);
    body(c * kChunk, std::min(rows, (c + 1) * kChunk), p);
  });
  Partial total;
  total.grad = Eigen::MatrixXd::Zero(ny, npsi);
  if (offset) total.grad_offset = Vector::Zero(npsi);
  for (const auto& p : parts) {
    total.value += p.value;
    total.grad += p.grad;
    if (offset) total.grad_offset += p.grad_offset;
  }
  return total;
}

double pseudo_rho_term(const Vector& coeffs, const FitProblem& prob, Eigen::MatrixXd* gC, Vector* gOff) {
  const auto& b = prob.basis();
  auto C = coef_matrix(coeffs, b);
  Eigen::Map<const Vector> gamma(coeffs.data() + b.coefficient_count(), static_cast<Eigen::Index>(b.psi_size()));
  if (gC) *gC += prob.rho_moment();
  if (gOff) *gOff += prob.offset_moment();
  return (C.array() * prob.rho_moment().array()).sum() + gamma.dot(prob.offset_moment());
}

}  // namespace

const char* to_string(FitMode m) { return m == FitMode::likelihood ? "likelihood" : "pseudo"; }

FitMode parse_fit_mode(const std::string& s) {
  if (s == "likelihood") return FitMode::likelihood;
  if (s == "pseudo") return FitMode::pseudo;
  throw DomainError("unknown fit mode '" + s + "'");
}

const char* to_string(PseudoReference r) { return r == PseudoReference::uniform ? "uniform" : "marginal"; }

PseudoReference parse_pseudo_reference(const std::string& s) {
  if (s == "uniform") return PseudoReference::uniform;
  if (s == "marginal") return PseudoReference::marginal;
  throw DomainError("unknown pseudo-likelihood reference '" + s + "'");
}

BasisConfig BasisConfig::defaults(std::size_t dims) {
  BasisConfig cfg;
  cfg.included_terms.push_back({});
  for (std::size_t q = 0; q < dims; ++q) cfg.included_terms.push_back({q});
  return cfg;
}

void BasisConfig::validate(std::size_t dims) const {
  if (y_knots < 4) throw DomainError("BasisConfig: y_knots must be >= 4");
  if (x_knots_per_dim < 3) throw DomainError("BasisConfig: x_knots_per_dim must be >= 3");
  if (included_terms.empty()) throw DomainError("BasisConfig: no terms");
  for (std::size_t i = 0; i < included_terms.size(); ++i) {
    const auto& t = included_terms[i];
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (t[k] >= dims) throw DomainError("BasisConfig: term refers to a missing covariate");
      if (k > 0 && t[k] <= t[k - 1]) throw DomainError("BasisConfig: term dims must increase");
    }
    for (std::size_t j = 0; j < i; ++j)
      if (included_terms[j] == t) throw DomainError("BasisConfig: duplicate term");
  }
}

DensityBasis::DensityBasis(BasisConfig cfg, std::size_t dims, std::vector<double> y_interior,
                           std::vector<std::vector<double>> x_interior)
    : cfg_(std::move(cfg)), dims_(dims) {
  cfg_.validate(dims);
  if (x_interior.size() != dims) throw DomainError("DensityBasis: one knot list per covariate required");
  y_basis_ = BSplineBasis(std::move(y_interior), {0.0, 1.0});
  ny_ = y_basis_.size() - 1;
  for (auto& k : x_interior) x_bases_.emplace_back(std::move(k), Interval{0.0, 1.0});

  // Knot panels, each cut into pieces no wider than 1/16, 4 nodes per piece.
  const auto knots = y_basis_.breakpoints();
  std::vector<double> edges{knots.front()};
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    const auto pieces = static_cast<std::size_t>(std::ceil((knots[i + 1] - knots[i]) * kMaxPanelsPerUnit - 1e-9));
    for (std::size_t s = 1; s <= std::max<std::size_t>(1, pieces); ++s)
      edges.push_back(knots[i] + (knots[i + 1] - knots[i]) * static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(1, pieces)));
  }
  quad_ = QuadratureRule::composite_gauss_legendre(edges, 4);

  y_mean_.assign(ny_, 0.0);
  Vector v(y_basis_.size());
  for (std::size_t m = 0; m < quad_.size(); ++m) {
    y_basis_.eval(quad_.nodes[m], {v.data(), y_basis_.size()});
    for (std::size_t j = 0; j < ny_; ++j) y_mean_[j] += quad_.weights[m] * v[static_cast<Eigen::Index>(j)];
  }
  quad_phi_.resize(static_cast<Eigen::Index>(quad_.size()), static_cast<Eigen::Index>(ny_));
  for (std::size_t m = 0; m < quad_.size(); ++m) quad_phi_.row(static_cast<Eigen::Index>(m)) = y_features(quad_.nodes[m]).transpose();

  Metric ym = uniformized_metric(y_basis_, ny_, &y_mean_);
  gyy_ = std::move(ym.gram);
  ryy_ = std::move(ym.rough);

  std::vector<Metric> xm;
  for (const auto& xb : x_bases_) xm.push_back(uniformized_metric(xb, xb.size() - 1, nullptr));

  std::size_t offset = 0;
  for (const auto& dims_t : cfg_.included_terms) {
    TermBlock blk;
    blk.dims = dims_t;
    blk.offset = offset;
    blk.gram = Eigen::MatrixXd::Ones(1, 1);
    blk.roughness = Eigen::MatrixXd::Zero(1, 1);
    // Tensor product with the first listed dimension fastest.
    for (std::size_t q : dims_t) {
      const Metric& mq = xm[q];
      Eigen::MatrixXd gram = kron(mq.gram, blk.gram);
      Eigen::MatrixXd rough = kron(mq.gram, blk.roughness) + kron(mq.rough, blk.gram);
      blk.gram = std::move(gram);
      blk.roughness = std::move(rough);
    }
    blk.size = static_cast<std::size_t>(blk.gram.rows());
    offset += blk.size;
    terms_.push_back(std::move(blk));
  }
  npsi_ = offset;
}

DensityBasis DensityBasis::from_data(const BasisConfig& cfg, const PointMatrix& x_norm,
                                     std::span<const double> y_norm) {
  if (y_norm.empty()) throw DomainError("DensityBasis: no data");
  std::vector<std::vector<double>> xk;
  for (Eigen::Index q = 0; q < x_norm.cols(); ++q) {
    std::vector<double> col(static_cast<std::size_t>(x_norm.rows()));
    for (Eigen::Index r = 0; r < x_norm.rows(); ++r) col[static_cast<std::size_t>(r)] = x_norm(r, q);
    xk.push_back(quantile_knots(std::move(col), cfg.x_knots_per_dim));
  }
  return DensityBasis(cfg, static_cast<std::size_t>(x_norm.cols()),
                      quantile_knots({y_norm.begin(), y_norm.end()}, cfg.y_knots), std::move(xk));
}

void DensityBasis::y_features(double y, std::span<double> out) const {
  std::array<double, 4> local{};
  y_basis_.eval_local(y, local);
  const std::size_t first = y_basis_.first_active(y);
  for (std::size_t j = 0; j < ny_; ++j) out[j] = -y_mean_[j];
  for (std::size_t k = 0; k < 4; ++k)
    if (first + k < ny_) out[first + k] += local[k];
}

Vector DensityBasis::y_features(double y) const {
  Vector v(static_cast<Eigen::Index>(ny_));
  y_features(y, {v.data(), ny_});
  return v;
}

void DensityBasis::psi(std::span<const double> x, std::span<double> out) const {
  std::vector<Vector> per_dim(dims_);
  for (std::size_t q = 0; q < dims_; ++q) per_dim[q] = x_bases_[q].eval(x[q]).head(x_bases_[q].size() - 1);
  for (const auto& blk : terms_) {
    Vector t = Vector::Ones(1);
    for (std::size_t q : blk.dims) {
      const Vector& f = per_dim[q];
      Vector next(f.size() * t.size());
      for (Eigen::Index i = 0; i < f.size(); ++i) next.segment(i * t.size(), t.size()) = f[i] * t;
      t = std::move(next);
    }
    std::copy(t.data(), t.data() + t.size(), out.begin() + static_cast<std::ptrdiff_t>(blk.offset));
  }
}

Vector DensityBasis::psi(std::span<const double> x) const {
  Vector v(static_cast<Eigen::Index>(npsi_));
  psi(x, {v.data(), npsi_});
  return v;
}

double DensityBasis::roughness(const Eigen::MatrixXd& C) const {
  double J = 0.0;
  for (const auto& blk : terms_) {
    auto Ct = C.middleCols(static_cast<Eigen::Index>(blk.offset), static_cast<Eigen::Index>(blk.size));
    J += (Ct.transpose() * ryy_ * Ct * blk.gram).trace();
    J += (Ct.transpose() * gyy_ * Ct * blk.roughness).trace();
  }
  return J;
}

void DensityBasis::add_roughness_gradient(const Eigen::MatrixXd& C, double scale, Eigen::MatrixXd& grad) const {
  for (const auto& blk : terms_) {
    const auto off = static_cast<Eigen::Index>(blk.offset), len = static_cast<Eigen::Index>(blk.size);
    auto Ct = C.middleCols(off, len);
    grad.middleCols(off, len) += (2.0 * scale) * (ryy_ * Ct * blk.gram + gyy_ * Ct * blk.roughness);
  }
}

Eigen::MatrixXd DensityBasis::penalty_matrix() const {
  const auto p = static_cast<Eigen::Index>(coefficient_count());
  const auto ny = static_cast<Eigen::Index>(ny_);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(p, p);
  for (const auto& blk : terms_) {
    const auto off = static_cast<Eigen::Index>(blk.offset) * ny;
    const auto len = static_cast<Eigen::Index>(blk.size) * ny;
    P.block(off, off, len, len) = kron(blk.gram, ryy_) + kron(blk.roughness, gyy_);
  }
  return P;
}

Eigen::MatrixXd DensityBasis::psi_roughness() const {
  const auto n = static_cast<Eigen::Index>(npsi_);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n, n);
  for (const auto& blk : terms_) {
    const auto off = static_cast<Eigen::Index>(blk.offset), len = static_cast<Eigen::Index>(blk.size);
    R.block(off, off, len, len) = blk.roughness;
  }
  return R;
}

FitProblem::FitProblem(const DensityBasis& basis, const PointMatrix& x_norm, std::span<const double> y_norm,
                       ReferenceDensity rho, unsigned threads)
    : basis_(&basis), x_(x_norm), y_(y_norm.begin(), y_norm.end()), rho_(std::move(rho)), threads_(std::max(1u, threads)) {
  const auto n = static_cast<Eigen::Index>(y_.size());
  if (n == 0) throw DomainError("FitProblem: no rows");
  if (x_.rows() != n || static_cast<std::size_t>(x_.cols()) != basis.dims())
    throw DomainError("FitProblem: covariate shape mismatch");
  const auto ny = static_cast<Eigen::Index>(basis.y_size()), np = static_cast<Eigen::Index>(basis.psi_size());
  psi_.resize(n, np);
  phi_.resize(n, ny);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(y_[static_cast<std::size_t>(i)] >= 0.0 && y_[static_cast<std::size_t>(i)] <= 1.0))
      throw DomainError("FitProblem: response outside the normalized domain");
    psi_.row(i) = basis.psi(row_span(x_, i)).transpose();
    phi_.row(i) = basis.y_features(y_[static_cast<std::size_t>(i)]).transpose();
  }
  if (!rho_) rho_ = [](std::span<const double>, double) { return 1.0; };
  const auto& q = basis.quad();
  rho_moment_ = Eigen::MatrixXd::Zero(ny, np);
  offset_moment_ = Vector::Zero(np);
  Vector wr(static_cast<Eigen::Index>(q.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < q.size(); ++m) wr[static_cast<Eigen::Index>(m)] = q.weights[m] * rho_(row_span(x_, i), q.nodes[m]);
    Vector r = basis.quad_features().transpose() * wr;
    rho_moment_.noalias() += r * psi_.row(i);
    offset_moment_ += wr.sum() * psi_.row(i).transpose();
  }
  rho_moment_ /= static_cast<double>(n);
  offset_moment_ /= static_cast<double>(n);
}

std::size_t FitProblem::parameter_count(FitMode mode) const {
  return basis_->coefficient_count() + (mode == FitMode::pseudo ? basis_->psi_size() : 0);
}

CriterionValue criterion_likelihood(const Vector& coeffs, const FitProblem& prob, double lambda) {
  const auto& b = prob.basis();
  check_size(coeffs, b.coefficient_count(), "criterion_likelihood");
  auto C = coef_matrix(coeffs, b);
  const auto& Phi = b.quad_features();
  const auto& w = b.quad().weights;
  const std::size_t n = prob.rows();
  Partial tot = reduce_chunks(n, prob.threads(), b.y_size(), b.psi_size(), false,
                              [&](std::size_t r0, std::size_t r1, Partial& p) {
    const auto m = static_cast<Eigen::Index>(r1 - r0);
    auto Psi = prob.psi().middleRows(static_cast<Eigen::Index>(r0), m);
    Eigen::MatrixXd A = C * Psi.transpose();  // ny x m
    Eigen::MatrixXd H = Phi * A;              // Q x m
    Eigen::MatrixXd Ga(A.rows(), m);
    Vector prob_w(H.rows());
    for (Eigen::Index c = 0; c < m; ++c) {
      const double mx = H.col(c).maxCoeff();
      double s = 0.0;
      for (Eigen::Index k = 0; k < H.rows(); ++k) {
        prob_w[k] = w[static_cast<std::size_t>(k)] * std::exp(H(k, c) - mx);
        s += prob_w[k];
      }
      const double logZ = mx + std::log(s);
      const auto row = static_cast<Eigen::Index>(r0) + c;
      const double eta = prob.phi_y().row(row).dot(A.col(c));
      if (!std::isfinite(logZ)) non_finite("criterion_likelihood", "log normalizer", static_cast<std::size_t>(row));
      if (!std::isfinite(eta)) non_finite("criterion_likelihood", "eta", static_cast<std::size_t>(row));
      p.value += logZ - eta;
      Ga.col(c) = Phi.transpose() * (prob_w / s) - prob.phi_y().row(row).transpose();
    }
    p.grad.noalias() += Ga * Psi;
  });
  const double inv = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd Cm = C;
  Eigen::MatrixXd G = tot.grad * inv;
  b.add_roughness_gradient(Cm, 0.5 * lambda, G);
  CriterionValue out;
  out.value = tot.value * inv + 0.5 * lambda * b.roughness(Cm);
  if (!std::isfinite(out.value)) non_finite("criterion_likelihood", "penalty", 0);
  out.gradient = Eigen::Map<const Vector>(G.data(), G.size());
  return out;
}

namespace {

CriterionValue pseudo_impl(const Vector& coeffs, const FitProblem& prob, double lambda, bool cached) {
  const auto& b = prob.basis();
  const char* who = cached ? "criterion_pseudo" : "criterion_pseudo_uncached";
  check_size(coeffs, prob.parameter_count(FitMode::pseudo), who);
  auto C = coef_matrix(coeffs, b);
  const auto np = static_cast<Eigen::Index>(b.psi_size());
  Eigen::Map<const Vector> gamma(coeffs.data() + b.coefficient_count(), np);
  const auto& Phi = b.quad_features();
  const auto& q = b.quad();
  const std::size_t n = prob.rows();
  Partial tot = reduce_chunks(n, prob.threads(), b.y_size(), b.psi_size(), true,
                              [&](std::size_t r0, std::size_t r1, Partial& p) {
    const auto m = static_cast<Eigen::Index>(r1 - r0);
    auto Psi = prob.psi().middleRows(static_cast<Eigen::Index>(r0), m);
    Eigen::MatrixXd A = C * Psi.transpose();
    Vector off = Psi * gamma;
    Eigen::MatrixXd Ga(A.rows(), m);
    Vector go(m);
    Vector wr(static_cast<Eigen::Index>(q.size()));
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto row = static_cast<Eigen::Index>(r0) + c;
      const double eta = prob.phi_y().row(row).dot(A.col(c)) + off[c];
      const double e = std::exp(-eta);
      if (!std::isfinite(e)) non_finite(who, "exp(-eta)", static_cast<std::size_t>(row));
      p.value += e;
      Ga.col(c) = -e * prob.phi_y().row(row).transpose();
      go[c] = -e;
      if (!cached) {
        for (std::size_t k = 0; k < q.size(); ++k)
          wr[static_cast<Eigen::Index>(k)] = q.weights[k] * prob.rho()(row_span(prob.x_norm(), row), q.nodes[k]);
        Vector r = Phi.transpose() * wr;
        const double mass = wr.sum();
        p.value += r.dot(A.col(c)) + mass * off[c];
        Ga.col(c) += r;
        go[c] += mass;
      }
    }
    p.grad.noalias() += Ga * Psi;
    p.grad_offset.noalias() += Psi.transpose() * go;
  });
  const double inv = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd G = tot.grad * inv;
  Vector Go = tot.grad_offset * inv;
  double value = tot.value * inv;
  if (cached) value += pseudo_rho_term(coeffs, prob, &G, &Go);
  Eigen::MatrixXd Cm = C;
  b.add_roughness_gradient(Cm, 0.5 * lambda, G);
  const Eigen::MatrixXd Rpsi = b.psi_roughness();
  value += 0.5 * lambda * (b.roughness(Cm) + gamma.dot(Rpsi * gamma));
  Go += lambda * (Rpsi * gamma);
  if (!std::isfinite(value)) non_finite(who, "penalty", 0);
  CriterionValue out;
  out.value = value;
  out.gradient.resize(static_cast<Eigen::Index>(prob.parameter_count(FitMode::pseudo)));
  out.gradient.head(G.size()) = Eigen::Map<const Vector>(G.data(), G.size());
  out.gradient.tail(np) = Go;
  return out;
}

}  // namespace

CriterionValue criterion_pseudo(const Vector& coeffs, const FitProblem& prob, double lambda) {
  return pseudo_impl(coeffs, prob, lambda, true);
}

CriterionValue criterion_pseudo_uncached(const Vector& coeffs, const FitProblem& prob, double lambda) {
  return pseudo_impl(coeffs, prob, lambda, false);
}

Eigen::MatrixXd criterion_hessian(FitMode mode, const Vector& coeffs, const FitProblem& prob, double lambda) {
  const auto& b = prob.basis();
  const std::size_t p = prob.parameter_count(mode);
  check_size(coeffs, p, "criterion_hessian");
  auto C = coef_matrix(coeffs, b);
  const auto ny = static_cast<Eigen::Index>(b.y_size());
  const auto np = static_cast<Eigen::Index>(b.psi_size());
  const auto pc = static_cast<Eigen::Index>(b.coefficient_count());
  const auto& Phi = b.quad_features();
  const auto& w = b.quad().weights;
  const auto n = static_cast<Eigen::Index>(prob.rows());
  Eigen::MatrixXd Hs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector psi = prob.psi().row(i).transpose();
    Vector a = C * psi;
    if (mode == FitMode::likelihood) {
      Vector h = Phi * a;
      const double mx = h.maxCoeff();
      Vector pr(h.size());
      for (Eigen::Index k = 0; k < h.size(); ++k) pr[k] = w[static_cast<std::size_t>(k)] * std::exp(h[k] - mx);
      pr /= pr.sum();
      Vector mean = Phi.transpose() * pr;
      Eigen::MatrixXd Ha = Phi.transpose() * pr.asDiagonal() * Phi - mean * mean.transpose();
      Hs.topLeftCorner(pc, pc) += kron(psi * psi.transpose(), Ha);
    } else {
      Eigen::Map<const Vector> gamma(coeffs.data() + pc, np);
      const double e = std::exp(-(prob.phi_y().row(i).dot(a) + gamma.dot(psi)));
      Vector z(static_cast<Eigen::Index>(p));
      Vector phi = prob.phi_y().row(i).transpose();
      for (Eigen::Index t = 0; t < np; ++t) z.segment(t * ny, ny) = psi[t] * phi;
      z.tail(np) = psi;
      Hs.noalias() += e * z * z.transpose();
    }
  }
  Hs /= static_cast<double>(n);
  Hs.topLeftCorner(pc, pc) += lambda * b.penalty_matrix();
  if (mode == FitMode::pseudo) Hs.bottomRightCorner(np, np) += lambda * b.psi_roughness();
  return Hs;
}

ConditionalDistribution::ConditionalDistribution(std::vector<double> grid, std::vector<double> cdf, Interval domain)
    : t_(std::move(grid)), F_(std::move(cdf)), domain_(domain) {
  if (t_.size() < 2 || t_.size() != F_.size()) throw DomainError("ConditionalDistribution: bad table");
}

double ConditionalDistribution::cdf(double y) const {
  if (y <= t_.front()) return 0.0;
  if (y >= t_.back()) return 1.0;
  auto it = std::upper_bound(t_.begin(), t_.end(), y);
  const std::size_t k = static_cast<std::size_t>(it - t_.begin());
  const double u = (y - t_[k - 1]) / (t_[k] - t_[k - 1]);
  return F_[k - 1] + u * (F_[k] - F_[k - 1]);
}

double ConditionalDistribution::crps(double y) const {
  // Integral of a squared linear function over a segment.
  auto sq = [](double h, double a, double b) { return h * (a * a + a * b + b * b) / 3.0; };
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < t_.size(); ++k) {
    const double t0 = t_[k], t1 = t_[k + 1], F0 = F_[k], F1 = F_[k + 1];
    if (t1 <= y) {
      total += sq(t1 - t0, F0, F1);
    } else if (t0 >= y) {
      total += sq(t1 - t0, 1.0 - F0, 1.0 - F1);
    } else {
      const double Fy = F0 + (y - t0) / (t1 - t0) * (F1 - F0);
      total += sq(y - t0, F0, Fy) + sq(t1 - y, 1.0 - Fy, 1.0 - F1);
    }
  }
  // F is 0 below the domain and 1 above it.
  if (y < t_.front()) total += t_.front() - y;
  if (y > t_.back()) total += y - t_.back();
  return total;
}

Cdf ConditionalDistribution::as_cdf() const {
  auto self = std::make_shared<ConditionalDistribution>(*this);
  return Cdf{[self](double y) { return self->cdf(y); }, domain_, t_};
}

DensityModel::DensityModel(DensityBasis basis, Vector coefficients, double lambda, Interval domain,
                           std::vector<Interval> x_ranges, FitMode mode)
    : basis_(std::move(basis)), coeffs_(std::move(coefficients)), lambda_(lambda), domain_(domain),
      x_ranges_(std::move(x_ranges)), mode_(mode) {
  if (!(domain_.hi > domain_.lo)) throw DomainError("DensityModel: degenerate response domain");
  if (x_ranges_.size() != basis_.dims()) throw DomainError("DensityModel: one covariate range per dimension required");
  for (const auto& r : x_ranges_)
    if (!(r.hi > r.lo)) throw DomainError("DensityModel: degenerate covariate range");
  const std::size_t expected = basis_.coefficient_count() + (mode == FitMode::pseudo ? basis_.psi_size() : 0);
  if (static_cast<std::size_t>(coeffs_.size()) != expected) throw DomainError("DensityModel: coefficient count mismatch");

  // Fine table for the CDF: each knot panel split into equal subpanels with
  // an 8-point Gauss-Legendre rule on each.
  const auto knots = basis_.y_basis().breakpoints();
  table_edges_.clear();
  for (std::size_t i = 0; i + 1 < knots.size(); ++i)
    for (std::size_t s = 0; s < kTableSubpanels; ++s)
      table_edges_.push_back(knots[i] + (knots[i + 1] - knots[i]) * static_cast<double>(s) / kTableSubpanels);
  table_edges_.push_back(1.0);
  table_per_edge_ = kTableNodes;
  const auto rule = QuadratureRule::composite_gauss_legendre(table_edges_, kTableNodes);
  table_w_ = rule.weights;
  table_phi_.resize(static_cast<Eigen::Index>(rule.size()), static_cast<Eigen::Index>(basis_.y_size()));
  for (std::size_t m = 0; m < rule.size(); ++m)
    table_phi_.row(static_cast<Eigen::Index>(m)) = basis_.y_features(rule.nodes[m]).transpose();
}

QuadratureRule DensityModel::quad() const {
  QuadratureRule q = basis_.quad();
  const double L = domain_.length();
  for (auto& v : q.nodes) v = domain_.lo + L * v;
  for (auto& w : q.weights) w *= L;
  return q;
}

Eigen::MatrixXd DensityModel::coefficient_matrix() const {
  return coef_matrix(coeffs_, basis_);
}

std::vector<double> DensityModel::normalize_x(std::span<const double> x, bool* clamped) const {
  if (x.size() != x_ranges_.size()) throw DomainError("DensityModel: covariate dimension mismatch");
  std::vector<double> out(x.size());
  bool c = false;
  for (std::size_t q = 0; q < x.size(); ++q) {
    const auto& r = x_ranges_[q];
    if (!r.contains(x[q])) c = true;
    out[q] = (r.clamp(x[q]) - r.lo) / r.length();
  }
  if (clamped) *clamped = c;
  return out;
}

double DensityModel::eta(std::span<const double> x, double y) const {
  const auto xn = normalize_x(x);
  const double yn = (domain_.clamp(y) - domain_.lo) / domain_.length();
  return basis_.y_features(yn).dot(coefficient_matrix() * basis_.psi(xn));
}

double DensityModel::cond_density(std::span<const double> x, double y, bool* clamped) const {
  return cond_density(x, std::span<const double>(&y, 1), clamped)[0];
}

std::vector<double> DensityModel::cond_density(std::span<const double> x, std::span<const double> ys,
                                               bool* clamped) const {
  const auto xn = normalize_x(x, clamped);
  const Vector a = coefficient_matrix() * basis_.psi(xn);
  // Normalize on the CDF table so density and CDF agree.
  const Vector h = table_phi_ * a;
  const double mx = h.maxCoeff();
  double Z = 0.0;
  for (Eigen::Index m = 0; m < h.size(); ++m) Z += table_w_[static_cast<std::size_t>(m)] * std::exp(h[m] - mx);
  const double shift = mx + std::log(Z) + std::log(domain_.length());
  std::vector<double> out(ys.size(), 0.0);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (!domain_.contains(ys[i])) continue;
    const double yn = (ys[i] - domain_.lo) / domain_.length();
    out[i] = std::exp(basis_.y_features(yn).dot(a) - shift);
  }
  return out;
}

ConditionalDistribution DensityModel::distribution(std::span<const double> x, bool* clamped) const {
  const auto xn = normalize_x(x, clamped);
  Vector a = coefficient_matrix() * basis_.psi(xn);
  Vector h = table_phi_ * a;
  const double mx = h.maxCoeff();
  const std::size_t panels = table_edges_.size() - 1;
  std::vector<double> F(panels + 1, 0.0), t(panels + 1);
  for (std::size_t s = 0; s < panels; ++s) {
    double mass = 0.0;
    for (std::size_t k = 0; k < table_per_edge_; ++k) {
      const std::size_t m = s * table_per_edge_ + k;
      mass += table_w_[m] * std::exp(h[static_cast<Eigen::Index>(m)] - mx);
    }
    F[s + 1] = F[s] + mass;
  }
  const double total = F.back();
  for (std::size_t s = 0; s <= panels; ++s) {
    F[s] /= total;
    t[s] = domain_.lo + domain_.length() * table_edges_[s];
  }
  F.back() = 1.0;
  t.front() = domain_.lo;
  t.back() = domain_.hi;
  return ConditionalDistribution(std::move(t), std::move(F), domain_);
}

double DensityModel::cond_cdf(std::span<const double> x, double y, bool* clamped) const {
  return distribution(x, clamped).cdf(y);
}

CdfFamily DensityModel::cdf_family() const {
  auto self = std::make_shared<DensityModel>(*this);
  return [self](std::span<const double> x) { return self->distribution(x).as_cdf(); };
}

DensityFamily DensityModel::density_family() const {
  auto self = std::make_shared<DensityModel>(*this);
  return [self](std::span<const double> x) -> DensityFunction {
    std::vector<double> xc(x.begin(), x.end());
    return [self, xc](double y) { return self->cond_density(xc, y); };
  };
}

double DensityModel::roughness() const { return basis_.roughness(coefficient_matrix()); }

std::vector<double> default_lambda_grid() {
  std::vector<double> g(8);
  const double lo = std::log(1e-6), hi = std::log(10.0);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / 7.0);
  g.front() = 1e-6;
  g.back() = 10.0;
  return g;
}

namespace {

struct SingleFit {
  Vector coeffs;
  double value = 0.0;
  double value_at_zero = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool newton = false;
};

CriterionValue evaluate(FitMode mode, const Vector& c, const FitProblem& prob, double lambda) {
  return mode == FitMode::likelihood ? criterion_likelihood(c, prob, lambda) : criterion_pseudo(c, prob, lambda);
}

SingleFit fit_single(const FitProblem& prob, FitMode mode, double lambda, const MinimizeOptions& opts) {
  const auto p = static_cast<Eigen::Index>(prob.parameter_count(mode));
  Objective f = [&](const Vector& c) { return evaluate(mode, c, prob, lambda); };
  SingleFit out;
  out.value_at_zero = f(Vector::Zero(p)).value;
  // Seed the quasi-Newton metric with the exact curvature at the start.
  MinimizeOptions seeded = opts;
  {
    Eigen::MatrixXd H0 = criterion_hessian(mode, Vector::Zero(p), prob, lambda);
    H0.diagonal().array() += 1e-8 * std::max(1.0, H0.diagonal().maxCoeff());
    seeded.initial_inverse_hessian = H0.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    if (!seeded.initial_inverse_hessian.allFinite()) seeded.initial_inverse_hessian.resize(0, 0);
  }
  MinimizeResult r = minimize_bfgs(f, Vector::Zero(p), seeded);
  out.coeffs = std::move(r.x);
  out.value = r.value;
  out.grad_norm = r.grad_norm;
  out.iterations = r.iterations;
  out.converged = r.converged;
  if (out.converged) return out;

  // Newton polishing with a damped exact Hessian.
  out.newton = true;
  CriterionValue cur = f(out.coeffs);
  for (int it = 0; it < 50 && cur.gradient.norm() > opts.grad_tol; ++it) {
    Eigen::MatrixXd H = criterion_hessian(mode, out.coeffs, prob, lambda);
    double mu = 1e-10 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
    bool moved = false;
    for (int tries = 0; tries < 20 && !moved; ++tries) {
      Eigen::MatrixXd Hd = H;
      Hd.diagonal().array() += mu;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(Hd);
      Vector step = ldlt.solve(-cur.gradient);
      if (ldlt.info() != Eigen::Success || !step.allFinite() || !(step.dot(cur.gradient) < 0.0)) {
        mu *= 10.0;
        continue;
      }
      for (double t = 1.0; t > 1e-8; t *= 0.5) {
        Vector cand = out.coeffs + t * step;
        CriterionValue cv;
        try {
          cv = f(cand);
        } catch (const NumericalError&) {
          continue;
        }
        // Polishing starts near the optimum, where the value carries
        // rounding noise from the penalty's cancellation but the gradient
        // stays accurate, so a smaller gradient also counts as progress.
        if (cv.value <= cur.value + 1e-4 * t * step.dot(cur.gradient) ||
            cv.gradient.norm() < cur.gradient.norm()) {
          out.coeffs = std::move(cand);
          cur = std::move(cv);
          moved = true;
          break;
        }
      }
      if (!moved) mu *= 10.0;
    }
    ++out.iterations;
    if (!moved) break;
  }
  out.value = cur.value;
  out.grad_norm = cur.gradient.norm();
  out.converged = out.grad_norm <= opts.grad_tol;
  return out;
}

}  // namespace

FitResult fit_density(const Dataset& reduced, const FitConfig& cfg) {
  const std::size_t n = reduced.rows();
  if (n == 0) throw DomainError("fit_density: empty reduced set");
  if (!(cfg.domain.hi > cfg.domain.lo)) throw DomainError("fit_density: degenerate response domain");
  if (cfg.lambdas.empty()) throw DomainError("fit_density: no lambda given");
  for (double l : cfg.lambdas)
    if (!(l > 0.0) || !std::isfinite(l)) throw DomainError("fit_density: lambda must be positive");
  if (!(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0))
    throw DomainError("fit_density: holdout fraction must lie in (0, 1)");
  const std::size_t d = reduced.dims();
  cfg.basis.validate(d);

  std::vector<Interval> ranges;
  if (cfg.x_ranges) {
    ranges = *cfg.x_ranges;
    if (ranges.size() != d) throw DomainError("fit_density: one covariate range per dimension required");
  } else {
    for (std::size_t q = 0; q < d; ++q) {
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) col[r] = reduced.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q));
      ranges.push_back(expanded_range(col, 0.01));
    }
  }
  for (const auto& r : ranges)
    if (!(r.hi > r.lo)) throw DomainError("fit_density: degenerate covariate range");

  FitReport report;
  PointMatrix xn(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<double> yn(n);
  std::size_t clamped = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    bool c = false;
    for (std::size_t q = 0; q < d; ++q) {
      const auto qi = static_cast<Eigen::Index>(q);
      const double v = reduced.x(ri, qi);
      if (!ranges[q].contains(v)) c = true;
      xn(ri, qi) = (ranges[q].clamp(v) - ranges[q].lo) / ranges[q].length();
    }
    clamped += c;
    const double y = reduced.y[ri];
    if (!cfg.domain.contains(y)) {
      std::ostringstream os;
      os << "fit_density: response " << y << " at row " << r << " outside the domain [" << cfg.domain.lo << ", "
         << cfg.domain.hi << "]";
      throw DomainError(os.str());
    }
    yn[r] = (y - cfg.domain.lo) / cfg.domain.length();
  }
  if (clamped > 0)
    report.warnings.push_back(std::to_string(clamped) + " rows had covariates outside the given ranges and were clamped");

  DensityBasis basis = DensityBasis::from_data(cfg.basis, xn, yn);
  double lambda = cfg.lambdas.front();

  // Marginal reference: rho(y) = exp(phi(y)'beta) / Z from a response-only
  // fit. Since f is proportional to e^eta rho, beta is folded into the main
  // effect afterwards.
  ReferenceDensity rho;
  Vector beta;
  std::size_t main_col = 0;
  if (cfg.mode == FitMode::pseudo && cfg.reference == PseudoReference::marginal) {
    bool found = false;
    for (std::size_t t = 0; t < basis.term_count() && !found; ++t)
      if (basis.term_dims(t).empty()) {
        main_col = basis.term_offset(t);
        found = true;
      }
    if (!found) throw DomainError("fit_density: the marginal reference needs the response main effect term");
    BasisConfig mc = cfg.basis;
    mc.included_terms = {AnovaTerm{}};
    std::vector<std::vector<double>> xk;
    for (std::size_t q = 0; q < d; ++q) xk.push_back(basis.x_basis(q).interior_knots());
    DensityBasis mb(mc, d, basis.y_basis().interior_knots(), std::move(xk));
    FitProblem mp(mb, xn, yn, {}, cfg.threads);
    beta = fit_single(mp, FitMode::likelihood, kReferenceLambda, cfg.optimizer).coeffs;
    Vector h = mb.quad_features() * beta;
    const double mx = h.maxCoeff();
    double Z = 0.0;
    for (Eigen::Index m = 0; m < h.size(); ++m) Z += mb.quad().weights[static_cast<std::size_t>(m)] * std::exp(h[m] - mx);
    const double logZ = mx + std::log(Z);
    rho = [&basis, beta, logZ](std::span<const double>, double y) {
      return std::exp(basis.y_features(y).dot(beta) - logZ);
    };
  }
  auto absorb = [&](Vector c) {
    if (beta.size() > 0) c.segment(static_cast<Eigen::Index>(main_col * basis.y_size()), beta.size()) += beta;
    return c;
  };

  if (cfg.lambdas.size() > 1) {
    TrainTestSplit split = train_test_split(reduced, 1.0 - cfg.holdout_fraction, cfg.seed);
    if (split.train_rows.empty() || split.test_rows.empty())
      throw DomainError("fit_density: reduced set too small for lambda selection");
    PointMatrix xt(static_cast<Eigen::Index>(split.train_rows.size()), static_cast<Eigen::Index>(d));
    std::vector<double> yt;
    for (std::size_t i = 0; i < split.train_rows.size(); ++i) {
      xt.row(static_cast<Eigen::Index>(i)) = xn.row(static_cast<Eigen::Index>(split.train_rows[i]));
      yt.push_back(yn[split.train_rows[i]]);
    }
    FitProblem prob(basis, xt, yt, rho, cfg.threads);
    double best = std::numeric_limits<double>::infinity();
    for (double l : cfg.lambdas) {
      SingleFit sf = fit_single(prob, cfg.mode, l, cfg.optimizer);
      DensityModel m(basis, absorb(sf.coeffs), l, cfg.domain, ranges, cfg.mode);
      double crps = 0.0;
      for (std::size_t r : split.test_rows)
        crps += m.distribution(row_span(reduced.x, static_cast<Eigen::Index>(r))).crps(reduced.y[static_cast<Eigen::Index>(r)]);
      crps /= static_cast<double>(split.test_rows.size());
      report.lambda_path.push_back(l);
      report.validation_crps.push_back(crps);
      if (crps < best) {
        best = crps;
        lambda = l;
      }
    }
  }

  FitProblem prob(basis, xn, yn, rho, cfg.threads);
  SingleFit sf = fit_single(prob, cfg.mode, lambda, cfg.optimizer);
  report.criterion = sf.value;
  report.criterion_at_zero = sf.value_at_zero;
  report.gradient_norm = sf.grad_norm;
  report.iterations = sf.iterations;
  report.converged = sf.converged;
  report.newton_polish = sf.newton;
  report.lambda = lambda;
  if (!sf.converged) {
    std::ostringstream os;
    os << "optimizer stopped with gradient norm " << sf.grad_norm << " above tolerance " << cfg.optimizer.grad_tol;
    report.warnings.push_back(os.str());
    // With a uniform reference the pseudo criterion has no minimum once every
    // response lies below the reference mean: a steep linear-in-y eta, which
    // the penalty does not see, drives it to minus infinity.
    if (cfg.mode == FitMode::pseudo && sf.coeffs.cwiseAbs().maxCoeff() > 1e4)
      report.warnings.push_back("coefficients diverged; the pseudo criterion looks unbounded on this data, "
                                "try the marginal reference");
  }
  Vector coeffs = absorb(std::move(sf.coeffs));
  return {DensityModel(std::move(basis), std::move(coeffs), lambda, cfg.domain, std::move(ranges), cfg.mode),
          std::move(report)};
}

}  // namespace csp
