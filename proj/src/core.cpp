#include "noisecouple/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace noisecouple {

namespace {

std::string format_interval_message(std::size_t k, double c, double lower, double upper) {
  std::ostringstream os;
  os.precision(17);
  os << "equicorrelation c=" << c << " infeasible for k=" << k << "; valid interval [";
  os.precision(6);
  os << lower << ", " << upper << "]";
  return os.str();
}

void require_k(std::size_t k, std::size_t min_k, std::string_view what) {
  if (k < min_k) {
    throw SpecError(std::string(what) + " requires k >= " + std::to_string(min_k) + ", got " +
                    std::to_string(k));
  }
}

void require_d(std::size_t d) {
  if (d == 0) throw SpecError("noise dimension d must be positive");
}

}  // namespace

FeasibilityError::FeasibilityError(std::size_t k, double c, double lower, double upper)
    : SpecError(format_interval_message(k, c, lower, upper)), c_(c), lower_(lower), upper_(upper) {}

RankError::RankError(std::size_t rank, std::size_t r)
    : SpecError("correlation has numerical rank " + std::to_string(rank) + " > r = " +
                std::to_string(r)),
      rank_(rank) {}

NotPSDError::NotPSDError(double min_eigenvalue)
    : SpecError("correlation matrix is not PSD (min eigenvalue " + std::to_string(min_eigenvalue) +
                ")"),
      min_eig_(min_eigenvalue) {}

// ---------------------------------------------------------------------------

CouplingMatrix::CouplingMatrix(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() == 0 || entries_.cols() == 0) throw SpecError("coupling matrix must be non-empty");
  if (!entries_.allFinite()) throw SpecError("coupling matrix has non-finite entries");
  const double err = max_row_norm_error();
  if (err > kUnitRowTolerance) {
    throw SpecError("coupling matrix rows must have unit norm (max deviation " + std::to_string(err) +
                    ")");
  }
}

CouplingMatrix CouplingMatrix::normalized(const Matrix& entries) {
  Matrix out = entries;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw SpecError("cannot normalize a zero or non-finite row");
    out.row(i) /= n;
  }
  return CouplingMatrix(std::move(out));
}

CouplingMatrix CouplingMatrix::identity(std::size_t k) {
  const auto n = static_cast<Eigen::Index>(k);
  return CouplingMatrix(Matrix::Identity(n, n));
}

CouplingMatrix CouplingMatrix::repulsive(std::size_t k) {
  require_k(k, 2, "repulsive coupling");
  const auto n = static_cast<Eigen::Index>(k);
  const double kd = static_cast<double>(k);
  Matrix a = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / kd);
  a *= std::sqrt(kd / (kd - 1.0));
  return normalized(a);
}

double CouplingMatrix::max_row_norm_error() const {
  double err = 0.0;
  for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
    err = std::max(err, std::abs(entries_.row(i).squaredNorm() - 1.0));
  }
  return err;
}

// ---------------------------------------------------------------------------

SampleCorrelation::SampleCorrelation(Matrix entries) : entries_(std::move(entries)) {
  if (entries_.rows() == 0 || entries_.rows() != entries_.cols()) {
    throw SpecError("sample correlation must be square and non-empty");
  }
  if (!entries_.allFinite()) throw SpecError("sample correlation has non-finite entries");
  const Eigen::Index k = entries_.rows();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::abs(entries_(i, i) - 1.0) > kUnitRowTolerance) {
      throw SpecError("sample correlation must have unit diagonal");
    }
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(entries_(i, j) - entries_(j, i)) > kUnitRowTolerance) {
        throw SpecError("sample correlation must be symmetric");
      }
    }
  }
  const double mn = min_eigenvalue();
  if (mn < -kPsdTolerance) throw NotPSDError(mn);
}

Vector SampleCorrelation::eigenvalues() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(entries_, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double SampleCorrelation::min_eigenvalue() const { return eigenvalues()(0); }

Matrix SampleCorrelation::offdiagonal() const {
  return entries_ - Matrix::Identity(entries_.rows(), entries_.cols());
}

// ---------------------------------------------------------------------------

std::string_view to_string(CouplingKind kind) {
  switch (kind) {
    case CouplingKind::Identical: return "identical";
    case CouplingKind::Independent: return "independent";
    case CouplingKind::Antithetic: return "antithetic";
    case CouplingKind::Equicorrelated: return "equicorr";
    case CouplingKind::Repulsive: return "repulsive";
    case CouplingKind::Matrix: return "matrix";
    case CouplingKind::Subspace: return "subspace";
  }
  return "unknown";
}

CouplingKind parse_kind(std::string_view name) {
  if (name == "identical") return CouplingKind::Identical;
  if (name == "independent") return CouplingKind::Independent;
  if (name == "antithetic") return CouplingKind::Antithetic;
  if (name == "equicorr" || name == "equicorrelated") return CouplingKind::Equicorrelated;
  if (name == "repulsive") return CouplingKind::Repulsive;
  if (name == "matrix") return CouplingKind::Matrix;
  if (name == "subspace") return CouplingKind::Subspace;
  throw SpecError("unknown coupling kind '" + std::string(name) + "'");
}

CouplingSpec CouplingSpec::identical(std::size_t k, std::size_t d) {
  require_k(k, 1, "identical coupling");
  require_d(d);
  return CouplingSpec(CouplingKind::Identical, k, d);
}

CouplingSpec CouplingSpec::independent(std::size_t k, std::size_t d) {
  require_k(k, 1, "independent coupling");
  require_d(d);
  return CouplingSpec(CouplingKind::Independent, k, d);
}

CouplingSpec CouplingSpec::antithetic(std::size_t d) {
  require_d(d);
  return CouplingSpec(CouplingKind::Antithetic, 2, d);
}

CouplingSpec CouplingSpec::equicorrelated(std::size_t k, std::size_t d, double c) {
  require_d(d);
  (void)equicorrelated_matrix(k, c);  // validates k and the interval
  CouplingSpec s(CouplingKind::Equicorrelated, k, d);
  s.c_ = c;
  return s;
}

CouplingSpec CouplingSpec::repulsive(std::size_t k, std::size_t d) {
  require_k(k, 2, "repulsive coupling");
  require_d(d);
  return CouplingSpec(CouplingKind::Repulsive, k, d);
}

CouplingSpec CouplingSpec::matrix(CouplingMatrix a, std::size_t d) {
  require_d(d);
  CouplingSpec s(CouplingKind::Matrix, a.k(), d);
  s.matrix_ = std::make_shared<const CouplingMatrix>(std::move(a));
  return s;
}

CouplingSpec CouplingSpec::subspace(SubspaceSpec sub) {
  CouplingSpec s(CouplingKind::Subspace, sub.inner.k(), sub.ambient_dim());
  s.subspace_ = std::make_shared<const SubspaceSpec>(std::move(sub));
  return s;
}

const CouplingMatrix& CouplingSpec::coupling_matrix() const {
  if (!matrix_) throw SpecError("spec of kind '" + std::string(to_string(kind_)) + "' has no matrix");
  return *matrix_;
}

const SubspaceSpec& CouplingSpec::subspace_spec() const {
  if (!subspace_) throw SpecError("spec of kind '" + std::string(to_string(kind_)) + "' has no subspace");
  return *subspace_;
}

CouplingSpec CouplingSpec::with_dim(std::size_t d) const {
  if (kind_ == CouplingKind::Subspace) throw SpecError("subspace specs cannot be re-targeted");
  require_d(d);
  CouplingSpec s = *this;
  s.d_ = d;
  return s;
}

// ---------------------------------------------------------------------------

SubspaceSpec SubspaceSpec::make(Matrix basis, const CouplingSpec& inner_kind, const CouplingSpec& outer_kind) {
  if (inner_kind.kind() == CouplingKind::Subspace || outer_kind.kind() == CouplingKind::Subspace) {
    throw SpecError("subspace couplings cannot be nested");
  }
  if (inner_kind.k() != outer_kind.k()) throw SpecError("inner and outer couplings must share k");
  const auto d = static_cast<std::size_t>(basis.rows());
  const auto s = static_cast<std::size_t>(basis.cols());
  if (s == 0 || d == 0 || s > d) throw SpecError("subspace basis must be d x s with 1 <= s <= d");
  const Matrix gram = basis.transpose() * basis;
  const double err = (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
  if (err > kOrthonormalTolerance) {
    throw SpecError("subspace basis columns must be orthonormal (deviation " + std::to_string(err) + ")");
  }
  return SubspaceSpec{std::move(basis), inner_kind.with_dim(s), outer_kind.with_dim(d)};
}

Matrix SubspaceSpec::coordinate_basis(std::size_t d, std::span<const std::size_t> coordinates) {
  Matrix b = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(coordinates.size()));
  for (std::size_t j = 0; j < coordinates.size(); ++j) {
    if (coordinates[j] >= d) throw SpecError("coordinate index out of range");
    b(static_cast<Eigen::Index>(coordinates[j]), static_cast<Eigen::Index>(j)) = 1.0;
  }
  return b;
}

double NoiseBatch::max_row_sum() const {
  if (vectors.rows() == 0) return 0.0;
  return vectors.colwise().sum().cwiseAbs().maxCoeff();
}

SampleCorrelation SubspaceCorrelation::averaged() const {
  const double s = static_cast<double>(subspace_dim);
  const double d = static_cast<double>(ambient_dim);
  Matrix m = (s * on_subspace.entries() + (d - s) * on_complement.entries()) / d;
  m.diagonal().setOnes();
  return SampleCorrelation(std::move(m));
}

// ---------------------------------------------------------------------------

double equicorrelation_lower_bound(std::size_t k) {
  require_k(k, 2, "equicorrelated coupling");
  return -1.0 / (static_cast<double>(k) - 1.0);
}

SampleCorrelation equicorrelated_matrix(std::size_t k, double c) {
  const double lower = equicorrelation_lower_bound(k);
  if (!(c >= lower && c <= 1.0)) throw FeasibilityError(k, c, lower, 1.0);
  const auto n = static_cast<Eigen::Index>(k);
  Matrix m = Matrix::Constant(n, n, c);
  m.diagonal().setOnes();
  return SampleCorrelation(std::move(m));
}

namespace {

SampleCorrelation non_subspace_correlation(const CouplingSpec& spec) {
  const auto k = static_cast<Eigen::Index>(spec.k());
  switch (spec.kind()) {
    case CouplingKind::Identical: return SampleCorrelation(Matrix::Ones(k, k));
    case CouplingKind::Independent: return SampleCorrelation(Matrix::Identity(k, k));
    case CouplingKind::Antithetic: return equicorrelated_matrix(2, -1.0);
    case CouplingKind::Repulsive: return equicorrelated_matrix(spec.k(), equicorrelation_lower_bound(spec.k()));
    case CouplingKind::Equicorrelated: return equicorrelated_matrix(spec.k(), spec.c());
    case CouplingKind::Matrix: {
      Matrix g = spec.coupling_matrix().gram();
      g = 0.5 * (g + g.transpose());
      g.diagonal().setOnes();
      return SampleCorrelation(std::move(g));
    }
    case CouplingKind::Subspace: break;
  }
  throw SpecError("subspace spec has no single correlation");
}

}  // namespace

CorrelationStructure correlation_of(const CouplingSpec& spec) {
  if (spec.kind() != CouplingKind::Subspace) return non_subspace_correlation(spec);
  const SubspaceSpec& sub = spec.subspace_spec();
  return SubspaceCorrelation{non_subspace_correlation(sub.inner), non_subspace_correlation(sub.outer),
                             sub.subspace_dim(), sub.ambient_dim()};
}

SampleCorrelation effective_correlation(const CouplingSpec& spec) {
  auto cs = correlation_of(spec);
  if (auto* sc = std::get_if<SampleCorrelation>(&cs)) return *sc;
  return std::get<SubspaceCorrelation>(cs).averaged();
}

std::size_t numerical_rank(const SampleCorrelation& r_matrix) {
  const Vector ev = r_matrix.eigenvalues();
  return static_cast<std::size_t>((ev.array() > kRankTolerance).count());
}

CouplingMatrix factor_correlation(const SampleCorrelation& r_matrix, std::size_t r) {
  if (r == 0) throw SpecError("factor rank r must be positive");
  Eigen::SelfAdjointEigenSolver<Matrix> es(r_matrix.entries());
  if (es.info() != Eigen::Success) throw SpecError("eigendecomposition failed");
  const Vector& ev = es.eigenvalues();  // ascending
  const Matrix& vecs = es.eigenvectors();
  const Eigen::Index k = ev.size();
  if (ev(0) < -kPsdTolerance) throw NotPSDError(ev(0));

  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < k; ++i) rank += ev(i) > kRankTolerance ? 1 : 0;
  if (rank > r) throw RankError(rank, r);

  // Descending order; keep the numerically nonzero part and pad with zeros.
  Matrix a = Matrix::Zero(k, static_cast<Eigen::Index>(r));
  for (std::size_t col = 0; col < rank; ++col) {
    const Eigen::Index src = k - 1 - static_cast<Eigen::Index>(col);
    Vector v = vecs.col(src) * std::sqrt(std::max(ev(src), 0.0));
    for (Eigen::Index i = 0; i < k; ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0.0) v = -v;
        break;
      }
    }
    a.col(static_cast<Eigen::Index>(col)) = v;
  }
  // Clamping perturbs row norms at the 1e-9 level; restore exact unit rows.
  return CouplingMatrix::normalized(a);
}

}  // namespace noisecouple
