#pragma once

// Domain types for Gaussian noise couplings: specifications, coupling
// matrices, sample-level correlation structures and realized noise batches.

#include <Eigen/Dense>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace noisecouple {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
/// Row-major storage: row i of a batch is the contiguous noise vector z_i.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kUnitRowTolerance = 1e-9;
inline constexpr double kPsdTolerance = 1e-8;
inline constexpr double kRankTolerance = 1e-8;
inline constexpr double kOrthonormalTolerance = 1e-8;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Invalid specification (shape, arity, kind/parameter mismatch).
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Equicorrelation parameter outside the PSD interval [lower, upper].
class FeasibilityError : public SpecError {
 public:
  FeasibilityError(std::size_t k, double c, double lower, double upper);
  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  double requested() const noexcept { return c_; }

 private:
  double c_;
  double lower_;
  double upper_;
};

class RankError : public SpecError {
 public:
  RankError(std::size_t rank, std::size_t r);
  std::size_t rank() const noexcept { return rank_; }

 private:
  std::size_t rank_;
};

class NotPSDError : public SpecError {
 public:
  explicit NotPSDError(double min_eigenvalue);
  double min_eigenvalue() const noexcept { return min_eig_; }

 private:
  double min_eig_;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// CouplingMatrix: k x r, unit Euclidean rows. Z = A U yields a valid coupling
// with sample correlation A A^T.
// ---------------------------------------------------------------------------
class CouplingMatrix {
 public:
  /// Validates the unit-row invariant; throws SpecError otherwise.
  explicit CouplingMatrix(Matrix entries);

  /// Rescales every row to unit norm. Throws SpecError on a zero row.
  static CouplingMatrix normalized(const Matrix& entries);
  static CouplingMatrix identity(std::size_t k);
  /// sqrt(k/(k-1)) (I - 11^T/k): the repulsive coupling in matrix form.
  static CouplingMatrix repulsive(std::size_t k);

  const Matrix& entries() const noexcept { return entries_; }
  std::size_t k() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  std::size_t r() const noexcept { return static_cast<std::size_t>(entries_.cols()); }
  Matrix gram() const { return entries_ * entries_.transpose(); }
  double max_row_norm_error() const;

 private:
  Matrix entries_;
};

// ---------------------------------------------------------------------------
// SampleCorrelation: symmetric k x k, unit diagonal, PSD. Cov(z_i, z_j) = R_ij I_d.
// ---------------------------------------------------------------------------
class SampleCorrelation {
 public:
  explicit SampleCorrelation(Matrix entries);

  const Matrix& entries() const noexcept { return entries_; }
  std::size_t k() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  double operator()(std::size_t i, std::size_t j) const { return entries_(i, j); }
  /// Ascending eigenvalues.
  Vector eigenvalues() const;
  double min_eigenvalue() const;
  /// B = R - I, the direction of interpolation away from independence.
  Matrix offdiagonal() const;

 private:
  Matrix entries_;
};

// ---------------------------------------------------------------------------
// CouplingSpec
// ---------------------------------------------------------------------------
enum class CouplingKind {
  Identical,
  Independent,
  Antithetic,
  Equicorrelated,
  Repulsive,
  Matrix,
  Subspace,
};

std::string_view to_string(CouplingKind kind);
/// Parses the lowercase names used on the command line and in sidecars
/// ("identical", "independent", "antithetic", "equicorr", "repulsive",
/// "matrix", "subspace").
CouplingKind parse_kind(std::string_view name);

struct SubspaceSpec;

class CouplingSpec {
 public:
  static CouplingSpec identical(std::size_t k, std::size_t d);
  static CouplingSpec independent(std::size_t k, std::size_t d);
  static CouplingSpec antithetic(std::size_t d);
  static CouplingSpec equicorrelated(std::size_t k, std::size_t d, double c);
  static CouplingSpec repulsive(std::size_t k, std::size_t d);
  static CouplingSpec matrix(CouplingMatrix a, std::size_t d);
  static CouplingSpec subspace(SubspaceSpec s);

  CouplingKind kind() const noexcept { return kind_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t d() const noexcept { return d_; }
  /// Equicorrelation parameter; meaningful for Equicorrelated only.
  double c() const noexcept { return c_; }
  const CouplingMatrix& coupling_matrix() const;
  const SubspaceSpec& subspace_spec() const;

  /// Same kind and parameters, re-targeted to dimension d. Not valid for Subspace.
  CouplingSpec with_dim(std::size_t d) const;

 private:
  CouplingSpec(CouplingKind kind, std::size_t k, std::size_t d) : kind_(kind), k_(k), d_(d) {}

  CouplingKind kind_;
  std::size_t k_;
  std::size_t d_;
  double c_ = 0.0;
  std::shared_ptr<const CouplingMatrix> matrix_;
  std::shared_ptr<const SubspaceSpec> subspace_;
};

/// Independent coupling choices on span(basis) and its orthogonal complement.
/// `inner` is expressed in basis coordinates (dimension s); `outer` is sampled
/// in the ambient space (dimension d) and projected onto the complement.
struct SubspaceSpec {
  Matrix basis;  // d x s, orthonormal columns
  CouplingSpec inner;
  CouplingSpec outer;

  /// Builds and validates. `inner_kind` / `outer_kind` are re-targeted to
  /// dimensions s and d respectively.
  static SubspaceSpec make(Matrix basis, const CouplingSpec& inner_kind, const CouplingSpec& outer_kind);
  /// Basis spanning the given coordinate indices (columns are unit vectors).
  static Matrix coordinate_basis(std::size_t d, std::span<const std::size_t> coordinates);

  std::size_t ambient_dim() const noexcept { return static_cast<std::size_t>(basis.rows()); }
  std::size_t subspace_dim() const noexcept { return static_cast<std::size_t>(basis.cols()); }
};

// ---------------------------------------------------------------------------
// NoiseBatch
// ---------------------------------------------------------------------------
struct NoiseBatch {
  RowMatrix vectors;  // k x d
  CouplingSpec spec;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  std::size_t k() const noexcept { return static_cast<std::size_t>(vectors.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(vectors.cols()); }
  /// Largest |sum_i z_i| coordinate.
  double max_row_sum() const;
};

/// Correlations reported separately on V and on its complement.
struct SubspaceCorrelation {
  SampleCorrelation on_subspace;
  SampleCorrelation on_complement;
  std::size_t subspace_dim;
  std::size_t ambient_dim;

  /// (1/d) E<z_i, z_j> for full vectors: (s R_V + (d - s) R_perp) / d.
  SampleCorrelation averaged() const;
};

using CorrelationStructure = std::variant<SampleCorrelation, SubspaceCorrelation>;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Equicorrelated R_c = (1 - c) I + c 11^T. Requires k >= 2 and
/// -1/(k-1) <= c <= 1; throws FeasibilityError carrying the interval.
SampleCorrelation equicorrelated_matrix(std::size_t k, double c);

/// Lower end of the feasible equicorrelation interval, -1/(k-1).
double equicorrelation_lower_bound(std::size_t k);

CorrelationStructure correlation_of(const CouplingSpec& spec);

/// The k x k matrix of (1/d) E<z_i, z_j>. Equals correlation_of for every
/// kind except Subspace, where the two blocks are dimension-averaged.
SampleCorrelation effective_correlation(const CouplingSpec& spec);

/// A (k x r) with unit rows and A A^T = R. Symmetric eigendecomposition,
/// eigenvalues clamped at zero, columns ordered by descending eigenvalue,
/// each column's first nonzero entry positive, zero-padded to r columns.
CouplingMatrix factor_correlation(const SampleCorrelation& r_matrix, std::size_t r);

/// Number of eigenvalues above kRankTolerance.
std::size_t numerical_rank(const SampleCorrelation& r_matrix);

}  // namespace noisecouple
