#pragma once

// Gallery-level quantities under a coupling: squared feature separation and
// its upper bound, RBF feature similarity (closed form, exact Gaussian-pair
// value and Monte Carlo), the first-order effect of moving from independent
// noise to a correlation R, and the local linear separation prediction.

#include "noisecouple/core.hpp"
#include "noisecouple/generators.hpp"
#include "noisecouple/random.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace noisecouple {

/// Local linear feature map y = a + J z (J is m x d).
struct LinearFeatureMap {
  Matrix j;
  Vector offset;

  explicit LinearFeatureMap(Matrix j_, Vector offset_ = Vector());
  static LinearFeatureMap identity(std::size_t d);

  std::size_t m() const noexcept { return static_cast<std::size_t>(j.rows()); }
  std::size_t d() const noexcept { return static_cast<std::size_t>(j.cols()); }
  double frobenius_sq() const { return j.squaredNorm(); }
};

struct RBFSimilaritySpec {
  LinearFeatureMap map;
  double tau = 1.0;
  /// Optional (tau_i, w_i >= 0) terms; when non-empty the similarity is the
  /// weighted sum of per-bandwidth values and `tau` is ignored.
  std::vector<std::pair<double, double>> weights;

  void validate() const;
};

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;

  nlohmann::json to_json() const;
};

/// Mean over replications of (2 / (k (k-1))) sum_{i<j} |J z_i - J z_j|^2.
Estimate pairwise_separation(std::span<const NoiseBatch> batches, const LinearFeatureMap& map);
/// Streaming form over n replications of `spec` (replicate i from stream.substream(i)).
Estimate pairwise_separation(const CouplingSpec& spec, const RandomStream& stream, std::size_t n,
                             const LinearFeatureMap& map);

/// 2k/(k-1) |J|_F^2.
double separation_bound(std::size_t k, const LinearFeatureMap& map);

/// det(I_m + (2k/((k-1) tau^2)) J J^T)^{-1/2}, or the weighted sum over bandwidths.
double rbf_similarity_closed_form(std::size_t k, const RBFSimilaritySpec& spec);

/// Exact average RBF similarity of a jointly Gaussian coupling: the mean over
/// pairs of det(I + V_ij / tau^2)^{-1/2}, V_ij the covariance of J(z_i - z_j).
double rbf_similarity_exact(const CouplingSpec& coupling, const RBFSimilaritySpec& spec);

struct RbfResult {
  Estimate mc;
  std::optional<double> exact;
};

RbfResult rbf_similarity_mc(const CouplingSpec& coupling, const RBFSimilaritySpec& spec, const RandomStream& stream,
                            std::size_t n);

/// 2 (1 - c) |J|_F^2; throws FeasibilityError outside [-1/(k-1), 1].
double local_linear_prediction(std::size_t k, double c, const LinearFeatureMap& map);

// ---------------------------------------------------------------------------
// First-order coupling effect
// ---------------------------------------------------------------------------

struct EffectOptions {
  std::size_t quadrature_nodes = 16;
  /// Hutchinson probe count; when d <= probes the exact coordinate basis is used.
  std::size_t probes = 16;
  /// Estimate M = max |D_kl D_ij H| over the quadrature grid for the remainder bound.
  bool remainder_bound = false;
  /// Replications per quadrature node used for M.
  std::size_t remainder_samples = 64;
};

struct EffectReport {
  Estimate direct;         // E_R[H] - E_iid[H], common random numbers
  Estimate first_order;    // sum_{i<j} B_ij E_iid[D_ij H]
  Estimate interpolation;  // int_0^1 sum_{i<j} B_ij E_t[D_ij H] dt
  /// Standard errors of the paired per-replicate differences.
  double se_direct_minus_first = 0.0;
  double se_direct_minus_interp = 0.0;
  double se_first_minus_interp = 0.0;
  double remainder = 0.0;  // direct - first_order
  double abs_offdiag_sum = 0.0;  // sum_{i<j} |B_ij|
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> derivative_at_node;  // Psi'(t_q) estimates
  std::optional<double> second_derivative_max;  // M
  std::optional<double> remainder_bound;        // (M/2) (sum |B_ij|)^2

  nlohmann::json to_json() const;
};

/// Requires objective.k() == R.k().
EffectReport coupling_effect_first_order(const NoiseObjective& objective, const SampleCorrelation& r_matrix,
                                         const RandomStream& stream, std::size_t n, const EffectOptions& options = {});

/// Gauss-Legendre nodes and weights on [0, 1].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre_unit(std::size_t nodes);

/// k x k matrix of D_ij H = sum_l d^2 H / dz_{i,l} dz_{j,l} at Z (diagonal
/// unused), by central differences of the gradient along probe directions.
/// `probe_stream` supplies Rademacher probes when d > probes.
Matrix mixed_partial_traces(const NoiseObjective& objective, const RowMatrix& z, std::size_t probes,
                            RandomStream& probe_stream);

}  // namespace noisecouple
