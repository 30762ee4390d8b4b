#pragma once

// Monte Carlo checks that a sampler honors its coupling: standard normal
// marginals, the declared sample-level correlation, the minimax lower bound on
// the worst pairwise correlation, and invariance of averaged single-sample
// scores. Thresholds are multiples of the exact standard errors, so reports
// stay valid across n and d. Failures are reported, never thrown.

#include "noisecouple/core.hpp"
#include "noisecouple/generators.hpp"
#include "noisecouple/random.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace noisecouple {

/// Produces replicate `index` into `out` (k x d). Must be safe to call concurrently.
using BatchSource = std::function<void(std::size_t index, RowMatrix& out)>;

/// Replicate i drawn from stream.substream(i), matching sample_many.
BatchSource spec_source(const CouplingSpec& spec, const RandomStream& stream);

struct Statistic {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

/// Common serialized form: {spec, n, statistics[], thresholds[], pass}.
struct Report {
  std::string check;
  nlohmann::json spec;
  std::size_t n = 0;
  std::vector<Statistic> statistics;
  bool pass = true;

  void add(std::string name, double value, double threshold, bool ok);
  nlohmann::json to_json() const;
};

struct MomentReport {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t d = 0;
  // One entry per sample index i.
  std::vector<double> mean_norm;       // |mean vector of z_i|
  std::vector<double> max_abs_mean;    // max over coordinates
  std::vector<double> max_var_dev;     // max |var - 1|
  std::vector<double> max_abs_kurtosis;
  double mean_threshold = 0.0;      // 4 / sqrt(n)
  double variance_threshold = 0.0;  // 5 sqrt(2 / n)
  double kurtosis_threshold = 0.0;  // 10 sqrt(24 / n)
  bool mean_pass = true;
  bool variance_pass = true;
  bool kurtosis_pass = true;
  bool pass = true;

  Report report(const CouplingSpec& spec) const;
};

struct CovarianceReport {
  std::size_t n = 0;
  std::size_t d = 0;
  Matrix estimate;   // (1/d) mean <z_i, z_j>
  Matrix expected;   // effective_correlation(spec)
  Matrix stderr_;    // per-entry standard error
  double max_deviation = 0.0;  // over i < j
  double threshold = 0.0;      // 5 / sqrt(n d)
  /// Max |E z_{0,l} z_{1,m}| over l != m, coordinates capped at kStructureCoords.
  double structure_max_offdiag = 0.0;
  double structure_threshold = 0.0;  // 5 / sqrt(n)
  bool pairs_pass = true;
  bool structure_pass = true;
  bool pass = true;

  static constexpr std::size_t kStructureCoords = 64;

  Report report(const CouplingSpec& spec) const;
};

struct MinimaxEntry {
  nlohmann::json spec;
  double worst_pair = 0.0;  // max over i < j of (1/d) E<z_i, z_j>
  double stderr_ = 0.0;
  double tolerance = 0.0;   // 5 / sqrt(n d)
  bool respects_bound = true;
  bool attains_bound = false;
};

struct MinimaxReport {
  std::size_t k = 0;
  std::size_t n = 0;
  double bound = 0.0;  // -1/(k-1)
  std::vector<MinimaxEntry> entries;
  std::vector<std::size_t> attained_by;
  bool pass = true;

  nlohmann::json to_json() const;
};

struct InvarianceEntry {
  nlohmann::json spec;
  double mean = 0.0;
  double stderr_ = 0.0;
};

struct InvarianceReport {
  std::size_t n = 0;
  std::vector<InvarianceEntry> entries;
  double max_z = 0.0;  // max |mean_a - mean_b| / sqrt(se_a^2 + se_b^2)
  double threshold = 6.0;
  bool pass = true;

  nlohmann::json to_json() const;
};

MomentReport validate_marginals(const CouplingSpec& spec, const RandomStream& stream, std::size_t n);
/// Fault-injection entry point: moments of an arbitrary batch source shaped like `spec`.
MomentReport validate_marginals(const CouplingSpec& spec, const BatchSource& source, std::size_t n);

CovarianceReport validate_cross_covariance(const CouplingSpec& spec, const RandomStream& stream, std::size_t n);
CovarianceReport validate_cross_covariance(const CouplingSpec& spec, const BatchSource& source, std::size_t n);

MinimaxReport check_minimax(std::size_t k, const std::vector<CouplingSpec>& candidates, const RandomStream& stream,
                            std::size_t n);

using SingleScore = std::function<double(const Vector& output)>;

InvarianceReport check_marginal_invariance(const std::vector<CouplingSpec>& specs, const GeneratorOracle& generator,
                                           const SingleScore& score, const RandomStream& stream, std::size_t n);

}  // namespace noisecouple
