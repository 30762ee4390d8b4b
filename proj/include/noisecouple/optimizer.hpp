#pragma once

// Amortized optimization of a coupling matrix on the row-sphere, and direct
// refinement of realized noises with a frozen coordinate set.

#include "noisecouple/core.hpp"
#include "noisecouple/generators.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <vector>

namespace noisecouple {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InitKind { IdentityRows, RandomRows };

struct AmortizedConfig {
  std::size_t k = 4;
  std::size_t r = 4;
  ObjectivePtr objective;
  GeneratorPtr generator;
  /// Unset: follow the objective's default sense.
  std::optional<bool> maximize;
  std::size_t steps = 1500;
  double step_size = 0.05;
  bool cosine_decay = true;
  /// Galleries per gradient estimate.
  std::size_t mc_batch = 64;
  /// Consecutive steps that reuse the same basis noises U.
  std::size_t crn_reuse = 1;
  std::uint64_t seed = 0;
  InitKind init = InitKind::IdentityRows;

  void validate() const;
  bool maximizing() const;
};

struct TrajectoryPoint {
  std::size_t step = 0;
  double objective = 0.0;  // Monte Carlo estimate at the iterate before the step
  Matrix a;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;  // points[0] is the initial matrix

  const Matrix& final_matrix() const { return points.back().a; }
  /// One JSON object per line: {"step", "objective", "a"} with `a` flattened row-major.
  std::string to_json_lines() const;
};

CouplingMatrix initial_matrix(const AmortizedConfig& cfg);

/// Monte Carlo estimate of E[objective] and its gradient with respect to A,
/// over galleries Z = A U built from `basis_noises` (each r x d).
double coupling_objective_and_gradient(const NoiseObjective& objective, const Matrix& a,
                                       const std::vector<RowMatrix>& basis_noises, Matrix& grad);

/// Draws mc_batch basis noises for step `block` of a run seeded with `seed`.
std::vector<RowMatrix> draw_basis_noises(std::uint64_t seed, std::size_t block, std::size_t count, std::size_t r,
                                         std::size_t d);

/// Projected gradient on the row-sphere: step, then renormalize every row.
/// Returns every iterate; throws DivergenceError if an estimate becomes non-finite.
Trajectory optimize_coupling(const AmortizedConfig& cfg);

/// Mean objective of `a` over `galleries` fresh galleries (independent of the training stream).
struct Evaluation {
  double mean = 0.0;
  double stderr_ = 0.0;
};
Evaluation evaluate_coupling(const NoiseObjective& objective, const Matrix& a, std::uint64_t seed,
                             std::size_t galleries);

// ---------------------------------------------------------------------------

struct RefineConfig {
  /// Coordinates that may move; the complement is frozen.
  std::vector<std::size_t> optimized;
  /// Target output x* and the output coordinates where fidelity is enforced.
  Vector target;
  std::vector<std::size_t> target_mask;
  std::size_t steps = 200;
  double step_size = 0.25;
  GeneratorPtr generator;
  /// When set, ascend/descend this gallery objective instead of the masked
  /// fidelity loss (direct noise optimization).
  ObjectivePtr objective;
  std::optional<bool> maximize;
  /// Called after every step with the step index and the current noises.
  std::function<void(std::size_t, const RowMatrix&)> on_step;

  void validate(std::size_t d) const;
};

/// sum_i |m (G(z_i) - x*)|^2 over the target mask.
double masked_fidelity_loss(const GeneratorOracle& generator, const RowMatrix& z, const Vector& target,
                            const std::vector<std::size_t>& target_mask);

/// Gradient steps on the optimized coordinates only; frozen coordinates are
/// copied from `initial` bit for bit.
NoiseBatch refine_noise(const NoiseBatch& initial, const RefineConfig& cfg);

}  // namespace noisecouple
