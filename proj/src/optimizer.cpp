#include "noisecouple/optimizer.hpp"

#include "noisecouple/parallel.hpp"
#include "noisecouple/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace noisecouple {

namespace {

constexpr std::uint64_t kInitStream = 1ULL << 63;
constexpr std::uint64_t kEvalStream = 1ULL << 62;

void fill(RandomStream& rs, RowMatrix& m) { rs.fill_normal(std::span<double>(m.data(), static_cast<std::size_t>(m.size()))); }

}  // namespace

void AmortizedConfig::validate() const {
  if (!objective || !generator) throw SpecError("amortized config needs an objective and a generator");
  if (k == 0 || r == 0) throw SpecError("amortized config: k and r must be positive");
  if (objective->arity() != k) throw SpecError("amortized config: objective arity must equal k");
  if (!(step_size > 0.0)) throw SpecError("amortized config: step_size must be positive");
  if (mc_batch == 0) throw SpecError("amortized config: mc_batch must be >= 1");
  if (crn_reuse == 0) throw SpecError("amortized config: crn_reuse must be >= 1");
  if (init == InitKind::IdentityRows && r < k) throw SpecError("IdentityRows initialization requires r >= k");
}

bool AmortizedConfig::maximizing() const { return maximize.value_or(objective->sense() == Sense::Maximize); }

std::string Trajectory::to_json_lines() const {
  std::ostringstream os;
  for (const auto& p : points) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(p.a.size()));
    for (Eigen::Index i = 0; i < p.a.rows(); ++i)
      for (Eigen::Index j = 0; j < p.a.cols(); ++j) flat.push_back(p.a(i, j));
    nlohmann::json line{{"step", p.step}, {"objective", p.objective}, {"rows", p.a.rows()}, {"cols", p.a.cols()},
                        {"a", flat}};
    os << line.dump() << '\n';
  }
  return os.str();
}

CouplingMatrix initial_matrix(const AmortizedConfig& cfg) {
  const auto k = static_cast<Eigen::Index>(cfg.k);
  const auto r = static_cast<Eigen::Index>(cfg.r);
  if (cfg.init == InitKind::IdentityRows) return CouplingMatrix(Matrix::Identity(k, r));
  RandomStream rs(cfg.seed, kInitStream);
  Matrix a(k, r);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < r; ++j) a(i, j) = rs.normal();
  return CouplingMatrix::normalized(a);
}

std::vector<RowMatrix> draw_basis_noises(std::uint64_t seed, std::size_t block, std::size_t count, std::size_t r,
                                         std::size_t d) {
  std::vector<RowMatrix> out(count, RowMatrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)));
  for (std::size_t g = 0; g < count; ++g) {
    RandomStream rs(seed, block * count + g);
    fill(rs, out[g]);
  }
  return out;
}

double coupling_objective_and_gradient(const NoiseObjective& objective, const Matrix& a,
                                       const std::vector<RowMatrix>& basis_noises, Matrix& grad) {
  const std::size_t count = basis_noises.size();
  std::vector<double> values(count);
  std::vector<Matrix> grads(count);
  parallel_for(count, [&](std::size_t g) {
    const RowMatrix& u = basis_noises[g];
    const RowMatrix z = a * u;
    RowMatrix gz;
    values[g] = objective.value_and_gradient(z, gz);
    grads[g] = gz * u.transpose();  // dF/dA = (dF/dZ) U^T
  });
  grad = Matrix::Zero(a.rows(), a.cols());
  double total = 0.0;
  for (std::size_t g = 0; g < count; ++g) {
    total += values[g];
    grad += grads[g];
  }
  grad /= static_cast<double>(count);
  return total / static_cast<double>(count);
}

Trajectory optimize_coupling(const AmortizedConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.generator->dims().input;
  const NoiseObjective objective(cfg.generator, cfg.objective);
  const double direction = cfg.maximizing() ? 1.0 : -1.0;

  Matrix a = initial_matrix(cfg).entries();
  Trajectory traj;
  std::vector<RowMatrix> noises;
  std::size_t noise_block = static_cast<std::size_t>(-1);
  Matrix grad;
  for (std::size_t step = 0; step <= cfg.steps; ++step) {
    const std::size_t block = step / cfg.crn_reuse;
    if (block != noise_block) {
      noises = draw_basis_noises(cfg.seed, block, cfg.mc_batch, cfg.r, d);
      noise_block = block;
    }
    const double value = coupling_objective_and_gradient(objective, a, noises, grad);
    if (!std::isfinite(value) || !grad.allFinite()) {
      throw DivergenceError("amortized optimization diverged at step " + std::to_string(step));
    }
    traj.points.push_back({step, value, a});
    if (step == cfg.steps) break;

    double eta = cfg.step_size;
    if (cfg.cosine_decay) {
      eta *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(cfg.steps)));
    }
    a += direction * eta * grad;
    a = CouplingMatrix::normalized(a).entries();
  }
  return traj;
}

Evaluation evaluate_coupling(const NoiseObjective& objective, const Matrix& a, std::uint64_t seed,
                             std::size_t galleries) {
  if (galleries < 2) throw std::invalid_argument("evaluate_coupling needs at least two galleries");
  const std::size_t d = objective.d();
  std::vector<double> values(galleries);
  parallel_for(galleries, [&](std::size_t g) {
    RandomStream rs(seed, kEvalStream + g);
    RowMatrix u(a.cols(), static_cast<Eigen::Index>(d));
    fill(rs, u);
    values[g] = objective.value(a * u);
  });
  double sum = 0.0, sum_sq = 0.0;
  for (double v : values) {
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(galleries);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------

void RefineConfig::validate(std::size_t d) const {
  if (!generator) throw SpecError("refine config needs a generator");
  if (generator->dims().input != d) throw DimensionError("refine: generator input dimension must equal noise dimension");
  if (!(step_size > 0.0)) throw SpecError("refine config: step_size must be positive");
  std::vector<bool> seen(d, false);
  for (std::size_t c : optimized) {
    if (c >= d) throw DimensionError("refine: optimized coordinate out of range");
    if (seen[c]) throw SpecError("refine: optimized coordinates must be distinct");
    seen[c] = true;
  }
  if (!objective) {
    const std::size_t m = generator->dims().output;
    if (static_cast<std::size_t>(target.size()) != m) throw DimensionError("refine: target must have generator output size");
    for (std::size_t c : target_mask)
      if (c >= m) throw DimensionError("refine: target mask coordinate out of range");
  }
}

double masked_fidelity_loss(const GeneratorOracle& generator, const RowMatrix& z, const Vector& target,
                            const std::vector<std::size_t>& target_mask) {
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const Vector x = generator.evaluate(z.row(i).transpose());
    for (std::size_t c : target_mask) {
      const double r = x(static_cast<Eigen::Index>(c)) - target(static_cast<Eigen::Index>(c));
      loss += r * r;
    }
  }
  return loss;
}

NoiseBatch refine_noise(const NoiseBatch& initial, const RefineConfig& cfg) {
  const std::size_t d = initial.d();
  cfg.validate(d);
  NoiseBatch out = initial;
  if (cfg.optimized.empty()) return out;

  std::optional<NoiseObjective> gallery;
  double direction = -1.0;
  if (cfg.objective) {
    if (cfg.objective->arity() != initial.k()) throw DimensionError("refine: objective arity must equal k");
    gallery.emplace(cfg.generator, cfg.objective);
    direction = cfg.maximize.value_or(cfg.objective->sense() == Sense::Maximize) ? 1.0 : -1.0;
  }

  RowMatrix& z = out.vectors;
  RowMatrix grad(z.rows(), z.cols());
  Vector cot = Vector::Zero(static_cast<Eigen::Index>(cfg.generator->dims().output));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    double value;
    if (gallery) {
      value = gallery->value_and_gradient(z, grad);
    } else {
      value = 0.0;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const Vector x = cfg.generator->evaluate(z.row(i).transpose());
        cot.setZero();
        for (std::size_t c : cfg.target_mask) {
          const auto ci = static_cast<Eigen::Index>(c);
          const double r = x(ci) - cfg.target(ci);
          value += r * r;
          cot(ci) = 2.0 * r;
        }
        grad.row(i) = cfg.generator->vjp(z.row(i).transpose(), cot).transpose();
      }
    }
    if (!std::isfinite(value) || !grad.allFinite()) {
      throw DivergenceError("noise refinement diverged at step " + std::to_string(step));
    }
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      for (std::size_t c : cfg.optimized) {
        const auto ci = static_cast<Eigen::Index>(c);
        z(i, ci) += direction * cfg.step_size * grad(i, ci);
      }
    }
    if (cfg.on_step) cfg.on_step(step, z);
  }
  return out;
}

}  // namespace noisecouple
