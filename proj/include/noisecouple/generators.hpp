#pragma once

// Deterministic differentiable generators z -> x and gallery-level objectives
// over the K outputs of one gallery.

#include "noisecouple/core.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

namespace noisecouple {

struct GeneratorDims {
  std::size_t input;   // d
  std::size_t output;  // m
};

class GeneratorOracle {
 public:
  explicit GeneratorOracle(std::string context) : context_(std::move(context)) {}
  virtual ~GeneratorOracle() = default;

  virtual GeneratorDims dims() const = 0;
  virtual Vector evaluate(const Eigen::Ref<const Vector>& z) const = 0;
  /// Gradient of <cotangent, evaluate(z)> with respect to z.
  virtual Vector vjp(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& cotangent) const = 0;

  /// Stands in for the conditioning (prompt) of a real generator.
  const std::string& context() const noexcept { return context_; }

  /// Row-wise evaluate: Z is k x d, returns k x m.
  RowMatrix evaluate_rows(const RowMatrix& z) const;
  /// Row-wise vjp: cotangents is k x m, returns k x d.
  RowMatrix vjp_rows(const RowMatrix& z, const RowMatrix& cotangents) const;

 private:
  std::string context_;
};

using GeneratorPtr = std::shared_ptr<const GeneratorOracle>;

/// x = a + J z.
GeneratorPtr make_linear(Matrix j, Vector a, std::string context = "linear");
GeneratorPtr make_identity(std::size_t d);
/// x = W2 tanh(W1 z + b) / sqrt(width), weights fixed by `seed`.
GeneratorPtr make_random_feature(std::uint64_t seed, std::size_t d, std::size_t m, std::size_t width);
/// Scalar brightness in (0, 1): sigmoid(w^T z / sqrt(d)) with |w| = sqrt(d).
GeneratorPtr make_brightness_surrogate(std::uint64_t seed, std::size_t d);

// ---------------------------------------------------------------------------

enum class Sense { Maximize, Minimize };

class GalleryObjective {
 public:
  GalleryObjective(std::string name, std::size_t arity, Sense sense)
      : name_(std::move(name)), arity_(arity), sense_(sense) {}
  virtual ~GalleryObjective() = default;

  const std::string& name() const noexcept { return name_; }
  std::size_t arity() const noexcept { return arity_; }
  /// Default optimization direction.
  Sense sense() const noexcept { return sense_; }

  /// outputs: k x m, row i = x_i.
  virtual double evaluate(const RowMatrix& outputs) const = 0;
  /// Partials with respect to every x_i, k x m.
  virtual RowMatrix gradient(const RowMatrix& outputs) const = 0;

 protected:
  void check_arity(const RowMatrix& outputs) const;

 private:
  std::string name_;
  std::size_t arity_;
  Sense sense_;
};

using ObjectivePtr = std::shared_ptr<const GalleryObjective>;

/// Mean over pairs of the Euclidean distance |x_i - x_j|. Maximized by default.
ObjectivePtr objective_pairwise_l2(std::size_t k);
/// Sum over pairs of |x_i - x_j|^2. Maximized by default.
ObjectivePtr objective_pairwise_sq(std::size_t k);
/// Mean over pairs of exp(-|x_i - x_j|^2 / (2 tau^2)). Minimized by default.
ObjectivePtr objective_rbf(std::size_t k, double tau);
/// |(b1+b2)/2 - (b3+b4)/2| + lambda (|b1-b2| + |b3-b4|) / 2 on scalar outputs,
/// with |t| smoothed to sqrt(t^2 + eps^2). Maximized by default.
ObjectivePtr objective_brightness_cluster(double lambda, double eps = 1e-3);
/// Unsmoothed brightness-cluster score, for reporting.
double brightness_cluster_exact(double b1, double b2, double b3, double b4, double lambda);

/// H(z_1..z_k) = objective(G(z_1), ..., G(z_k)) with its gradient in noise space.
class NoiseObjective {
 public:
  NoiseObjective(GeneratorPtr generator, ObjectivePtr objective);

  double value(const RowMatrix& z) const;
  /// Returns the value and writes dH/dZ (k x d) into `grad`.
  double value_and_gradient(const RowMatrix& z, RowMatrix& grad) const;

  const GeneratorOracle& generator() const noexcept { return *generator_; }
  const GalleryObjective& objective() const noexcept { return *objective_; }
  std::size_t k() const noexcept { return objective_->arity(); }
  std::size_t d() const noexcept { return generator_->dims().input; }

 private:
  GeneratorPtr generator_;
  ObjectivePtr objective_;
};

/// Largest relative error between `grad` and central differences of `f` at
/// `x`, over all coordinates: |g - fd| / max(1, |g|, |fd|).
double finite_difference_error(const std::function<double(const Vector&)>& f, const Vector& x,
                               const Vector& grad, double step = 1e-5);

}  // namespace noisecouple
