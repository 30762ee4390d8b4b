#include "noisecouple/generators.hpp"

#include "noisecouple/random.hpp"

#include <algorithm>
#include <cmath>

namespace noisecouple {

RowMatrix GeneratorOracle::evaluate_rows(const RowMatrix& z) const {
  if (static_cast<std::size_t>(z.cols()) != dims().input) throw DimensionError("generator input dimension mismatch");
  RowMatrix out(z.rows(), static_cast<Eigen::Index>(dims().output));
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.row(i) = evaluate(z.row(i).transpose()).transpose();
  return out;
}

RowMatrix GeneratorOracle::vjp_rows(const RowMatrix& z, const RowMatrix& cotangents) const {
  if (z.rows() != cotangents.rows()) throw DimensionError("vjp row count mismatch");
  RowMatrix out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out.row(i) = vjp(z.row(i).transpose(), cotangents.row(i).transpose()).transpose();
  }
  return out;
}

namespace {

class LinearGenerator final : public GeneratorOracle {
 public:
  LinearGenerator(Matrix j, Vector a, std::string context)
      : GeneratorOracle(std::move(context)), j_(std::move(j)), a_(std::move(a)) {}

  GeneratorDims dims() const override {
    return {static_cast<std::size_t>(j_.cols()), static_cast<std::size_t>(j_.rows())};
  }
  Vector evaluate(const Eigen::Ref<const Vector>& z) const override {
    if (z.size() != j_.cols()) throw DimensionError("linear generator: input dimension mismatch");
    return a_ + j_ * z;
  }
  Vector vjp(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& u) const override {
    if (z.size() != j_.cols() || u.size() != j_.rows()) throw DimensionError("linear generator: vjp shape mismatch");
    return j_.transpose() * u;
  }

 private:
  Matrix j_;
  Vector a_;
};

class RandomFeatureGenerator final : public GeneratorOracle {
 public:
  RandomFeatureGenerator(std::uint64_t seed, std::size_t d, std::size_t m, std::size_t width)
      : GeneratorOracle("random-feature/" + std::to_string(seed)) {
    RandomStream rs(seed, 0x5246);  // "RF"
    const auto di = static_cast<Eigen::Index>(d);
    const auto mi = static_cast<Eigen::Index>(m);
    const auto wi = static_cast<Eigen::Index>(width);
    w1_.resize(wi, di);
    b_.resize(wi);
    w2_.resize(mi, wi);
    const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (Eigen::Index i = 0; i < w1_.size(); ++i) w1_.data()[i] = rs.normal() * in_scale;
    for (Eigen::Index i = 0; i < b_.size(); ++i) b_(i) = 0.5 * rs.normal();
    for (Eigen::Index i = 0; i < w2_.size(); ++i) w2_.data()[i] = rs.normal();
    out_scale_ = 1.0 / std::sqrt(static_cast<double>(width));
  }

  GeneratorDims dims() const override {
    return {static_cast<std::size_t>(w1_.cols()), static_cast<std::size_t>(w2_.rows())};
  }
  Vector evaluate(const Eigen::Ref<const Vector>& z) const override {
    if (z.size() != w1_.cols()) throw DimensionError("random-feature generator: input dimension mismatch");
    const Vector h = (w1_ * z + b_).array().tanh().matrix();
    return out_scale_ * (w2_ * h);
  }
  Vector vjp(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& u) const override {
    if (z.size() != w1_.cols() || u.size() != w2_.rows()) throw DimensionError("random-feature generator: vjp shape mismatch");
    const Vector h = (w1_ * z + b_).array().tanh().matrix();
    const Vector back = (out_scale_ * (w2_.transpose() * u)).cwiseProduct((1.0 - h.array().square()).matrix());
    return w1_.transpose() * back;
  }

 private:
  Matrix w1_;
  Vector b_;
  Matrix w2_;
  double out_scale_ = 1.0;
};

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

class BrightnessSurrogate final : public GeneratorOracle {
 public:
  BrightnessSurrogate(std::uint64_t seed, std::size_t d) : GeneratorOracle("brightness/" + std::to_string(seed)) {
    RandomStream rs(seed, 0x4252);  // "BR"
    w_.resize(static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < w_.size(); ++i) w_(i) = rs.normal();
    // |w| = sqrt(d) so that w^T z / sqrt(d) is exactly N(0, 1) for z ~ N(0, I).
    w_ *= std::sqrt(static_cast<double>(d)) / w_.norm();
    scale_ = 1.0 / std::sqrt(static_cast<double>(d));
  }

  GeneratorDims dims() const override { return {static_cast<std::size_t>(w_.size()), 1}; }
  Vector evaluate(const Eigen::Ref<const Vector>& z) const override {
    if (z.size() != w_.size()) throw DimensionError("brightness surrogate: input dimension mismatch");
    Vector out(1);
    out(0) = sigmoid(scale_ * w_.dot(z));
    return out;
  }
  Vector vjp(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& u) const override {
    if (z.size() != w_.size() || u.size() != 1) throw DimensionError("brightness surrogate: vjp shape mismatch");
    const double s = sigmoid(scale_ * w_.dot(z));
    return (u(0) * s * (1.0 - s) * scale_) * w_;
  }

 private:
  Vector w_;
  double scale_ = 1.0;
};

}  // namespace

GeneratorPtr make_linear(Matrix j, Vector a, std::string context) {
  if (j.rows() == 0 || j.cols() == 0) throw DimensionError("linear generator: J must be non-empty");
  if (a.size() == 0) a = Vector::Zero(j.rows());
  if (a.size() != j.rows()) throw DimensionError("linear generator: offset length must equal J rows");
  return std::make_shared<LinearGenerator>(std::move(j), std::move(a), std::move(context));
}

GeneratorPtr make_identity(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return make_linear(Matrix::Identity(n, n), Vector::Zero(n), "identity");
}

GeneratorPtr make_random_feature(std::uint64_t seed, std::size_t d, std::size_t m, std::size_t width) {
  if (d == 0 || m == 0 || width == 0) throw DimensionError("random-feature generator: dimensions must be positive");
  return std::make_shared<RandomFeatureGenerator>(seed, d, m, width);
}

GeneratorPtr make_brightness_surrogate(std::uint64_t seed, std::size_t d) {
  if (d == 0) throw DimensionError("brightness surrogate: d must be positive");
  return std::make_shared<BrightnessSurrogate>(seed, d);
}

// ---------------------------------------------------------------------------

void GalleryObjective::check_arity(const RowMatrix& outputs) const {
  if (static_cast<std::size_t>(outputs.rows()) != arity_) {
    throw DimensionError(name_ + ": expected " + std::to_string(arity_) + " outputs, got " +
                         std::to_string(outputs.rows()));
  }
}

namespace {

double pair_count(std::size_t k) { return 0.5 * static_cast<double>(k) * static_cast<double>(k - 1); }

class PairwiseL2 final : public GalleryObjective {
 public:
  explicit PairwiseL2(std::size_t k) : GalleryObjective("pairwise_l2", k, Sense::Maximize) {}

  double evaluate(const RowMatrix& x) const override {
    check_arity(x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) total += (x.row(i) - x.row(j)).norm();
    return total / pair_count(arity());
  }
  RowMatrix gradient(const RowMatrix& x) const override {
    check_arity(x);
    RowMatrix g = RowMatrix::Zero(x.rows(), x.cols());
    const double w = 1.0 / pair_count(arity());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
        const auto diff = (x.row(i) - x.row(j)).eval();
        const double n = diff.norm();
        if (n == 0.0) continue;  // subgradient 0 at coincident outputs
        g.row(i) += (w / n) * diff;
        g.row(j) -= (w / n) * diff;
      }
    }
    return g;
  }
};

class PairwiseSq final : public GalleryObjective {
 public:
  explicit PairwiseSq(std::size_t k) : GalleryObjective("pairwise_sq", k, Sense::Maximize) {}

  double evaluate(const RowMatrix& x) const override {
    check_arity(x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) total += (x.row(i) - x.row(j)).squaredNorm();
    return total;
  }
  RowMatrix gradient(const RowMatrix& x) const override {
    check_arity(x);
    // d/dx_i sum_{a<b} |x_a - x_b|^2 = 2 (k x_i - sum_j x_j)
    const auto sum = x.colwise().sum().eval();
    RowMatrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) g.row(i) = 2.0 * (static_cast<double>(x.rows()) * x.row(i) - sum);
    return g;
  }
};

class RbfSimilarity final : public GalleryObjective {
 public:
  RbfSimilarity(std::size_t k, double tau) : GalleryObjective("rbf", k, Sense::Minimize), tau_(tau) {}

  double evaluate(const RowMatrix& x) const override {
    check_arity(x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) total += kernel((x.row(i) - x.row(j)).squaredNorm());
    return total / pair_count(arity());
  }
  RowMatrix gradient(const RowMatrix& x) const override {
    check_arity(x);
    RowMatrix g = RowMatrix::Zero(x.rows(), x.cols());
    const double w = 1.0 / pair_count(arity());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
        const auto diff = (x.row(i) - x.row(j)).eval();
        const double coef = -w * kernel(diff.squaredNorm()) / (tau_ * tau_);
        g.row(i) += coef * diff;
        g.row(j) -= coef * diff;
      }
    }
    return g;
  }

 private:
  double kernel(double sq) const { return std::exp(-sq / (2.0 * tau_ * tau_)); }
  double tau_;
};

class BrightnessCluster final : public GalleryObjective {
 public:
  BrightnessCluster(double lambda, double eps)
      : GalleryObjective("brightness_cluster", 4, Sense::Maximize), lambda_(lambda), eps_(eps) {}

  double evaluate(const RowMatrix& x) const override {
    check(x);
    const double gap = 0.5 * (x(0, 0) + x(1, 0)) - 0.5 * (x(2, 0) + x(3, 0));
    return sabs(gap) + 0.5 * lambda_ * (sabs(x(0, 0) - x(1, 0)) + sabs(x(2, 0) - x(3, 0)));
  }
  RowMatrix gradient(const RowMatrix& x) const override {
    check(x);
    const double gap = 0.5 * (x(0, 0) + x(1, 0)) - 0.5 * (x(2, 0) + x(3, 0));
    const double dg = dsabs(gap);
    const double d12 = 0.5 * lambda_ * dsabs(x(0, 0) - x(1, 0));
    const double d34 = 0.5 * lambda_ * dsabs(x(2, 0) - x(3, 0));
    RowMatrix g(4, 1);
    g << 0.5 * dg + d12, 0.5 * dg - d12, -0.5 * dg + d34, -0.5 * dg - d34;
    return g;
  }

 private:
  void check(const RowMatrix& x) const {
    check_arity(x);
    if (x.cols() != 1) throw DimensionError("brightness_cluster expects scalar outputs");
  }
  double sabs(double t) const { return std::sqrt(t * t + eps_ * eps_); }
  double dsabs(double t) const { return t / sabs(t); }

  double lambda_;
  double eps_;
};

}  // namespace

ObjectivePtr objective_pairwise_l2(std::size_t k) {
  if (k < 2) throw SpecError("pairwise_l2 requires k >= 2");
  return std::make_shared<PairwiseL2>(k);
}

ObjectivePtr objective_pairwise_sq(std::size_t k) {
  if (k < 2) throw SpecError("pairwise_sq requires k >= 2");
  return std::make_shared<PairwiseSq>(k);
}

ObjectivePtr objective_rbf(std::size_t k, double tau) {
  if (k < 2) throw SpecError("rbf requires k >= 2");
  if (!(tau > 0.0)) throw SpecError("rbf bandwidth must be positive");
  return std::make_shared<RbfSimilarity>(k, tau);
}

ObjectivePtr objective_brightness_cluster(double lambda, double eps) {
  if (!(lambda >= 0.0) || !(eps > 0.0)) throw SpecError("brightness_cluster: lambda >= 0 and eps > 0 required");
  return std::make_shared<BrightnessCluster>(lambda, eps);
}

double brightness_cluster_exact(double b1, double b2, double b3, double b4, double lambda) {
  return std::abs(0.5 * (b1 + b2) - 0.5 * (b3 + b4)) + 0.5 * lambda * (std::abs(b1 - b2) + std::abs(b3 - b4));
}

// ---------------------------------------------------------------------------

NoiseObjective::NoiseObjective(GeneratorPtr generator, ObjectivePtr objective)
    : generator_(std::move(generator)), objective_(std::move(objective)) {
  if (!generator_ || !objective_) throw SpecError("noise objective needs a generator and an objective");
}

double NoiseObjective::value(const RowMatrix& z) const { return objective_->evaluate(generator_->evaluate_rows(z)); }

double NoiseObjective::value_and_gradient(const RowMatrix& z, RowMatrix& grad) const {
  const RowMatrix x = generator_->evaluate_rows(z);
  grad = generator_->vjp_rows(z, objective_->gradient(x));
  return objective_->evaluate(x);
}

double finite_difference_error(const std::function<double(const Vector&)>& f, const Vector& x, const Vector& grad,
                               double step) {
  double worst = 0.0;
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + step;
    const double up = f(probe);
    probe(i) = x(i) - step;
    const double down = f(probe);
    probe(i) = x(i);
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max({1.0, std::abs(fd), std::abs(grad(i))});
    worst = std::max(worst, std::abs(fd - grad(i)) / denom);
  }
  return worst;
}

}  // namespace noisecouple
