#include "noisecouple/sampler.hpp"

#include "noisecouple/parallel.hpp"

#include <cmath>

namespace noisecouple {

namespace {

void fill_normal(RandomStream& stream, RowMatrix& m) {
  stream.fill_normal(std::span<double>(m.data(), static_cast<std::size_t>(m.size())));
}

}  // namespace

Sampler::Sampler(CouplingSpec spec) : spec_(std::move(spec)) {
  switch (spec_.kind()) {
    case CouplingKind::Identical: route_ = Route::Identical; break;
    case CouplingKind::Independent: route_ = Route::Independent; break;
    case CouplingKind::Antithetic: route_ = Route::Antithetic; break;
    case CouplingKind::Repulsive: route_ = Route::Repulsive; break;
    case CouplingKind::Equicorrelated: {
      const double c = spec_.c();
      if (c == 0.0) {
        route_ = Route::Independent;
      } else if (c == 1.0) {
        route_ = Route::Identical;
      } else if (c == equicorrelation_lower_bound(spec_.k())) {
        route_ = Route::Repulsive;
      } else {
        route_ = Route::Matrix;
        factor_ = factor_correlation(equicorrelated_matrix(spec_.k(), c), spec_.k()).entries();
      }
      break;
    }
    case CouplingKind::Matrix:
      route_ = Route::Matrix;
      factor_ = spec_.coupling_matrix().entries();
      break;
    case CouplingKind::Subspace: {
      route_ = Route::Subspace;
      const SubspaceSpec& sub = spec_.subspace_spec();
      inner_ = std::make_shared<const Sampler>(sub.inner);
      outer_ = std::make_shared<const Sampler>(sub.outer);
      break;
    }
  }
}

void Sampler::draw(RandomStream& stream, RowMatrix& out) const {
  const auto k = static_cast<Eigen::Index>(spec_.k());
  const auto d = static_cast<Eigen::Index>(spec_.d());
  out.resize(k, d);
  switch (route_) {
    case Route::Identical: {
      RowMatrix base(1, d);
      fill_normal(stream, base);
      out = base.replicate(k, 1);
      return;
    }
    case Route::Independent: fill_normal(stream, out); return;
    case Route::Antithetic: {
      RowMatrix base(1, d);
      fill_normal(stream, base);
      out.row(0) = base.row(0);
      out.row(1) = -base.row(0);
      return;
    }
    case Route::Repulsive: {
      fill_normal(stream, out);
      const double scale = std::sqrt(static_cast<double>(k) / static_cast<double>(k - 1));
      for (Eigen::Index col = 0; col < d; ++col) {
        // Neumaier-compensated column mean.
        double sum = 0.0, comp = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) {
          const double v = out(i, col);
          const double t = sum + v;
          comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
          sum = t;
        }
        const double mean = (sum + comp) / static_cast<double>(k);
        for (Eigen::Index i = 0; i < k; ++i) out(i, col) = scale * (out(i, col) - mean);
      }
      return;
    }
    case Route::Matrix: {
      RowMatrix base(factor_.cols(), d);
      fill_normal(stream, base);
      out.noalias() = factor_ * base;
      return;
    }
    case Route::Subspace: {
      const Matrix& basis = spec_.subspace_spec().basis;
      RowMatrix inner, outer;
      inner_->draw(stream, inner);
      outer_->draw(stream, outer);
      const Matrix outer_coords = outer * basis;
      out.noalias() = inner * basis.transpose();
      out += outer;
      out.noalias() -= outer_coords * basis.transpose();
      return;
    }
  }
}

NoiseBatch Sampler::operator()(RandomStream stream) const {
  NoiseBatch batch{RowMatrix(), spec_, stream.seed(), stream.stream_id()};
  draw(stream, batch.vectors);
  return batch;
}

NoiseBatch sample(const CouplingSpec& spec, RandomStream stream) { return Sampler(spec)(stream); }

std::vector<NoiseBatch> sample_many(const CouplingSpec& spec, const RandomStream& stream, std::size_t n) {
  const Sampler sampler(spec);
  std::vector<NoiseBatch> out(n, NoiseBatch{RowMatrix(), spec, stream.seed(), 0});
  parallel_for(n, [&](std::size_t i) { out[i] = sampler(stream.substream(i)); });
  return out;
}

}  // namespace noisecouple
