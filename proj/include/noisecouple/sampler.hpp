#pragma once

#include "noisecouple/core.hpp"
#include "noisecouple/random.hpp"

#include <memory>
#include <vector>

namespace noisecouple {

/// Draws NoiseBatch realizations for one spec. Construction performs any
/// factorization the spec needs, so repeated draws are cheap.
class Sampler {
 public:
  explicit Sampler(CouplingSpec spec);

  const CouplingSpec& spec() const noexcept { return spec_; }

  /// Fills `out` (resized to k x d) consuming draws from `stream`.
  void draw(RandomStream& stream, RowMatrix& out) const;
  NoiseBatch operator()(RandomStream stream) const;

 private:
  enum class Route { Identical, Independent, Antithetic, Repulsive, Matrix, Subspace };

  CouplingSpec spec_;
  Route route_;
  Matrix factor_;  // Matrix route: k x r
  std::shared_ptr<const Sampler> inner_;
  std::shared_ptr<const Sampler> outer_;
};

NoiseBatch sample(const CouplingSpec& spec, RandomStream stream);

/// Batch i is drawn from sub-stream stream_id + i, so it is identical whether
/// produced alone or as part of a longer run.
std::vector<NoiseBatch> sample_many(const CouplingSpec& spec, const RandomStream& stream, std::size_t n);

}  // namespace noisecouple
