#include "noisecouple/random.hpp"
#include "noisecouple/sampler.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>

using namespace noisecouple;

TEST_CASE("repulsive rows sum to zero") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const NoiseBatch b = sample(CouplingSpec::repulsive(3, 2), RandomStream(seed, 0));
    CHECK(b.max_row_sum() < 1e-12);
  }
  const NoiseBatch big = sample(CouplingSpec::repulsive(6, 4096), RandomStream(1, 2));
  CHECK(big.max_row_sum() < 1e-6 * std::sqrt(6.0 * 4096.0));
}

TEST_CASE("repulsive follows the centering recipe on the same uniforms") {
  // Oracle: draw k i.i.d. rows from the same stream, center, rescale by sqrt(k/(k-1)).
  const std::size_t k = 4, d = 5;
  RandomStream oracle(3, 9);
  RowMatrix u(k, d);
  oracle.fill_normal(std::span<double>(u.data(), k * d));
  const RowMatrix expect = std::sqrt(4.0 / 3.0) * (u.rowwise() - u.colwise().mean());
  const NoiseBatch got = sample(CouplingSpec::repulsive(k, d), RandomStream(3, 9));
  CHECK((got.vectors - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("identical, antithetic and independent") {
  const NoiseBatch same = sample(CouplingSpec::identical(4, 7), RandomStream(5, 0));
  for (Eigen::Index i = 1; i < 4; ++i) CHECK(same.vectors.row(i) == same.vectors.row(0));
  const NoiseBatch anti = sample(CouplingSpec::antithetic(7), RandomStream(5, 0));
  CHECK(anti.vectors.row(1) == (-anti.vectors.row(0)).eval());
  const NoiseBatch ind = sample(CouplingSpec::independent(3, 7), RandomStream(5, 0));
  CHECK(ind.vectors.row(0) != ind.vectors.row(1));
}

TEST_CASE("batches carry their provenance") {
  const CouplingSpec spec = CouplingSpec::equicorrelated(3, 6, -0.25);
  const NoiseBatch b = sample(spec, RandomStream(42, 17));
  CHECK(b.seed == 42);
  CHECK(b.stream_id == 17);
  CHECK(b.k() == 3);
  CHECK(b.d() == 6);
  CHECK(b.spec.kind() == CouplingKind::Equicorrelated);
}

TEST_CASE("same seed and stream give bitwise identical draws") {
  for (const CouplingSpec& spec :
       {CouplingSpec::repulsive(3, 8), CouplingSpec::equicorrelated(4, 8, 0.3),
        CouplingSpec::matrix(CouplingMatrix::normalized(Matrix::Ones(2, 3)), 8)}) {
    const NoiseBatch a = sample(spec, RandomStream(11, 2));
    const NoiseBatch b = sample(spec, RandomStream(11, 2));
    CHECK(a.vectors == b.vectors);
    CHECK(a.vectors != sample(spec, RandomStream(11, 3)).vectors);
  }
}

TEST_CASE("sample_many") {
  SUBCASE("repulsive k=2 is antithetic") {
    const auto batches = sample_many(CouplingSpec::repulsive(2, 1), RandomStream(7, 0), 3);
    REQUIRE(batches.size() == 3);
    for (const auto& b : batches) CHECK(b.vectors(1, 0) == doctest::Approx(-b.vectors(0, 0)).epsilon(1e-15));
  }
  SUBCASE("n=1 matches sample on stream offset 0") {
    const CouplingSpec spec = CouplingSpec::equicorrelated(3, 4, -0.4);
    const auto batches = sample_many(spec, RandomStream(8, 5), 1);
    CHECK(batches[0].vectors == sample(spec, RandomStream(8, 5)).vectors);
  }
  SUBCASE("replicates use consecutive sub-streams") {
    const CouplingSpec spec = CouplingSpec::independent(2, 3);
    const auto batches = sample_many(spec, RandomStream(8, 5), 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(batches[i].vectors == sample(spec, RandomStream(8, 5 + i)).vectors);
    CHECK((batches[0].vectors.array() != batches[1].vectors.array()).all());
  }
  SUBCASE("output does not depend on the worker count") {
    const CouplingSpec spec = CouplingSpec::repulsive(3, 16);
    setenv("NOISECOUPLE_THREADS", "1", 1);
    const auto one = sample_many(spec, RandomStream(1, 0), 50);
    setenv("NOISECOUPLE_THREADS", "4", 1);
    const auto four = sample_many(spec, RandomStream(1, 0), 50);
    unsetenv("NOISECOUPLE_THREADS");
    for (std::size_t i = 0; i < 50; ++i) CHECK(one[i].vectors == four[i].vectors);
  }
}

TEST_CASE("equicorrelated routes") {
  const std::size_t d = 5;
  // Special values take the dedicated routes; compare against those specs directly.
  CHECK(sample(CouplingSpec::equicorrelated(3, d, 0.0), RandomStream(2, 0)).vectors ==
        sample(CouplingSpec::independent(3, d), RandomStream(2, 0)).vectors);
  CHECK(sample(CouplingSpec::equicorrelated(3, d, 1.0), RandomStream(2, 0)).vectors ==
        sample(CouplingSpec::identical(3, d), RandomStream(2, 0)).vectors);
  CHECK(sample(CouplingSpec::equicorrelated(3, d, -0.5), RandomStream(2, 0)).vectors ==
        sample(CouplingSpec::repulsive(3, d), RandomStream(2, 0)).vectors);
  // Other c use A U with A the factor of R_c.
  const CouplingMatrix a = factor_correlation(equicorrelated_matrix(3, -0.2), 3);
  const RowMatrix via_matrix = sample(CouplingSpec::matrix(a, d), RandomStream(2, 0)).vectors;
  CHECK((sample(CouplingSpec::equicorrelated(3, d, -0.2), RandomStream(2, 0)).vectors - via_matrix).norm() < 1e-14);
}

TEST_CASE("matrix coupling is A U") {
  Matrix a(2, 3);
  a << 0.6, 0.8, 0.0, 0.0, 0.6, 0.8;
  const CouplingSpec spec = CouplingSpec::matrix(CouplingMatrix(a), 4);
  RandomStream oracle(9, 1);
  RowMatrix u(3, 4);
  oracle.fill_normal(std::span<double>(u.data(), 12));
  const RowMatrix expect = a * u;
  CHECK((sample(spec, RandomStream(9, 1)).vectors - expect).norm() < 1e-14);
}

TEST_CASE("subspace composition keeps the complement independent of the subspace draw") {
  const std::vector<std::size_t> coords{1, 3};
  const SubspaceSpec sub = SubspaceSpec::make(SubspaceSpec::coordinate_basis(5, coords), CouplingSpec::repulsive(3, 1),
                                              CouplingSpec::identical(3, 1));
  const NoiseBatch b = sample(CouplingSpec::subspace(sub), RandomStream(4, 0));
  // Repulsive on coordinates 1 and 3: they sum to zero across samples.
  CHECK(std::abs(b.vectors.col(1).sum()) < 1e-12);
  CHECK(std::abs(b.vectors.col(3).sum()) < 1e-12);
  // Identical on the complement: rows agree on coordinates 0, 2, 4.
  for (Eigen::Index c : {0, 2, 4}) {
    CHECK(b.vectors(0, c) == doctest::Approx(b.vectors(1, c)).epsilon(1e-14));
    CHECK(b.vectors(0, c) == doctest::Approx(b.vectors(2, c)).epsilon(1e-14));
  }
}
