#include "noisecouple/core.hpp"
#include "noisecouple/random.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace noisecouple;

namespace {

// Closed-form spectrum of the equicorrelated matrix: 1 + (k-1)c once, 1 - c with multiplicity k-1.
std::vector<double> equicorr_spectrum(std::size_t k, double c) {
  std::vector<double> ev(k - 1, 1.0 - c);
  ev.push_back(1.0 + (static_cast<double>(k) - 1.0) * c);
  std::sort(ev.begin(), ev.end());
  return ev;
}

Matrix random_gaussian(RandomStream& rs, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rs.normal();
  return m;
}

Matrix random_correlation(RandomStream& rs, Eigen::Index k, Eigen::Index rank) {
  const Matrix b = random_gaussian(rs, k, rank);
  Matrix r = b * b.transpose();
  const Vector s = r.diagonal().cwiseSqrt().cwiseInverse();
  r = s.asDiagonal() * r * s.asDiagonal();
  r.diagonal().setOnes();
  return r;
}

}  // namespace

TEST_CASE("equicorrelated matrix at k=3, c=-0.5 has spectrum {0, 1.5, 1.5}") {
  const SampleCorrelation r = equicorrelated_matrix(3, -0.5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(r(i, j) == doctest::Approx(i == j ? 1.0 : -0.5));
  const Vector ev = r.eigenvalues();
  CHECK(std::abs(ev(0)) < 1e-12);
  CHECK(ev(1) == doctest::Approx(1.5));
  CHECK(ev(2) == doctest::Approx(1.5));
}

TEST_CASE("equicorrelated matrix with c=0 is the identity") {
  const SampleCorrelation r = equicorrelated_matrix(2, 0.0);
  CHECK((r.entries() - Matrix::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("infeasible equicorrelation reports the valid interval") {
  try {
    (void)equicorrelated_matrix(3, -0.6);
    FAIL("expected FeasibilityError");
  } catch (const FeasibilityError& e) {
    CHECK(std::string(e.what()).find("[-0.5, 1]") != std::string::npos);
    CHECK(e.lower() == doctest::Approx(-0.5));
    CHECK(e.upper() == 1.0);
    CHECK(e.requested() == -0.6);
  }
  CHECK_THROWS_AS(equicorrelated_matrix(4, 1.0 + 1e-9), FeasibilityError);
  CHECK_THROWS_AS(equicorrelated_matrix(1, 0.0), SpecError);
}

TEST_CASE("feasibility boundary for k in 2..8") {
  for (std::size_t k = 2; k <= 8; ++k) {
    CAPTURE(k);
    const double lo = -1.0 / (static_cast<double>(k) - 1.0);
    CHECK(equicorrelation_lower_bound(k) == lo);
    CHECK_NOTHROW(equicorrelated_matrix(k, lo));
    CHECK_NOTHROW(equicorrelated_matrix(k, 1.0));
    CHECK_THROWS_AS(equicorrelated_matrix(k, lo - 1e-3), FeasibilityError);
    const Vector ev = equicorrelated_matrix(k, lo).eigenvalues();
    CHECK(std::abs(ev(0)) < 1e-10);
    for (double c : {lo, lo / 2.0, 0.0, 0.3, 1.0}) {
      const auto expected = equicorr_spectrum(k, c);
      const Vector got = equicorrelated_matrix(k, c).eigenvalues();
      for (std::size_t i = 0; i < k; ++i) CHECK(got(static_cast<Eigen::Index>(i)) == doctest::Approx(expected[i]).scale(1.0));
    }
  }
}

TEST_CASE("coupling matrix validation") {
  CHECK_NOTHROW(CouplingMatrix(Matrix::Identity(3, 3)));
  Matrix a = Matrix::Identity(2, 2);
  a(0, 0) = 1.0 + 1e-6;
  CHECK_THROWS_AS(CouplingMatrix{a}, SpecError);
  CHECK_THROWS_AS(CouplingMatrix::normalized(Matrix::Zero(2, 2)), SpecError);
  const CouplingMatrix n = CouplingMatrix::normalized((Matrix(2, 2) << 3, 4, 0, 2).finished());
  CHECK(n.entries()(0, 0) == doctest::Approx(0.6));
  CHECK(n.entries()(0, 1) == doctest::Approx(0.8));
  CHECK(n.max_row_norm_error() < 1e-15);
}

TEST_CASE("spec invariants") {
  CHECK_THROWS_AS(CouplingSpec::repulsive(1, 4), SpecError);
  CHECK_THROWS_AS(CouplingSpec::equicorrelated(3, 4, -0.6), FeasibilityError);
  CHECK_THROWS_AS(CouplingSpec::independent(2, 0), SpecError);
  CHECK_THROWS_AS(CouplingSpec::matrix(CouplingMatrix::identity(3), 0), SpecError);
  const CouplingSpec a = CouplingSpec::antithetic(5);
  CHECK(a.k() == 2);
  CHECK(a.d() == 5);
  CHECK(parse_kind("equicorr") == CouplingKind::Equicorrelated);
  CHECK(to_string(CouplingKind::Repulsive) == "repulsive");
  CHECK_THROWS_AS(parse_kind("gaussian"), SpecError);
}

TEST_CASE("correlation_of for the catalog") {
  const std::size_t d = 4;
  CHECK((effective_correlation(CouplingSpec::identical(3, d)).entries() - Matrix::Ones(3, 3)).norm() == 0.0);
  CHECK((effective_correlation(CouplingSpec::independent(3, d)).entries() - Matrix::Identity(3, 3)).norm() == 0.0);
  const Matrix anti = effective_correlation(CouplingSpec::antithetic(d)).entries();
  CHECK(anti(0, 1) == -1.0);
  CHECK(anti(1, 0) == -1.0);

  SUBCASE("repulsive equals the equicorrelated boundary exactly") {
    for (std::size_t k = 2; k <= 6; ++k) {
      const Matrix rep = effective_correlation(CouplingSpec::repulsive(k, d)).entries();
      const Matrix eq = equicorrelated_matrix(k, equicorrelation_lower_bound(k)).entries();
      CHECK((rep - eq).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(effective_correlation(CouplingSpec::repulsive(4, d))(0, 3) == doctest::Approx(-1.0 / 3.0));
  }
  SUBCASE("matrix coupling: identity and the centered repulsive matrix") {
    CHECK((effective_correlation(CouplingSpec::matrix(CouplingMatrix::identity(4), d)).entries() -
           Matrix::Identity(4, 4))
              .norm() < 1e-15);
    // sqrt(k/(k-1)) (I - 11^T/k) at k = 3, multiplied out by hand: diagonal 1, off-diagonal -1/2.
    const double s = std::sqrt(1.5);
    Matrix a(3, 3);
    a << s * 2.0 / 3.0, -s / 3.0, -s / 3.0, -s / 3.0, s * 2.0 / 3.0, -s / 3.0, -s / 3.0, -s / 3.0, s * 2.0 / 3.0;
    const Matrix r = effective_correlation(CouplingSpec::matrix(CouplingMatrix::normalized(a), d)).entries();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(r(i, j) == doctest::Approx(i == j ? 1.0 : -0.5));
    CHECK((CouplingMatrix::repulsive(3).entries() - CouplingMatrix::normalized(a).entries()).norm() < 1e-14);
  }
}

TEST_CASE("subspace correlation is a tagged pair") {
  const std::vector<std::size_t> coords{0, 1};
  const SubspaceSpec sub = SubspaceSpec::make(SubspaceSpec::coordinate_basis(6, coords),
                                              CouplingSpec::identical(3, 1), CouplingSpec::independent(3, 1));
  const CouplingSpec spec = CouplingSpec::subspace(sub);
  CHECK(spec.d() == 6);
  const auto cs = correlation_of(spec);
  REQUIRE(std::holds_alternative<SubspaceCorrelation>(cs));
  const auto& sc = std::get<SubspaceCorrelation>(cs);
  CHECK(sc.on_subspace(0, 1) == 1.0);
  CHECK(sc.on_complement(0, 1) == 0.0);
  CHECK(sc.averaged()(0, 1) == doctest::Approx(2.0 / 6.0));

  Matrix skew = SubspaceSpec::coordinate_basis(4, coords);
  skew(2, 0) = 0.1;
  CHECK_THROWS_AS(SubspaceSpec::make(skew, CouplingSpec::identical(2, 1), CouplingSpec::independent(2, 1)), SpecError);
  CHECK_THROWS_AS(SubspaceSpec::make(SubspaceSpec::coordinate_basis(4, coords), CouplingSpec::identical(2, 1),
                                     CouplingSpec::independent(3, 1)),
                  SpecError);
}

TEST_CASE("SampleCorrelation rejects malformed input") {
  Matrix r = Matrix::Identity(3, 3);
  r(0, 1) = 0.5;
  CHECK_THROWS_AS(SampleCorrelation{r}, SpecError);  // asymmetric
  r(1, 0) = 0.5;
  r(2, 2) = 1.1;
  CHECK_THROWS_AS(SampleCorrelation{r}, SpecError);  // diagonal
  Matrix bad = Matrix::Ones(3, 3) * -0.9;
  bad.diagonal().setOnes();
  CHECK_THROWS_AS(SampleCorrelation{bad}, NotPSDError);
}

TEST_CASE("factor_correlation examples") {
  SUBCASE("equicorrelated(3, -1/2), r = 3") {
    const SampleCorrelation r = equicorrelated_matrix(3, -0.5);
    const CouplingMatrix a = factor_correlation(r, 3);
    CHECK((a.gram() - r.entries()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(a.max_row_norm_error() < 1e-9);
    CHECK(numerical_rank(r) == 2);
    CHECK_THROWS_AS(factor_correlation(r, 1), RankError);
    CHECK_NOTHROW(factor_correlation(r, 2));
  }
  SUBCASE("identity factors to a signed permutation") {
    const CouplingMatrix a = factor_correlation(SampleCorrelation(Matrix::Identity(4, 4)), 4);
    CHECK((a.gram() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a.entries().cwiseAbs().colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("all-ones is rank one with a consistently signed column") {
    const CouplingMatrix a = factor_correlation(SampleCorrelation(Matrix::Ones(3, 3)), 1);
    REQUIRE(a.r() == 1);
    for (Eigen::Index i = 0; i < 3; ++i) CHECK(a.entries()(i, 0) == doctest::Approx(1.0));
  }
  SUBCASE("padding: r larger than k adds zero columns") {
    const CouplingMatrix a = factor_correlation(equicorrelated_matrix(3, 0.2), 5);
    CHECK(a.r() == 5);
    CHECK(a.entries().col(3).norm() == 0.0);
    CHECK((a.gram() - equicorrelated_matrix(3, 0.2).entries()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("deterministic sign convention and column order") {
    const CouplingMatrix a = factor_correlation(equicorrelated_matrix(4, -0.2), 4);
    for (Eigen::Index j = 0; j < a.entries().cols(); ++j) {
      const auto col = a.entries().col(j);
      Eigen::Index first = 0;
      while (first < col.size() && std::abs(col(first)) <= 1e-12) ++first;
      if (first < col.size()) CHECK(col(first) > 0.0);
    }
    const Vector norms = a.entries().colwise().squaredNorm();
    for (Eigen::Index j = 1; j < norms.size(); ++j) CHECK(norms(j) <= norms(j - 1) + 1e-12);
  }
}

TEST_CASE("factor round trip on random PSD correlations") {
  RandomStream rs(2024, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = static_cast<Eigen::Index>(2 + trial % 5);
    const auto rank = static_cast<Eigen::Index>(1 + trial % static_cast<int>(k));
    const SampleCorrelation r(random_correlation(rs, k, rank));
    const CouplingMatrix a = factor_correlation(r, static_cast<std::size_t>(k));
    CHECK((a.gram() - r.entries()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(a.max_row_norm_error() < 1e-9);
    CHECK(numerical_rank(r) <= static_cast<std::size_t>(rank));
  }
}

TEST_CASE("NoiseBatch row sums") {
  NoiseBatch b{(RowMatrix(2, 3) << 1, 2, 3, -1, -2, -2.5).finished(), CouplingSpec::independent(2, 3), 0, 0};
  CHECK(b.max_row_sum() == doctest::Approx(0.5));
  CHECK(b.k() == 2);
  CHECK(b.d() == 3);
}
