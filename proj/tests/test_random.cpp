#include "noisecouple/parallel.hpp"
#include "noisecouple/random.hpp"

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <vector>

using namespace noisecouple;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  CHECK(Philox4x32::block(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}) ==
        C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
        C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("inverse normal CDF inverts erfc") {
  for (double p : {1e-300, 1e-20, 1e-8, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.97575, 0.999, 1 - 1e-10}) {
    CAPTURE(p);
    const double x = inverse_normal_cdf(p);
    CHECK(std::abs(normal_cdf(x) - p) <= 1e-13 * std::max(p, 1e-3));
  }
  CHECK(inverse_normal_cdf(0.5) == 0.0);
  CHECK(inverse_normal_cdf(0.2) == doctest::Approx(-inverse_normal_cdf(0.8)).epsilon(1e-14));
}

TEST_CASE("streams are reproducible and distinct") {
  RandomStream a(7, 3), b(7, 3), c(7, 4), e(8, 3);
  std::vector<double> xa(100), xb(100), xc(100), xe(100);
  a.fill_normal(xa);
  b.fill_normal(xb);
  c.fill_normal(xc);
  e.fill_normal(xe);
  CHECK(xa == xb);
  CHECK(xa != xc);
  CHECK(xa != xe);
  CHECK(RandomStream(7, 0).substream(4).stream_id() == 4);
}

TEST_CASE("fill_normal matches repeated normal()") {
  RandomStream a(1, 1), b(1, 1);
  std::vector<double> x(33);
  a.fill_normal(x);
  for (double v : x) CHECK(v == b.normal());
}

TEST_CASE("uniforms and normals have the right moments") {
  RandomStream rs(99, 0);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0, sr = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rs.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = rs.normal();
    sn += z;
    sn2 += z * z;
    sr += rs.rademacher();
  }
  CHECK(std::abs(su / n - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sn / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(sn2 / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(sr / n) < 4.0 / std::sqrt(n));
}

TEST_CASE("parallel_for runs every task once and propagates exceptions") {
  std::vector<std::atomic<int>> hits(257);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 3) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("chunk ranges tile the index set") {
  for (std::size_t n : {0u, 1u, 63u, 64u, 65u, 1000u}) {
    std::size_t expect = 0;
    for (std::size_t c = 0; c < kDefaultChunks; ++c) {
      const ChunkRange r = chunk_range(n, kDefaultChunks, c);
      CHECK(r.begin == expect);
      CHECK(r.end >= r.begin);
      expect = r.end;
    }
    CHECK(expect == n);
  }
}

TEST_CASE("thread count honours NOISECOUPLE_THREADS") {
  setenv("NOISECOUPLE_THREADS", "3", 1);
  CHECK(thread_count() == 3);
  setenv("NOISECOUPLE_THREADS", "0", 1);
  CHECK(thread_count() >= 1);
  unsetenv("NOISECOUPLE_THREADS");
}
