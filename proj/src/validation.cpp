#include "noisecouple/validation.hpp"

#include "noisecouple/parallel.hpp"
#include "noisecouple/sampler.hpp"
#include "noisecouple/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace noisecouple {

using nlohmann::json;

namespace {

constexpr std::size_t kMinReplications = 1000;

void require_n(std::size_t n) {
  if (n < kMinReplications) throw std::invalid_argument("validation requires n >= 1000 replications");
}

void check_shape(const RowMatrix& z, std::size_t k, std::size_t d) {
  if (static_cast<std::size_t>(z.rows()) != k || static_cast<std::size_t>(z.cols()) != d) {
    throw DimensionError("batch source produced a batch of the wrong shape");
  }
}

}  // namespace

BatchSource spec_source(const CouplingSpec& spec, const RandomStream& stream) {
  auto sampler = std::make_shared<const Sampler>(spec);
  return [sampler, stream](std::size_t index, RowMatrix& out) {
    RandomStream s = stream.substream(index);
    sampler->draw(s, out);
  };
}

void Report::add(std::string name, double value, double threshold, bool ok) {
  statistics.push_back({std::move(name), value, threshold, ok});
  pass = pass && ok;
}

json Report::to_json() const {
  json stats = json::array();
  json thresholds = json::array();
  for (const auto& s : statistics) {
    stats.push_back({{"name", s.name}, {"value", s.value}, {"pass", s.pass}});
    thresholds.push_back({{"name", s.name}, {"value", s.threshold}});
  }
  return {{"check", check}, {"spec", spec}, {"n", n}, {"statistics", stats}, {"thresholds", thresholds}, {"pass", pass}};
}

// ---------------------------------------------------------------------------
// Marginals
// ---------------------------------------------------------------------------

MomentReport validate_marginals(const CouplingSpec& spec, const RandomStream& stream, std::size_t n) {
  return validate_marginals(spec, spec_source(spec, stream), n);
}

MomentReport validate_marginals(const CouplingSpec& spec, const BatchSource& source, std::size_t n) {
  require_n(n);
  const std::size_t k = spec.k();
  const std::size_t d = spec.d();
  const std::size_t coords = k * d;
  const std::size_t chunks = std::min(kDefaultChunks, n);

  // Raw power sums S1..S4 per coordinate, one accumulator per chunk.
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(4 * coords, 0.0));
  parallel_for(chunks, [&](std::size_t c) {
    const ChunkRange range = chunk_range(n, chunks, c);
    auto& acc = partial[c];
    RowMatrix z;
    for (std::size_t rep = range.begin; rep < range.end; ++rep) {
      source(rep, z);
      check_shape(z, k, d);
      const double* p = z.data();
      for (std::size_t q = 0; q < coords; ++q) {
        const double x = p[q];
        const double x2 = x * x;
        acc[4 * q] += x;
        acc[4 * q + 1] += x2;
        acc[4 * q + 2] += x2 * x;
        acc[4 * q + 3] += x2 * x2;
      }
    }
  });
  std::vector<double> sums(4 * coords, 0.0);
  for (const auto& acc : partial)
    for (std::size_t q = 0; q < sums.size(); ++q) sums[q] += acc[q];

  MomentReport rep;
  rep.n = n;
  rep.k = k;
  rep.d = d;
  const double nd = static_cast<double>(n);
  rep.mean_threshold = 4.0 / std::sqrt(nd);
  rep.variance_threshold = 5.0 * std::sqrt(2.0 / nd);
  rep.kurtosis_threshold = 10.0 * std::sqrt(24.0 / nd);
  for (std::size_t i = 0; i < k; ++i) {
    double norm2 = 0.0, max_mean = 0.0, max_var = 0.0, max_kurt = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
      const std::size_t q = i * d + l;
      const double m1 = sums[4 * q] / nd;
      const double r2 = sums[4 * q + 1] / nd;
      const double r3 = sums[4 * q + 2] / nd;
      const double r4 = sums[4 * q + 3] / nd;
      const double var = r2 - m1 * m1;
      const double m4 = r4 - 4.0 * m1 * r3 + 6.0 * m1 * m1 * r2 - 3.0 * m1 * m1 * m1 * m1;
      const double kurt = var > 0.0 ? m4 / (var * var) - 3.0 : INFINITY;
      norm2 += m1 * m1;
      max_mean = std::max(max_mean, std::abs(m1));
      max_var = std::max(max_var, std::abs(var - 1.0));
      max_kurt = std::max(max_kurt, std::abs(kurt));
    }
    rep.mean_norm.push_back(std::sqrt(norm2));
    rep.max_abs_mean.push_back(max_mean);
    rep.max_var_dev.push_back(max_var);
    rep.max_abs_kurtosis.push_back(max_kurt);
    rep.mean_pass = rep.mean_pass && max_mean <= rep.mean_threshold;
    rep.variance_pass = rep.variance_pass && max_var <= rep.variance_threshold;
    rep.kurtosis_pass = rep.kurtosis_pass && max_kurt <= rep.kurtosis_threshold;
  }
  rep.pass = rep.mean_pass && rep.variance_pass && rep.kurtosis_pass;
  return rep;
}

Report MomentReport::report(const CouplingSpec& spec) const {
  Report r;
  r.check = "marginals";
  r.spec = spec_to_json(spec);
  r.n = n;
  for (std::size_t i = 0; i < k; ++i) {
    const std::string idx = "[" + std::to_string(i) + "]";
    r.add("max_abs_mean" + idx, max_abs_mean[i], mean_threshold, max_abs_mean[i] <= mean_threshold);
    r.add("max_variance_deviation" + idx, max_var_dev[i], variance_threshold, max_var_dev[i] <= variance_threshold);
    r.add("max_abs_excess_kurtosis" + idx, max_abs_kurtosis[i], kurtosis_threshold,
          max_abs_kurtosis[i] <= kurtosis_threshold);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cross covariance
// ---------------------------------------------------------------------------

CovarianceReport validate_cross_covariance(const CouplingSpec& spec, const RandomStream& stream, std::size_t n) {
  return validate_cross_covariance(spec, spec_source(spec, stream), n);
}

CovarianceReport validate_cross_covariance(const CouplingSpec& spec, const BatchSource& source, std::size_t n) {
  require_n(n);
  const std::size_t k = spec.k();
  const std::size_t d = spec.d();
  const auto ki = static_cast<Eigen::Index>(k);
  const std::size_t sc = std::min(d, CovarianceReport::kStructureCoords);
  const auto sci = static_cast<Eigen::Index>(sc);
  const bool has_pair = k >= 2;
  const std::size_t chunks = std::min(kDefaultChunks, n);

  struct Acc {
    Matrix sum;
    Matrix sum_sq;
    Matrix cross;
  };
  std::vector<Acc> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const ChunkRange range = chunk_range(n, chunks, c);
    Acc& acc = partial[c];
    acc.sum = Matrix::Zero(ki, ki);
    acc.sum_sq = Matrix::Zero(ki, ki);
    acc.cross = Matrix::Zero(sci, sci);
    RowMatrix z;
    for (std::size_t rep = range.begin; rep < range.end; ++rep) {
      source(rep, z);
      check_shape(z, k, d);
      const Matrix g = (z * z.transpose()) / static_cast<double>(d);
      acc.sum += g;
      acc.sum_sq += g.cwiseProduct(g);
      if (has_pair) acc.cross.noalias() += z.row(0).head(sci).transpose() * z.row(1).head(sci);
    }
  });

  CovarianceReport rep;
  rep.n = n;
  rep.d = d;
  Matrix sum = Matrix::Zero(ki, ki), sum_sq = Matrix::Zero(ki, ki), cross = Matrix::Zero(sci, sci);
  for (const auto& acc : partial) {
    sum += acc.sum;
    sum_sq += acc.sum_sq;
    cross += acc.cross;
  }
  const double nd = static_cast<double>(n);
  rep.estimate = sum / nd;
  const Matrix var = (sum_sq / nd - rep.estimate.cwiseProduct(rep.estimate)).cwiseMax(0.0);
  rep.stderr_ = (var / (nd - 1.0)).cwiseSqrt();
  rep.expected = effective_correlation(spec).entries();
  rep.threshold = 5.0 / std::sqrt(nd * static_cast<double>(d));
  rep.structure_threshold = 5.0 / std::sqrt(nd);
  for (Eigen::Index i = 0; i < ki; ++i)
    for (Eigen::Index j = i + 1; j < ki; ++j)
      rep.max_deviation = std::max(rep.max_deviation, std::abs(rep.estimate(i, j) - rep.expected(i, j)));
  if (has_pair) {
    const Matrix mean_cross = cross / nd;
    for (Eigen::Index l = 0; l < sci; ++l)
      for (Eigen::Index m = 0; m < sci; ++m)
        if (l != m) rep.structure_max_offdiag = std::max(rep.structure_max_offdiag, std::abs(mean_cross(l, m)));
  }
  rep.pairs_pass = rep.max_deviation <= rep.threshold;
  rep.structure_pass = rep.structure_max_offdiag <= rep.structure_threshold;
  rep.pass = rep.pairs_pass && rep.structure_pass;
  return rep;
}

Report CovarianceReport::report(const CouplingSpec& spec) const {
  Report r;
  r.check = "cross_covariance";
  r.spec = spec_to_json(spec);
  r.n = n;
  for (Eigen::Index i = 0; i < estimate.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < estimate.cols(); ++j) {
      const double dev = std::abs(estimate(i, j) - expected(i, j));
      r.add("pair_correlation[" + std::to_string(i) + "," + std::to_string(j) + "]", estimate(i, j), threshold,
            dev <= threshold);
    }
  }
  r.add("max_pair_deviation", max_deviation, threshold, pairs_pass);
  r.add("identity_structure_max_offdiag", structure_max_offdiag, structure_threshold, structure_pass);
  return r;
}

// ---------------------------------------------------------------------------
// Minimax
// ---------------------------------------------------------------------------

MinimaxReport check_minimax(std::size_t k, const std::vector<CouplingSpec>& candidates, const RandomStream& stream,
                            std::size_t n) {
  MinimaxReport rep;
  rep.k = k;
  rep.n = n;
  rep.bound = equicorrelation_lower_bound(k);
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const CouplingSpec& spec = candidates[s];
    if (spec.k() != k) throw SpecError("check_minimax: all candidates must share k");
    const CovarianceReport cov = validate_cross_covariance(spec, stream, n);
    MinimaxEntry e;
    e.spec = spec_to_json(spec);
    e.worst_pair = -INFINITY;
    for (Eigen::Index i = 0; i < cov.estimate.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < cov.estimate.cols(); ++j) {
        if (cov.estimate(i, j) > e.worst_pair) {
          e.worst_pair = cov.estimate(i, j);
          e.stderr_ = cov.stderr_(i, j);
        }
      }
    }
    e.tolerance = 5.0 / std::sqrt(static_cast<double>(n) * static_cast<double>(spec.d()));
    e.respects_bound = e.worst_pair >= rep.bound - e.tolerance;
    e.attains_bound = std::abs(e.worst_pair - rep.bound) <= e.tolerance;
    if (e.attains_bound) rep.attained_by.push_back(s);
    rep.pass = rep.pass && e.respects_bound;
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

json MinimaxReport::to_json() const {
  json entries_json = json::array();
  json stats = json::array();
  json thresholds = json::array();
  for (std::size_t s = 0; s < entries.size(); ++s) {
    const auto& e = entries[s];
    entries_json.push_back({{"spec", e.spec},
                            {"worst_pair", e.worst_pair},
                            {"stderr", e.stderr_},
                            {"tolerance", e.tolerance},
                            {"respects_bound", e.respects_bound},
                            {"attains_bound", e.attains_bound}});
    const std::string name = "worst_pair[" + std::to_string(s) + "]";
    stats.push_back({{"name", name}, {"value", e.worst_pair}, {"pass", e.respects_bound}});
    thresholds.push_back({{"name", name}, {"value", bound - e.tolerance}});
  }
  return {{"check", "minimax"}, {"k", k},           {"n", n},
          {"bound", bound},     {"entries", entries_json}, {"attained_by", attained_by},
          {"statistics", stats}, {"thresholds", thresholds}, {"pass", pass}};
}

// ---------------------------------------------------------------------------
// Marginal invariance
// ---------------------------------------------------------------------------

InvarianceReport check_marginal_invariance(const std::vector<CouplingSpec>& specs, const GeneratorOracle& generator,
                                           const SingleScore& score, const RandomStream& stream, std::size_t n) {
  if (specs.empty()) throw SpecError("check_marginal_invariance: no specs");
  const std::size_t k = specs.front().k();
  const std::size_t d = specs.front().d();
  if (generator.dims().input != d) throw DimensionError("generator input dimension must equal spec d");
  if (n < 2) throw std::invalid_argument("check_marginal_invariance requires n >= 2");

  InvarianceReport rep;
  rep.n = n;
  const std::size_t chunks = std::min(kDefaultChunks, n);
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const CouplingSpec& spec = specs[s];
    if (spec.k() != k || spec.d() != d) throw SpecError("check_marginal_invariance: specs must share (k, d)");
    const Sampler sampler(spec);
    // Disjoint sub-streams per spec so the estimates are independent.
    const RandomStream base = stream.substream(static_cast<std::uint64_t>(s) * n);
    std::vector<std::pair<double, double>> partial(chunks, {0.0, 0.0});
    parallel_for(chunks, [&](std::size_t c) {
      const ChunkRange range = chunk_range(n, chunks, c);
      RowMatrix z;
      for (std::size_t rep_i = range.begin; rep_i < range.end; ++rep_i) {
        RandomStream rs = base.substream(rep_i);
        sampler.draw(rs, z);
        double v = 0.0;
        for (Eigen::Index i = 0; i < z.rows(); ++i) v += score(generator.evaluate(z.row(i).transpose()));
        v /= static_cast<double>(k);
        partial[c].first += v;
        partial[c].second += v * v;
      }
    });
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& [a, b] : partial) {
      sum += a;
      sum_sq += b;
    }
    const double nd = static_cast<double>(n);
    const double mean = sum / nd;
    const double var = std::max(0.0, (sum_sq / nd - mean * mean) * nd / (nd - 1.0));
    rep.entries.push_back({spec_to_json(spec), mean, std::sqrt(var / nd)});
  }
  for (std::size_t a = 0; a < rep.entries.size(); ++a) {
    for (std::size_t b = a + 1; b < rep.entries.size(); ++b) {
      const double pooled = std::hypot(rep.entries[a].stderr_, rep.entries[b].stderr_);
      const double diff = std::abs(rep.entries[a].mean - rep.entries[b].mean);
      const double z = pooled > 0.0 ? diff / pooled : (diff > 0.0 ? INFINITY : 0.0);
      rep.max_z = std::max(rep.max_z, z);
    }
  }
  rep.pass = rep.max_z <= rep.threshold;
  return rep;
}

json InvarianceReport::to_json() const {
  json entries_json = json::array();
  for (const auto& e : entries) entries_json.push_back({{"spec", e.spec}, {"mean", e.mean}, {"stderr", e.stderr_}});
  return {{"check", "marginal_invariance"},
          {"n", n},
          {"entries", entries_json},
          {"statistics", json::array({{{"name", "max_pairwise_z"}, {"value", max_z}, {"pass", pass}}})},
          {"thresholds", json::array({{{"name", "max_pairwise_z"}, {"value", threshold}}})},
          {"pass", pass}};
}

}  // namespace noisecouple
