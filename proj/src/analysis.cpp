#include "noisecouple/analysis.hpp"

#include "noisecouple/parallel.hpp"
#include "noisecouple/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace noisecouple {

using nlohmann::json;

namespace {

struct MomentAcc {
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
  }
  void merge(const MomentAcc& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
};

Estimate finish(const MomentAcc& acc, std::size_t n) {
  const double nd = static_cast<double>(n);
  Estimate e;
  e.n = n;
  e.mean = acc.sum / nd;
  if (n > 1) {
    const double var = std::max(0.0, (acc.sum_sq / nd - e.mean * e.mean) * nd / (nd - 1.0));
    e.stderr_ = std::sqrt(var / nd);
  }
  return e;
}

double pair_count(std::size_t k) { return 0.5 * static_cast<double>(k) * static_cast<double>(k - 1); }

double separation_of(const RowMatrix& z, const Matrix& j) {
  const RowMatrix y = z * j.transpose();
  double total = 0.0;
  for (Eigen::Index a = 0; a < y.rows(); ++a)
    for (Eigen::Index b = a + 1; b < y.rows(); ++b) total += (y.row(a) - y.row(b)).squaredNorm();
  return total / pair_count(static_cast<std::size_t>(z.rows()));
}

/// det(I + M)^{-1/2} for symmetric PSD M.
double inv_sqrt_det_identity_plus(const Matrix& m) {
  const Matrix a = Matrix::Identity(m.rows(), m.cols()) + m;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) throw std::runtime_error("I + V is not positive definite");
  const Matrix& l = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  return std::exp(-0.5 * log_det);
}

std::vector<std::pair<double, double>> bandwidth_terms(const RBFSimilaritySpec& spec) {
  if (spec.weights.empty()) return {{spec.tau, 1.0}};
  return spec.weights;
}

}  // namespace

LinearFeatureMap::LinearFeatureMap(Matrix j_, Vector offset_) : j(std::move(j_)), offset(std::move(offset_)) {
  if (j.rows() == 0 || j.cols() == 0) throw DimensionError("feature map J must be non-empty");
  if (!j.allFinite()) throw DimensionError("feature map J must be finite");
  if (offset.size() == 0) offset = Vector::Zero(j.rows());
  if (offset.size() != j.rows()) throw DimensionError("feature map offset must have m entries");
}

LinearFeatureMap LinearFeatureMap::identity(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return LinearFeatureMap(Matrix::Identity(n, n));
}

void RBFSimilaritySpec::validate() const {
  if (weights.empty()) {
    if (!(tau > 0.0)) throw SpecError("RBF bandwidth must be positive");
    return;
  }
  for (const auto& [t, w] : weights) {
    if (!(t > 0.0)) throw SpecError("RBF bandwidth must be positive");
    if (!(w >= 0.0)) throw SpecError("RBF weights must be nonnegative");
  }
}

json Estimate::to_json() const { return {{"mean", mean}, {"stderr", stderr_}, {"n", n}}; }

// ---------------------------------------------------------------------------

Estimate pairwise_separation(std::span<const NoiseBatch> batches, const LinearFeatureMap& map) {
  if (batches.empty()) throw DimensionError("pairwise_separation: no batches");
  const std::size_t k = batches.front().k();
  const std::size_t d = batches.front().d();
  if (k < 2) throw DimensionError("pairwise_separation requires k >= 2");
  if (map.d() != d) throw DimensionError("feature map input dimension must equal noise dimension");
  MomentAcc acc;
  for (const NoiseBatch& b : batches) {
    if (b.k() != k || b.d() != d) throw DimensionError("pairwise_separation: batches must share (k, d)");
    acc.add(separation_of(b.vectors, map.j));
  }
  return finish(acc, batches.size());
}

Estimate pairwise_separation(const CouplingSpec& spec, const RandomStream& stream, std::size_t n,
                             const LinearFeatureMap& map) {
  if (spec.k() < 2) throw DimensionError("pairwise_separation requires k >= 2");
  if (map.d() != spec.d()) throw DimensionError("feature map input dimension must equal noise dimension");
  if (n == 0) throw std::invalid_argument("pairwise_separation requires n >= 1");
  const Sampler sampler(spec);
  const std::size_t chunks = std::min(kDefaultChunks, n);
  std::vector<MomentAcc> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const ChunkRange range = chunk_range(n, chunks, c);
    RowMatrix z;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      RandomStream rs = stream.substream(i);
      sampler.draw(rs, z);
      partial[c].add(separation_of(z, map.j));
    }
  });
  MomentAcc total;
  for (const auto& p : partial) total.merge(p);
  return finish(total, n);
}

double separation_bound(std::size_t k, const LinearFeatureMap& map) {
  if (k < 2) throw SpecError("separation_bound requires k >= 2");
  const double kd = static_cast<double>(k);
  return 2.0 * kd / (kd - 1.0) * map.frobenius_sq();
}

double local_linear_prediction(std::size_t k, double c, const LinearFeatureMap& map) {
  (void)equicorrelated_matrix(k, c);
  return 2.0 * (1.0 - c) * map.frobenius_sq();
}

// ---------------------------------------------------------------------------

double rbf_similarity_closed_form(std::size_t k, const RBFSimilaritySpec& spec) {
  if (k < 2) throw SpecError("rbf_similarity_closed_form requires k >= 2");
  spec.validate();
  const double kd = static_cast<double>(k);
  const Matrix jjt = spec.map.j * spec.map.j.transpose();
  double total = 0.0;
  for (const auto& [tau, w] : bandwidth_terms(spec)) {
    total += w * inv_sqrt_det_identity_plus((2.0 * kd / ((kd - 1.0) * tau * tau)) * jjt);
  }
  return total;
}

double rbf_similarity_exact(const CouplingSpec& coupling, const RBFSimilaritySpec& spec) {
  spec.validate();
  if (coupling.k() < 2) throw SpecError("RBF similarity requires k >= 2");
  if (spec.map.d() != coupling.d()) throw DimensionError("feature map input dimension must equal noise dimension");
  const Matrix& j = spec.map.j;
  const auto cs = correlation_of(coupling);
  const std::size_t k = coupling.k();

  // Cov(J(z_i - z_j)) = (2 - 2 rho_V) J P_V J^T + (2 - 2 rho_perp) J P_perp J^T.
  Matrix j_in, j_out;
  const SampleCorrelation* r_in = nullptr;
  const SampleCorrelation* r_out = nullptr;
  if (const auto* sc = std::get_if<SampleCorrelation>(&cs)) {
    j_in = j * j.transpose();
    r_in = sc;
  } else {
    const auto& sub = std::get<SubspaceCorrelation>(cs);
    const Matrix& basis = coupling.subspace_spec().basis;
    const Matrix jb = j * basis;
    j_in = jb * jb.transpose();
    j_out = j * j.transpose() - j_in;
    r_in = &sub.on_subspace;
    r_out = &sub.on_complement;
  }

  double total = 0.0;
  for (const auto& [tau, w] : bandwidth_terms(spec)) {
    double avg = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = a + 1; b < k; ++b) {
        Matrix v = (2.0 - 2.0 * (*r_in)(a, b)) * j_in;
        if (r_out) v += (2.0 - 2.0 * (*r_out)(a, b)) * j_out;
        avg += inv_sqrt_det_identity_plus(v / (tau * tau));
      }
    }
    total += w * avg / pair_count(k);
  }
  return total;
}

RbfResult rbf_similarity_mc(const CouplingSpec& coupling, const RBFSimilaritySpec& spec, const RandomStream& stream,
                            std::size_t n) {
  spec.validate();
  if (coupling.k() < 2) throw SpecError("RBF similarity requires k >= 2");
  if (spec.map.d() != coupling.d()) throw DimensionError("feature map input dimension must equal noise dimension");
  if (n == 0) throw std::invalid_argument("rbf_similarity_mc requires n >= 1");
  const Sampler sampler(coupling);
  const auto terms = bandwidth_terms(spec);
  const double pairs = pair_count(coupling.k());
  const std::size_t chunks = std::min(kDefaultChunks, n);
  std::vector<MomentAcc> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const ChunkRange range = chunk_range(n, chunks, c);
    RowMatrix z;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      RandomStream rs = stream.substream(i);
      sampler.draw(rs, z);
      const RowMatrix y = z * spec.map.j.transpose();
      double v = 0.0;
      for (Eigen::Index a = 0; a < y.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < y.rows(); ++b) {
          const double sq = (y.row(a) - y.row(b)).squaredNorm();
          for (const auto& [tau, w] : terms) v += w * std::exp(-sq / (2.0 * tau * tau));
        }
      }
      partial[c].add(v / pairs);
    }
  });
  MomentAcc total;
  for (const auto& p : partial) total.merge(p);
  return {finish(total, n), rbf_similarity_exact(coupling, spec)};
}

// ---------------------------------------------------------------------------
// First-order effect
// ---------------------------------------------------------------------------

std::pair<std::vector<double>, std::vector<double>> gauss_legendre_unit(std::size_t nodes) {
  if (nodes == 0) throw std::invalid_argument("quadrature needs at least one node");
  std::vector<double> x(nodes), w(nodes);
  const std::size_t n = nodes;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    // Newton iteration on P_n from the Chebyshev-like initial guess.
    double t = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = t;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kd = static_cast<double>(k);
        const double p2 = ((2.0 * kd - 1.0) * t * p1 - (kd - 1.0) * p0) / kd;
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(n) * (t * p1 - p0) / (t * t - 1.0);
      const double step = p1 / dp;
      t -= step;
      if (std::abs(step) < 1e-16) break;
    }
    const double wt = 2.0 / ((1.0 - t * t) * dp * dp);
    // Map [-1, 1] -> [0, 1], ascending order.
    x[i] = 0.5 * (1.0 - t);
    x[n - 1 - i] = 0.5 * (1.0 + t);
    w[i] = 0.5 * wt;
    w[n - 1 - i] = 0.5 * wt;
  }
  return {x, w};
}

Matrix mixed_partial_traces(const NoiseObjective& objective, const RowMatrix& z, std::size_t probes,
                            RandomStream& probe_stream) {
  const auto k = z.rows();
  const auto d = z.cols();
  const bool exact_basis = static_cast<std::size_t>(d) <= probes;
  const std::size_t count = exact_basis ? static_cast<std::size_t>(d) : probes;
  const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());

  Matrix out = Matrix::Zero(k, k);
  RowMatrix zp = z;
  RowMatrix g_plus, g_minus;
  Eigen::RowVectorXd v(d);
  for (std::size_t p = 0; p < count; ++p) {
    if (exact_basis) {
      v.setZero();
      v(static_cast<Eigen::Index>(p)) = 1.0;
    } else {
      for (Eigen::Index l = 0; l < d; ++l) v(l) = probe_stream.rademacher();
    }
    for (Eigen::Index j = 0; j < k; ++j) {
      const double h = base_step * std::max(1.0, z.row(j).cwiseAbs().maxCoeff());
      zp.row(j) = z.row(j) + h * v;
      objective.value_and_gradient(zp, g_plus);
      zp.row(j) = z.row(j) - h * v;
      objective.value_and_gradient(zp, g_minus);
      zp.row(j) = z.row(j);
      for (Eigen::Index i = 0; i < k; ++i) {
        if (i == j) continue;
        out(i, j) += (g_plus.row(i) - g_minus.row(i)).dot(v) / (2.0 * h);
      }
    }
  }
  if (!exact_basis) out /= static_cast<double>(count);
  return 0.5 * (out + out.transpose());
}

namespace {

double weighted_offdiag(const Matrix& b, const Matrix& dmat) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = i + 1; j < b.cols(); ++j) total += b(i, j) * dmat(i, j);
  return total;
}

/// max over (k<l), (i<j) of |D_kl D_ij H(Z)|, with D_ij evaluated on the exact
/// coordinate basis and D_kl by a second-order mixed difference.
double max_fourth_order(const NoiseObjective& objective, const RowMatrix& z) {
  const auto k = z.rows();
  const auto d = z.cols();
  const std::size_t basis = static_cast<std::size_t>(d);
  RandomStream unused(0, 0);
  constexpr double outer = 1e-3;
  double worst = 0.0;
  RowMatrix zp = z;
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a + 1; b < k; ++b) {
      Matrix acc = Matrix::Zero(k, k);
      for (Eigen::Index r = 0; r < d; ++r) {
        Matrix terms[2][2];
        for (int sa = 0; sa < 2; ++sa) {
          for (int sb = 0; sb < 2; ++sb) {
            zp = z;
            zp(a, r) += sa == 0 ? outer : -outer;
            zp(b, r) += sb == 0 ? outer : -outer;
            terms[sa][sb] = mixed_partial_traces(objective, zp, basis, unused);
          }
        }
        acc += (terms[0][0] - terms[0][1] - terms[1][0] + terms[1][1]) / (4.0 * outer * outer);
      }
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = i + 1; j < k; ++j) worst = std::max(worst, std::abs(acc(i, j)));
    }
  }
  return worst;
}

}  // namespace

EffectReport coupling_effect_first_order(const NoiseObjective& objective, const SampleCorrelation& r_matrix,
                                         const RandomStream& stream, std::size_t n, const EffectOptions& options) {
  const std::size_t k = r_matrix.k();
  const std::size_t d = objective.d();
  if (objective.k() != k) throw DimensionError("objective arity must equal correlation size");
  if (n < 2) throw std::invalid_argument("coupling_effect_first_order requires n >= 2");

  EffectReport rep;
  std::tie(rep.nodes, rep.weights) = gauss_legendre_unit(options.quadrature_nodes);
  const Matrix b = r_matrix.offdiagonal();
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = i + 1; j < b.cols(); ++j) rep.abs_offdiag_sum += std::abs(b(i, j));

  const auto ki = static_cast<Eigen::Index>(k);
  const Matrix factor_one = factor_correlation(r_matrix, k).entries();
  std::vector<Matrix> node_factors;
  for (double t : rep.nodes) {
    // The segment from I to R stays PSD, so these factorizations cannot fail for valid R.
    const Matrix rt = (1.0 - t) * Matrix::Identity(ki, ki) + t * r_matrix.entries();
    node_factors.push_back(factor_correlation(SampleCorrelation(rt), k).entries());
  }
  const std::size_t q = rep.nodes.size();

  struct Acc {
    MomentAcc direct, first, interp, d_df, d_di, d_fi;
    std::vector<double> node_sum;
  };
  const std::size_t chunks = std::min(kDefaultChunks, n);
  std::vector<Acc> partial(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const ChunkRange range = chunk_range(n, chunks, c);
    Acc& acc = partial[c];
    acc.node_sum.assign(q, 0.0);
    RowMatrix u(ki, static_cast<Eigen::Index>(d));
    RowMatrix zt;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      RandomStream rs = stream.substream(i);
      rs.fill_normal(std::span<double>(u.data(), static_cast<std::size_t>(u.size())));
      RandomStream probe_stream = stream.substream(i).substream(0x9e3779b97f4a7c15ULL);

      const double h_iid = objective.value(u);
      zt.noalias() = factor_one * u;
      const double direct = objective.value(zt) - h_iid;
      const double first = weighted_offdiag(b, mixed_partial_traces(objective, u, options.probes, probe_stream));
      double interp = 0.0;
      for (std::size_t node = 0; node < q; ++node) {
        zt.noalias() = node_factors[node] * u;
        const double psi = weighted_offdiag(b, mixed_partial_traces(objective, zt, options.probes, probe_stream));
        acc.node_sum[node] += psi;
        interp += rep.weights[node] * psi;
      }
      acc.direct.add(direct);
      acc.first.add(first);
      acc.interp.add(interp);
      acc.d_df.add(direct - first);
      acc.d_di.add(direct - interp);
      acc.d_fi.add(first - interp);
    }
  });

  Acc total;
  total.node_sum.assign(q, 0.0);
  for (const auto& p : partial) {
    total.direct.merge(p.direct);
    total.first.merge(p.first);
    total.interp.merge(p.interp);
    total.d_df.merge(p.d_df);
    total.d_di.merge(p.d_di);
    total.d_fi.merge(p.d_fi);
    for (std::size_t node = 0; node < q; ++node) total.node_sum[node] += p.node_sum[node];
  }
  rep.direct = finish(total.direct, n);
  rep.first_order = finish(total.first, n);
  rep.interpolation = finish(total.interp, n);
  rep.se_direct_minus_first = finish(total.d_df, n).stderr_;
  rep.se_direct_minus_interp = finish(total.d_di, n).stderr_;
  rep.se_first_minus_interp = finish(total.d_fi, n).stderr_;
  rep.remainder = rep.direct.mean - rep.first_order.mean;
  for (double s : total.node_sum) rep.derivative_at_node.push_back(s / static_cast<double>(n));

  if (options.remainder_bound) {
    const RandomStream m_stream = stream.substream(0xA5A5A5A5ULL << 20);
    double m = 0.0;
    RowMatrix u(ki, static_cast<Eigen::Index>(d));
    for (std::size_t node = 0; node < q; ++node) {
      for (std::size_t s = 0; s < options.remainder_samples; ++s) {
        RandomStream rs = m_stream.substream(node * options.remainder_samples + s);
        rs.fill_normal(std::span<double>(u.data(), static_cast<std::size_t>(u.size())));
        const RowMatrix zt = node_factors[node] * u;
        m = std::max(m, max_fourth_order(objective, zt));
      }
    }
    rep.second_derivative_max = m;
    rep.remainder_bound = 0.5 * m * rep.abs_offdiag_sum * rep.abs_offdiag_sum;
  }
  return rep;
}

json EffectReport::to_json() const {
  json j{{"direct", direct.to_json()},
         {"first_order", first_order.to_json()},
         {"interpolation", interpolation.to_json()},
         {"se_direct_minus_first", se_direct_minus_first},
         {"se_direct_minus_interp", se_direct_minus_interp},
         {"se_first_minus_interp", se_first_minus_interp},
         {"remainder", remainder},
         {"abs_offdiag_sum", abs_offdiag_sum},
         {"nodes", nodes},
         {"weights", weights},
         {"derivative_at_node", derivative_at_node}};
  if (second_derivative_max) j["second_derivative_max"] = *second_derivative_max;
  if (remainder_bound) j["remainder_bound"] = *remainder_bound;
  return j;
}

}  // namespace noisecouple
