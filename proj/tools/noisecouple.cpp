// noisecouple: sample, validate, analyze and optimize Gaussian noise couplings.
// Machine-readable output (JSON or CSV) goes to stdout; everything else to stderr.

#include "noisecouple/analysis.hpp"
#include "noisecouple/config.hpp"
#include "noisecouple/container.hpp"
#include "noisecouple/core.hpp"
#include "noisecouple/optimizer.hpp"
#include "noisecouple/random.hpp"
#include "noisecouple/sampler.hpp"
#include "noisecouple/serialize.hpp"
#include "noisecouple/validation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <bit>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

namespace nc = noisecouple;
using nlohmann::json;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitIntegrity = 4;

#ifndef NOISECOUPLE_CONFIG_DIR
#define NOISECOUPLE_CONFIG_DIR ""
#endif

struct CouplingFlags {
  std::string coupling;
  std::size_t k = 2;
  bool k_given = false;
  std::size_t dim = 0;
  std::string shape;
  std::optional<double> c;
  std::string matrix_file;
  std::string subspace_file;

  void attach(CLI::App* app, bool dim_required_hint = true) {
    app->add_option("--coupling", coupling, "identical|independent|antithetic|repulsive|equicorr|matrix|subspace");
    app->add_option("--k", k, "number of coupled noises (default 2; inferred from --matrix)")
        ->each([this](const std::string&) { k_given = true; });
    app->add_option("--dim", dim, dim_required_hint ? "noise dimension d" : "noise dimension d (optional)");
    app->add_option("--shape", shape, "CxHxW; sets d = C*H*W");
    app->add_option("--c", c, "equicorrelation");
    app->add_option("--matrix", matrix_file, "JSON file with the k x r coupling matrix");
    app->add_option("--subspace", subspace_file, "JSON file {basis, inner, outer}");
  }

  std::vector<std::size_t> trailing_shape() const {
    std::vector<std::size_t> dims;
    if (shape.empty()) return dims;
    std::stringstream ss(shape);
    std::string part;
    while (std::getline(ss, part, 'x')) {
      try {
        dims.push_back(static_cast<std::size_t>(std::stoull(part)));
      } catch (const std::exception&) {
        throw nc::SpecError("--shape must look like CxHxW");
      }
    }
    if (dims.empty()) throw nc::SpecError("--shape must look like CxHxW");
    return dims;
  }

  std::size_t resolved_dim() const {
    const auto dims = trailing_shape();
    if (dims.empty()) {
      if (dim == 0) throw nc::SpecError("--dim or --shape is required");
      return dim;
    }
    std::size_t d = 1;
    for (auto v : dims) d *= v;
    if (dim != 0 && dim != d) throw nc::SpecError("--dim disagrees with --shape");
    return d;
  }

  nc::CouplingSpec spec() const {
    if (coupling.empty()) throw nc::SpecError("--coupling is required");
    const nc::CouplingKind kind = nc::parse_kind(coupling);
    const std::size_t d = resolved_dim();
    switch (kind) {
      case nc::CouplingKind::Identical: return nc::CouplingSpec::identical(k, d);
      case nc::CouplingKind::Independent: return nc::CouplingSpec::independent(k, d);
      case nc::CouplingKind::Antithetic:
        if (k != 2) throw nc::SpecError("antithetic coupling requires k = 2");
        return nc::CouplingSpec::antithetic(d);
      case nc::CouplingKind::Repulsive: return nc::CouplingSpec::repulsive(k, d);
      case nc::CouplingKind::Equicorrelated:
        if (!c) throw nc::SpecError("equicorr coupling requires --c");
        return nc::CouplingSpec::equicorrelated(k, d, *c);
      case nc::CouplingKind::Matrix: {
        if (matrix_file.empty()) throw nc::SpecError("matrix coupling requires --matrix");
        const json j = nc::load_json_file(matrix_file);
        nc::CouplingMatrix a(nc::matrix_from_json(j.is_object() ? j.at("matrix") : j));
        if (k_given && a.k() != k) throw nc::SpecError("--matrix must have k rows");
        return nc::CouplingSpec::matrix(std::move(a), d);
      }
      case nc::CouplingKind::Subspace: {
        if (subspace_file.empty()) throw nc::SpecError("subspace coupling requires --subspace");
        json j = nc::load_json_file(subspace_file);
        j["kind"] = "subspace";
        j["k"] = k;
        j["d"] = d;
        return nc::spec_from_json(j);
      }
    }
    throw nc::SpecError("unsupported coupling");
  }
};

void emit(const json& j) { std::cout << j.dump(2) << '\n'; }

std::filesystem::path resolve_config(const std::string& name) {
  std::filesystem::path p(name);
  if (std::filesystem::exists(p)) return p;
  const std::filesystem::path fallback = std::filesystem::path(NOISECOUPLE_CONFIG_DIR) / name;
  if (!p.is_absolute() && std::filesystem::exists(fallback)) return fallback;
  throw nc::IoError("config file not found: " + name);
}

json report_pair(const nc::CouplingSpec& spec, const nc::RandomStream& stream, std::size_t n, bool& pass) {
  const auto moments = nc::validate_marginals(spec, stream, n);
  const auto cov = nc::validate_cross_covariance(spec, stream.substream(n), n);
  pass = moments.pass && cov.pass;
  return json::array({moments.report(spec).to_json(), cov.report(spec).to_json()});
}

// ---------------------------------------------------------------------------

int run_sample(const CouplingFlags& f, std::uint64_t seed, std::uint64_t stream_id, const std::string& out,
               const std::string& dtype) {
  const nc::CouplingSpec spec = f.spec();
  const nc::NoiseBatch batch = nc::sample(spec, nc::RandomStream(seed, stream_id));
  std::vector<std::size_t> shape = {spec.k()};
  const auto trailing = f.trailing_shape();
  if (trailing.empty()) {
    shape.push_back(spec.d());
  } else {
    shape.insert(shape.end(), trailing.begin(), trailing.end());
  }
  const nc::Sidecar s = nc::export_container(batch, out, nc::parse_dtype(dtype), shape);
  std::cerr << "wrote " << out << " and " << nc::sidecar_path(out).string() << '\n';
  emit({{"out", out}, {"sidecar", nc::sidecar_path(out).string()}, {"sidecar_contents", s.to_json()}});
  return 0;
}

int run_validate(const CouplingFlags& f, const std::string& in, std::size_t n, std::uint64_t seed) {
  json out;
  bool pass = true;
  if (!in.empty()) {
    const nc::LoadedContainer loaded = nc::load_container(in);
    const nc::Sidecar& s = loaded.sidecar;
    const nc::RowMatrix replayed = nc::quantize(nc::replay(s).vectors, s.dtype);
    const bool replay_ok = replayed == loaded.batch.vectors;
    const nc::RandomStream stream(s.seed, s.stream_id);
    bool stats_ok = true;
    out["container"] = {{"path", in}, {"checksum_ok", true}, {"replay_bitwise", replay_ok}, {"row_sum_max", loaded.batch.max_row_sum()}};
    out["reports"] = report_pair(s.spec, stream.substream(1), n, stats_ok);
    pass = replay_ok && stats_ok;
  } else {
    const nc::CouplingSpec spec = f.spec();
    out["reports"] = report_pair(spec, nc::RandomStream(seed, 0), n, pass);
  }
  out["pass"] = pass;
  emit(out);
  std::cerr << (pass ? "validation passed" : "validation FAILED") << '\n';
  return pass ? 0 : kExitFail;
}

int run_feasibility(std::size_t k, double c) {
  if (k < 2) throw nc::SpecError("--k must be at least 2");
  const double lower = nc::equicorrelation_lower_bound(k);
  bool feasible = true;
  try {
    (void)nc::equicorrelated_matrix(k, c);
  } catch (const nc::FeasibilityError&) {
    feasible = false;
  }
  emit({{"k", k}, {"c", c}, {"interval", {lower, 1.0}}, {"feasible", feasible},
        {"status", feasible ? "feasible" : "infeasible"}});
  std::cerr << (feasible ? "feasible" : "infeasible") << " (interval [" << lower << ", 1])\n";
  return 0;
}

struct AnalyzeFlags {
  std::string task;
  std::string linear_j = "identity";
  std::size_t m = 0;
  std::size_t n = 20000;
  std::uint64_t seed = 0;
  double tau = 1.0;
  std::string objective = "pairwise_sq";
  std::size_t quadrature_nodes = 16;
  std::size_t probes = 16;
  bool remainder = false;
  std::string metric = "separation";
};

nc::LinearFeatureMap feature_map(const AnalyzeFlags& a, std::size_t d) {
  if (a.linear_j == "identity") {
    if (a.m != 0 && a.m != d) throw nc::SpecError("--linear-J identity needs --m equal to the noise dimension");
    return nc::LinearFeatureMap::identity(d);
  }
  if (a.linear_j == "random") return nc::LinearFeatureMap(nc::random_projection(a.seed, a.m == 0 ? d : a.m, d));
  throw nc::SpecError("--linear-J must be identity or random");
}

int run_analyze(CouplingFlags f, const AnalyzeFlags& a) {
  if (f.dim == 0 && f.shape.empty() && a.linear_j == "identity" && a.m != 0) f.dim = a.m;
  const nc::RandomStream stream(a.seed, 1);
  if (a.task == "separation") {
    const nc::CouplingSpec spec = f.spec();
    const auto map = feature_map(a, spec.d());
    const nc::Estimate est = nc::pairwise_separation(spec, stream, a.n, map);
    json out{{"task", "separation"}, {"spec", nc::spec_to_json(spec)}, {"estimate", est.to_json()},
             {"bound", nc::separation_bound(spec.k(), map)}};
    if (spec.kind() == nc::CouplingKind::Equicorrelated || spec.kind() == nc::CouplingKind::Repulsive ||
        spec.kind() == nc::CouplingKind::Independent || spec.kind() == nc::CouplingKind::Identical ||
        spec.kind() == nc::CouplingKind::Antithetic) {
      const double c = nc::effective_correlation(spec)(0, 1);
      out["local_linear_prediction"] = nc::local_linear_prediction(spec.k(), c, map);
    }
    emit(out);
    return 0;
  }
  if (a.task == "rbf") {
    const nc::CouplingSpec spec = f.spec();
    nc::RBFSimilaritySpec rbf{feature_map(a, spec.d()), a.tau, {}};
    const nc::RbfResult res = nc::rbf_similarity_mc(spec, rbf, stream, a.n);
    json out{{"task", "rbf"}, {"spec", nc::spec_to_json(spec)}, {"tau", a.tau}, {"mc", res.mc.to_json()},
             {"repulsive_closed_form", nc::rbf_similarity_closed_form(spec.k(), rbf)}};
    if (res.exact) out["exact"] = *res.exact;
    emit(out);
    return 0;
  }
  if (a.task == "effect") {
    const nc::CouplingSpec spec = f.spec();
    const std::size_t d = spec.d();
    nc::GeneratorPtr gen;
    if (a.objective == "pairwise_sq") {
      gen = a.linear_j == "identity" ? nc::make_identity(d) : nc::make_linear(nc::random_projection(a.seed, a.m == 0 ? d : a.m, d), nc::Vector::Zero(static_cast<Eigen::Index>(a.m == 0 ? d : a.m)));
    } else if (a.objective == "random_feature") {
      gen = nc::make_random_feature(a.seed, d, a.m == 0 ? 2 : a.m, 16);
    } else {
      throw nc::SpecError("--objective must be pairwise_sq or random_feature");
    }
    const nc::NoiseObjective obj(gen, nc::objective_pairwise_sq(spec.k()));
    nc::EffectOptions opts;
    opts.quadrature_nodes = a.quadrature_nodes;
    opts.probes = a.probes;
    opts.remainder_bound = a.remainder;
    const nc::EffectReport rep = nc::coupling_effect_first_order(obj, nc::effective_correlation(spec), stream, a.n, opts);
    json out = rep.to_json();
    out["task"] = "effect";
    out["spec"] = nc::spec_to_json(spec);
    emit(out);
    return 0;
  }
  if (a.task == "sweep") {
    const std::size_t k = f.k;
    const std::size_t d = f.resolved_dim();
    const auto map = feature_map(a, d);
    const double lower = nc::equicorrelation_lower_bound(k);
    std::cout << "c,k,metric,estimate,stderr\n";
    for (int step = 0; step <= 4; ++step) {
      const double c = step == 0 ? 0.0 : lower * step / 4.0;
      const nc::CouplingSpec spec = nc::CouplingSpec::equicorrelated(k, d, c);
      nc::Estimate est;
      if (a.metric == "separation") {
        est = nc::pairwise_separation(spec, stream.substream(static_cast<std::uint64_t>(step) << 40), a.n, map);
      } else if (a.metric == "rbf") {
        est = nc::rbf_similarity_mc(spec, {map, a.tau, {}}, stream.substream(static_cast<std::uint64_t>(step) << 40), a.n).mc;
      } else {
        throw nc::SpecError("--metric must be separation or rbf");
      }
      std::printf("%.17g,%zu,%s,%.17g,%.17g\n", c, k, a.metric.c_str(), est.mean, est.stderr_);
    }
    return 0;
  }
  throw nc::SpecError("--task must be separation, rbf, effect or sweep");
}

int run_optimize(const std::string& task, const std::string& config_name, const std::string& out_override) {
  const json cfg_json = nc::load_json_file(resolve_config(config_name));
  if (task == "amortized") {
    const nc::AmortizedConfig cfg = nc::amortized_from_json(cfg_json);
    const nc::Trajectory traj = nc::optimize_coupling(cfg);
    const std::string out = !out_override.empty() ? out_override : cfg_json.value("out", std::string("trajectory.jsonl"));
    nc::write_file(out, traj.to_json_lines());
    const nc::Matrix& a = traj.final_matrix();
    const nc::NoiseObjective objective(cfg.generator, cfg.objective);
    const std::size_t galleries = cfg_json.value("eval_galleries", std::size_t{4000});
    const auto ev = nc::evaluate_coupling(objective, a, cfg.seed, galleries);
    std::cerr << "wrote trajectory (" << traj.points.size() << " points) to " << out << '\n';
    emit({{"task", "amortized"},
          {"trajectory", out},
          {"final_matrix", nc::matrix_to_json(a)},
          {"final_gram", nc::matrix_to_json(a * a.transpose())},
          {"evaluation", {{"mean", ev.mean}, {"stderr", ev.stderr_}, {"galleries", galleries}}}});
    return 0;
  }
  if (task == "refine") {
    const nc::RefineSetup setup = nc::refine_from_json(cfg_json);
    const nc::RefineConfig& cfg = setup.config;
    const nc::NoiseBatch refined = nc::refine_noise(setup.initial, cfg);
    std::vector<bool> moving(setup.initial.d(), false);
    for (auto c : cfg.optimized) moving[c] = true;
    bool frozen_unchanged = true;
    for (Eigen::Index i = 0; i < refined.vectors.rows(); ++i)
      for (std::size_t c = 0; c < moving.size(); ++c)
        if (!moving[c] && std::bit_cast<std::uint64_t>(refined.vectors(i, static_cast<Eigen::Index>(c))) !=
                              std::bit_cast<std::uint64_t>(setup.initial.vectors(i, static_cast<Eigen::Index>(c))))
          frozen_unchanged = false;
    json out{{"task", "refine"}, {"frozen_unchanged", frozen_unchanged}, {"steps", cfg.steps}};
    if (cfg.objective) {
      const nc::NoiseObjective obj(cfg.generator, cfg.objective);
      out["objective_initial"] = obj.value(setup.initial.vectors);
      out["objective_final"] = obj.value(refined.vectors);
    } else {
      out["loss_initial"] = nc::masked_fidelity_loss(*cfg.generator, setup.initial.vectors, cfg.target, cfg.target_mask);
      out["loss_final"] = nc::masked_fidelity_loss(*cfg.generator, refined.vectors, cfg.target, cfg.target_mask);
    }
    if (!out_override.empty()) {
      nc::export_container(refined, out_override, nc::DType::F64);
      out["out"] = out_override;
    }
    emit(out);
    return 0;
  }
  throw nc::SpecError("--task must be amortized or refine");
}

int run_export_matrix(const CouplingFlags& f, const std::string& spec_arg, std::size_t rank, const std::string& out) {
  nc::CouplingSpec spec = [&] {
    if (spec_arg.empty()) return f.spec();
    json j;
    if (!spec_arg.empty() && (spec_arg.front() == '{')) {
      try {
        j = json::parse(spec_arg);
      } catch (const json::parse_error& e) {
        throw nc::SpecError(std::string("--spec is not valid JSON: ") + e.what());
      }
    } else {
      j = nc::load_json_file(spec_arg);
    }
    if (!j.contains("d")) j["d"] = 1;
    return nc::spec_from_json(j);
  }();
  const nc::SampleCorrelation r = nc::effective_correlation(spec);
  const std::size_t cols = rank == 0 ? spec.k() : rank;
  const nc::CouplingMatrix a = nc::factor_correlation(r, cols);
  const json doc{{"spec", nc::spec_to_json(spec)},
                 {"correlation", nc::matrix_to_json(r.entries())},
                 {"rank", nc::numerical_rank(r)},
                 {"matrix", nc::matrix_to_json(a.entries())}};
  nc::write_file(out, doc.dump(2) + "\n");
  std::cerr << "wrote " << out << '\n';
  emit(doc);
  return 0;
}

int fail(int code, const char* kind, const std::string& message, json extra = json::object()) {
  extra["error"] = kind;
  extra["message"] = message;
  extra["exit_code"] = code;
  std::cerr << extra.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian noise couplings: sampling, validation, analysis and optimization"};
  app.require_subcommand(1);

  CouplingFlags coupling;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::string out;
  std::string dtype = "f32";

  auto* sample_cmd = app.add_subcommand("sample", "draw one coupled batch and export it");
  coupling.attach(sample_cmd);
  sample_cmd->add_option("--seed", seed)->required();
  sample_cmd->add_option("--stream-id", stream_id);
  sample_cmd->add_option("--out", out)->required();
  sample_cmd->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f64"}));

  std::string in;
  std::size_t n = 20000;
  auto* validate_cmd = app.add_subcommand("validate", "statistical checks of a container or a spec");
  coupling.attach(validate_cmd);
  validate_cmd->add_option("--in", in);
  validate_cmd->add_option("--n", n);
  validate_cmd->add_option("--seed", seed);

  double feas_c = 0.0;
  auto* feas_cmd = app.add_subcommand("feasibility", "is equicorrelation c feasible for k noises");
  feas_cmd->add_option("--k", coupling.k)->required();
  feas_cmd->add_option("--c", feas_c)->required();

  AnalyzeFlags analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "separation, RBF similarity, coupling effect, c sweeps");
  coupling.attach(analyze_cmd);
  analyze_cmd->add_option("--task", analyze.task)->required()->check(CLI::IsMember({"separation", "rbf", "effect", "sweep"}));
  analyze_cmd->add_option("--linear-J", analyze.linear_j);
  analyze_cmd->add_option("--m", analyze.m, "feature dimension");
  analyze_cmd->add_option("--n", analyze.n, "replications");
  analyze_cmd->add_option("--seed", analyze.seed);
  analyze_cmd->add_option("--tau", analyze.tau);
  analyze_cmd->add_option("--objective", analyze.objective, "effect: pairwise_sq|random_feature");
  analyze_cmd->add_option("--nodes", analyze.quadrature_nodes);
  analyze_cmd->add_option("--probes", analyze.probes);
  analyze_cmd->add_flag("--remainder-bound", analyze.remainder);
  analyze_cmd->add_option("--metric", analyze.metric, "sweep: separation|rbf");

  std::string task;
  std::string config;
  auto* optimize_cmd = app.add_subcommand("optimize", "amortized coupling optimization or constrained refinement");
  optimize_cmd->add_option("--task", task)->required()->check(CLI::IsMember({"amortized", "refine"}));
  optimize_cmd->add_option("--config", config)->required();
  optimize_cmd->add_option("--out", out);

  std::string spec_arg;
  std::size_t rank = 0;
  auto* export_cmd = app.add_subcommand("export-matrix", "factor a spec's correlation into a coupling matrix");
  coupling.attach(export_cmd);
  export_cmd->add_option("--spec", spec_arg, "spec JSON (inline or file)");
  export_cmd->add_option("--rank", rank, "columns of the factor (default k)");
  export_cmd->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitConfig, "usage", e.what());
  }

  try {
    if (*sample_cmd) return run_sample(coupling, seed, stream_id, out, dtype);
    if (*validate_cmd) {
      if (in.empty() && coupling.coupling.empty()) throw nc::SpecError("validate needs --in or --coupling");
      return run_validate(coupling, in, n, seed);
    }
    if (*feas_cmd) return run_feasibility(coupling.k, feas_c);
    if (*analyze_cmd) return run_analyze(coupling, analyze);
    if (*optimize_cmd) return run_optimize(task, config, out);
    if (*export_cmd) return run_export_matrix(coupling, spec_arg, rank, out);
  } catch (const nc::FeasibilityError& e) {
    return fail(kExitConfig, "infeasible", e.what(), {{"interval", {e.lower(), e.upper()}}, {"c", e.requested()}});
  } catch (const nc::IntegrityError& e) {
    return fail(kExitIntegrity, "integrity", e.what());
  } catch (const nc::IoError& e) {
    return fail(kExitIo, "io", e.what());
  } catch (const nc::RankError& e) {
    return fail(kExitConfig, "rank", e.what());
  } catch (const nc::NotPSDError& e) {
    return fail(kExitConfig, "not_psd", e.what());
  } catch (const nc::DimensionError& e) {
    return fail(kExitConfig, "dimension", e.what());
  } catch (const nc::SpecError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const nc::DivergenceError& e) {
    return fail(kExitFail, "divergence", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kExitFail, "internal", e.what());
  }
  return kExitConfig;
}
