#include "noisecouple/config.hpp"

#include "noisecouple/container.hpp"
#include "noisecouple/random.hpp"
#include "noisecouple/sampler.hpp"
#include "noisecouple/serialize.hpp"

namespace noisecouple {

using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::size_t require_size(const json& j, const char* key) {
  if (!j.contains(key)) throw SpecError(std::string("missing '") + key + "'");
  const auto v = j.at(key).get<std::int64_t>();
  if (v < 0) throw SpecError(std::string("'") + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> index_list(const json& j) {
  if (j.is_object() && j.contains("range")) {
    const auto& r = j.at("range");
    const auto lo = r.at(0).get<std::size_t>();
    const auto hi = r.at(1).get<std::size_t>();
    if (hi < lo) throw SpecError("index range must have lo <= hi");
    std::vector<std::size_t> out;
    for (std::size_t i = lo; i < hi; ++i) out.push_back(i);
    return out;
  }
  return j.get<std::vector<std::size_t>>();
}

Vector vector_from_json(const json& j, std::size_t size) {
  if (j.is_number()) return Vector::Constant(static_cast<Eigen::Index>(size), j.get<double>());
  const auto v = j.get<std::vector<double>>();
  if (v.size() != size) throw DimensionError("vector has the wrong length");
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Matrix random_projection(std::uint64_t seed, std::size_t m, std::size_t d) {
  RandomStream rs(seed, 0);
  Matrix j(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Eigen::Index r = 0; r < j.rows(); ++r)
    for (Eigen::Index c = 0; c < j.cols(); ++c) j(r, c) = scale * rs.normal();
  return j;
}

GeneratorPtr generator_from_json(const json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const std::size_t d = require_size(j, "d");
    if (d == 0) throw SpecError("generator dimension must be positive");
    if (kind == "identity") return make_identity(d);
    if (kind == "linear") {
      const json spec_j = j.value("j", json("identity"));
      Matrix jm;
      if (spec_j.is_string() && spec_j == "identity") {
        jm = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      } else if (spec_j.is_string() && spec_j == "random") {
        jm = random_projection(get_or<std::uint64_t>(j, "seed", 0), get_or<std::size_t>(j, "m", d), d);
      } else {
        jm = matrix_from_json(spec_j);
        if (static_cast<std::size_t>(jm.cols()) != d) throw DimensionError("linear generator J must have d columns");
      }
      Vector offset = j.contains("offset") ? vector_from_json(j.at("offset"), static_cast<std::size_t>(jm.rows()))
                                           : Vector::Zero(jm.rows());
      return make_linear(std::move(jm), std::move(offset), j.value("context", std::string("linear")));
    }
    if (kind == "random_feature") {
      return make_random_feature(get_or<std::uint64_t>(j, "seed", 0), d, require_size(j, "m"),
                                 get_or<std::size_t>(j, "width", 32));
    }
    if (kind == "brightness") return make_brightness_surrogate(get_or<std::uint64_t>(j, "seed", 0), d);
    throw SpecError("unknown generator kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw SpecError(std::string("generator config: ") + e.what());
  }
}

ObjectivePtr objective_from_json(const json& j, std::size_t k) {
  try {
    const std::string name = j.is_string() ? j.get<std::string>() : j.at("name").get<std::string>();
    const json opts = j.is_object() ? j : json::object();
    if (name == "pairwise_l2") return objective_pairwise_l2(k);
    if (name == "pairwise_sq") return objective_pairwise_sq(k);
    if (name == "rbf") return objective_rbf(k, opts.value("tau", 1.0));
    if (name == "brightness_cluster") {
      if (k != 4) throw SpecError("brightness_cluster objective needs k = 4");
      return objective_brightness_cluster(opts.value("lambda", 0.35));
    }
    throw SpecError("unknown objective '" + name + "'");
  } catch (const json::exception& e) {
    throw SpecError(std::string("objective config: ") + e.what());
  }
}

AmortizedConfig amortized_from_json(const json& j) {
  try {
    AmortizedConfig cfg;
    cfg.k = get_or<std::size_t>(j, "k", cfg.k);
    cfg.r = get_or<std::size_t>(j, "r", cfg.k);
    cfg.generator = generator_from_json(j.at("generator"));
    cfg.objective = objective_from_json(j.at("objective"), cfg.k);
    if (j.contains("maximize")) cfg.maximize = j.at("maximize").get<bool>();
    cfg.steps = get_or<std::size_t>(j, "steps", cfg.steps);
    cfg.step_size = get_or<double>(j, "step_size", cfg.step_size);
    cfg.cosine_decay = get_or<bool>(j, "cosine_decay", cfg.cosine_decay);
    cfg.mc_batch = get_or<std::size_t>(j, "mc_batch", cfg.mc_batch);
    cfg.crn_reuse = get_or<std::size_t>(j, "crn_reuse", cfg.crn_reuse);
    cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
    const std::string init = j.value("init", std::string("identity_rows"));
    if (init == "identity_rows") {
      cfg.init = InitKind::IdentityRows;
    } else if (init == "random_rows") {
      cfg.init = InitKind::RandomRows;
    } else {
      throw SpecError("init must be identity_rows or random_rows");
    }
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw SpecError(std::string("amortized config: ") + e.what());
  }
}

RefineSetup refine_from_json(const json& j) {
  try {
    const CouplingSpec spec = spec_from_json(j.at("initial"));
    const auto seed = get_or<std::uint64_t>(j, "seed", 0);
    const auto stream_id = get_or<std::uint64_t>(j, "stream_id", 0);
    RefineSetup setup{sample(spec, RandomStream(seed, stream_id)), RefineConfig{}};
    RefineConfig& cfg = setup.config;
    cfg.generator = generator_from_json(j.at("generator"));
    cfg.optimized = index_list(j.at("optimized"));
    cfg.steps = get_or<std::size_t>(j, "steps", cfg.steps);
    cfg.step_size = get_or<double>(j, "step_size", cfg.step_size);
    if (j.contains("objective")) {
      cfg.objective = objective_from_json(j.at("objective"), spec.k());
      if (j.contains("maximize")) cfg.maximize = j.at("maximize").get<bool>();
    } else {
      const std::size_t m = cfg.generator->dims().output;
      cfg.target = vector_from_json(j.at("target"), m);
      cfg.target_mask = index_list(j.at("target_mask"));
    }
    cfg.validate(spec.d());
    return setup;
  } catch (const json::exception& e) {
    throw SpecError(std::string("refine config: ") + e.what());
  }
}

json load_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SpecError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace noisecouple
