#include "noisecouple/serialize.hpp"

namespace noisecouple {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw SpecError("matrix must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw SpecError("matrix rows must have equal length");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw SpecError("matrix entries must be numbers");
      m(i, c) = v.get<double>();
    }
  }
  return m;
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json spec_to_json(const CouplingSpec& spec) {
  json j{{"kind", std::string(to_string(spec.kind()))}, {"k", spec.k()}, {"d", spec.d()}};
  switch (spec.kind()) {
    case CouplingKind::Equicorrelated: j["c"] = spec.c(); break;
    case CouplingKind::Matrix: j["matrix"] = matrix_to_json(spec.coupling_matrix().entries()); break;
    case CouplingKind::Subspace: {
      const SubspaceSpec& sub = spec.subspace_spec();
      j["basis"] = matrix_to_json(sub.basis);
      json inner = spec_to_json(sub.inner);
      json outer = spec_to_json(sub.outer);
      inner.erase("d");
      outer.erase("d");
      j["inner"] = std::move(inner);
      j["outer"] = std::move(outer);
      break;
    }
    default: break;
  }
  return j;
}

namespace {

std::size_t get_size(const json& j, const char* key) {
  if (!j.contains(key)) throw SpecError(std::string("spec is missing '") + key + "'");
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() <= 0) throw SpecError(std::string("'") + key + "' must be a positive integer");
  return v.get<std::size_t>();
}

CouplingSpec parse(const json& j, std::size_t d) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) throw SpecError("spec needs a string 'kind'");
  const CouplingKind kind = parse_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case CouplingKind::Identical: return CouplingSpec::identical(get_size(j, "k"), d);
    case CouplingKind::Independent: return CouplingSpec::independent(get_size(j, "k"), d);
    case CouplingKind::Antithetic:
      if (j.contains("k") && get_size(j, "k") != 2) throw SpecError("antithetic coupling requires k = 2");
      return CouplingSpec::antithetic(d);
    case CouplingKind::Repulsive: return CouplingSpec::repulsive(get_size(j, "k"), d);
    case CouplingKind::Equicorrelated:
      if (!j.contains("c") || !j.at("c").is_number()) throw SpecError("equicorr spec needs numeric 'c'");
      return CouplingSpec::equicorrelated(get_size(j, "k"), d, j.at("c").get<double>());
    case CouplingKind::Matrix: {
      if (!j.contains("matrix")) throw SpecError("matrix spec needs 'matrix'");
      CouplingMatrix a(matrix_from_json(j.at("matrix")));
      if (j.contains("k") && get_size(j, "k") != a.k()) throw SpecError("matrix rows must equal k");
      return CouplingSpec::matrix(std::move(a), d);
    }
    case CouplingKind::Subspace: {
      if (!j.contains("basis") || !j.contains("inner") || !j.contains("outer")) {
        throw SpecError("subspace spec needs 'basis', 'inner' and 'outer'");
      }
      Matrix basis = matrix_from_json(j.at("basis"));
      if (static_cast<std::size_t>(basis.rows()) != d) throw SpecError("subspace basis must have d rows");
      const CouplingSpec inner = parse(j.at("inner"), 1);
      const CouplingSpec outer = parse(j.at("outer"), 1);
      return CouplingSpec::subspace(SubspaceSpec::make(std::move(basis), inner, outer));
    }
  }
  throw SpecError("unhandled coupling kind");
}

}  // namespace

CouplingSpec spec_from_json(const json& j) {
  if (!j.is_object()) throw SpecError("spec must be a JSON object");
  return parse(j, get_size(j, "d"));
}

}  // namespace noisecouple
