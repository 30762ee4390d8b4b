#pragma once

// JSON forms of specs and matrices shared by reports, sidecars and configs.
//
// Spec layout:
//   {"kind": "repulsive", "k": 3, "d": 16}
//   {"kind": "equicorr", "k": 3, "d": 16, "c": -0.25}
//   {"kind": "matrix", "d": 16, "matrix": [[...], ...]}
//   {"kind": "subspace", "d": 16, "basis": [[...], ...],   // d rows, s columns
//    "inner": {"kind": "identical", "k": 3}, "outer": {"kind": "independent", "k": 3}}

#include "noisecouple/core.hpp"

#include <json.hpp>

namespace noisecouple {

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vector& v);

nlohmann::json spec_to_json(const CouplingSpec& spec);
/// Throws SpecError (or FeasibilityError) on malformed or invalid input.
CouplingSpec spec_from_json(const nlohmann::json& j);

}  // namespace noisecouple
