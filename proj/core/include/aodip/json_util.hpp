#pragma once

#include "aodip/tokens.hpp"

#include <nlohmann/json.hpp>

namespace aodip {

// Matrices are stored as {"rows", "cols", "data"} with data in row-major order.
nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_json(const nlohmann::json& j);
nlohmann::json vector_to_json(const Vec& v);
Vec vector_from_json(const nlohmann::json& j);

}  // namespace aodip
