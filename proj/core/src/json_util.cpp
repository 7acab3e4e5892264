#include "aodip/json_util.hpp"

#include "aodip/errors.hpp"

namespace aodip {

nlohmann::json matrix_to_json(const Mat& m) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            data.push_back(m(r, c));
        }
    }
    return nlohmann::json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
        throw InvalidInput("matrix payload does not match its shape");
    }
    Mat m(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = data[at++];
        }
    }
    return m;
}

nlohmann::json vector_to_json(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Vec vector_from_json(const nlohmann::json& j) {
    const auto data = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace aodip
