#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>

namespace aodip {

using Digest = std::array<std::uint8_t, 32>;

std::string to_hex(const Digest& d);
Digest digest_from_hex(std::string_view hex);

/// Incremental SHA-256 over a canonical little-endian serialization.
class Hasher {
public:
    Hasher();
    ~Hasher();
    Hasher(const Hasher&) = delete;
    Hasher& operator=(const Hasher&) = delete;

    Hasher& bytes(const void* data, std::size_t n);
    Hasher& u64(std::uint64_t v);
    Hasher& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }
    Hasher& f64(double v);
    Hasher& str(std::string_view s);
    Hasher& vec(const Eigen::VectorXd& v);
    Hasher& mat(const Eigen::MatrixXd& m);  // row-major order, shape first

    Digest finish();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace aodip
