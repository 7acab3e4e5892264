#include "aodip/digest.hpp"

#include "aodip/errors.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>

namespace aodip {

struct Hasher::Impl {
    EVP_MD_CTX* ctx = nullptr;
};

Hasher::Hasher() : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_MD_CTX_new();
    if (impl_->ctx == nullptr || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 init failed");
    }
}

Hasher::~Hasher() {
    if (impl_ && impl_->ctx) {
        EVP_MD_CTX_free(impl_->ctx);
    }
}

Hasher& Hasher::bytes(const void* data, std::size_t n) {
    EVP_DigestUpdate(impl_->ctx, data, n);
    return *this;
}

Hasher& Hasher::u64(std::uint64_t v) {
    std::uint8_t buf[8];
    for (int i = 0; i < 8; ++i) {
        buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    return bytes(buf, sizeof buf);
}

Hasher& Hasher::f64(double v) {
    // -0.0 and 0.0 are distinct parameters; hash the raw bits.
    return u64(std::bit_cast<std::uint64_t>(v));
}

Hasher& Hasher::str(std::string_view s) {
    u64(s.size());
    return bytes(s.data(), s.size());
}

Hasher& Hasher::vec(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        f64(v[i]);
    }
    return *this;
}

Hasher& Hasher::mat(const Eigen::MatrixXd& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            f64(m(r, c));
        }
    }
    return *this;
}

Digest Hasher::finish() {
    Digest out{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(impl_->ctx, out.data(), &len);
    return out;
}

std::string to_hex(const Digest& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    s.reserve(d.size() * 2);
    for (auto b : d) {
        s.push_back(kHex[b >> 4]);
        s.push_back(kHex[b & 0xf]);
    }
    return s;
}

Digest digest_from_hex(std::string_view hex) {
    if (hex.size() != 64) {
        throw InvalidInput("digest must be 64 hex characters");
    }
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw InvalidInput(std::string("bad hex character '") + c + "'");
    };
    Digest d{};
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) << 4 | nibble(hex[2 * i + 1]));
    }
    return d;
}

}  // namespace aodip
