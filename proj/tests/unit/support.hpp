#pragma once

// Independent reference implementations used as test oracles. They are written as plain loops
// over std::vector so that they share no code path with the Eigen kernels under test.

#include "aodip/rng.hpp"
#include "aodip/tokens.hpp"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace aodip::test {

inline std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vec random_vec(CounterRng& rng, int n, double scale = 1.0) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

inline double oracle_dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    return oracle_dot(a, b) / (std::sqrt(oracle_dot(a, a)) * std::sqrt(oracle_dot(b, b)));
}

inline std::vector<double> oracle_softmax(const std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    std::vector<double> e(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        e[i] = std::exp(z[i] - m);
        s += e[i];
    }
    for (double& v : e) v /= s;
    return e;
}

inline double oracle_kl(const std::vector<double>& a, const std::vector<double>& b) {
    const auto p = oracle_softmax(a);
    const auto q = oracle_softmax(b);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

/// Scratch directory removed on scope exit.
class TempDir {
public:
    TempDir() {
        static int counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("aodip-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace aodip::test
