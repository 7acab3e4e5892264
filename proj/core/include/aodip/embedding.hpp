#pragma once

#include "aodip/digest.hpp"
#include "aodip/tokens.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aodip {

using FeatureVector = Vec;

/// Dimensions and seed of the frozen encoder pair. frozen_param_digest is filled in
/// by Backbone::instantiate and is a pure function of the other fields.
struct BackboneSpec {
    std::uint64_t master_seed = 42;
    int input_dim = 32;
    int hidden_dim = 128;
    int feature_dim = 64;
    int token_dim = 64;
    int prompt_token_count = 4;
    Digest frozen_param_digest{};

    int multiscale_dim() const { return hidden_dim + feature_dim; }
    int prompt_dim() const { return token_dim * prompt_token_count; }
};

struct ImageEncoding {
    FeatureVector f_v;  // final layer, length d
    Vec ms;             // [hidden activation, f_v], length hidden_dim + d
};

/// Two frozen tanh perceptrons standing in for the visual and text towers of a
/// contrastive vision-language model. Immutable after construction.
class Backbone {
public:
    static Backbone instantiate(BackboneSpec spec);

    const BackboneSpec& spec() const { return spec_; }

    ImageEncoding encode_image(const Vec& x) const;
    FeatureVector encode_text(const Prompt& prompt) const;

    /// encode_text on a pre-flattened prompt (length prompt_token_count * token_dim).
    FeatureVector encode_text_flat(const Vec& flat) const;

    /// Vector-Jacobian product of encode_text: returns d(upstream . f_t)/d(prompt entries),
    /// laid out like Prompt::flatten().
    Vec encode_text_vjp(const Vec& flat, const Vec& upstream) const;

    // Frozen tensors, exposed read-only for batched training kernels and oracles.
    const Mat& vis_w1() const { return vis_w1_; }
    const Vec& vis_b1() const { return vis_b1_; }
    const Mat& vis_w2() const { return vis_w2_; }
    const Vec& vis_b2() const { return vis_b2_; }
    const Mat& txt_w1() const { return txt_w1_; }
    const Vec& txt_b1() const { return txt_b1_; }
    const Mat& txt_w2() const { return txt_w2_; }
    const Vec& txt_b2() const { return txt_b2_; }

private:
    BackboneSpec spec_;
    Mat vis_w1_, vis_w2_, txt_w1_, txt_w2_;
    Vec vis_b1_, vis_b2_, txt_b1_, txt_b2_;
};

/// SHA-256 over every frozen tensor in canonical order (spec dims first).
Digest backbone_digest(const BackboneSpec& spec);
Digest backbone_digest(const Backbone& backbone);

/// Gaussian N(0, 1/fan_in) matrix drawn from a counter-based stream.
Mat seeded_gaussian(std::uint64_t key, int rows, int cols, double stddev);
Vec seeded_gaussian(std::uint64_t key, int n, double stddev);

struct FeatureRecord {
    std::string domain;
    int label = 0;
    FeatureVector feature;
};

/// Reads the JSON-lines feature format {"domain", "label", "feature": [...]}.
/// expected_dim < 0 skips the dimension check.
std::vector<FeatureRecord> ingest_precomputed_features(const std::filesystem::path& path, int expected_dim = -1);
void write_feature_file(const std::filesystem::path& path, const std::vector<FeatureRecord>& records);

void to_json(nlohmann::json& j, const BackboneSpec& spec);
void from_json(const nlohmann::json& j, BackboneSpec& spec);

}  // namespace aodip
