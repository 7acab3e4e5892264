#include "aodip/embedding.hpp"

#include "aodip/errors.hpp"
#include "aodip/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace aodip {

std::string_view to_string(TokenRole role) {
    switch (role) {
        case TokenRole::credential: return "credential";
        case TokenRole::image: return "image";
        case TokenRole::domain: return "domain";
        case TokenRole::class_embedding: return "class";
    }
    return "unknown";
}

Vec Prompt::flatten() const {
    Eigen::Index total = 0;
    for (const auto& t : tokens) {
        total += t.values.size();
    }
    Vec out(total);
    Eigen::Index at = 0;
    for (const auto& t : tokens) {
        out.segment(at, t.values.size()) = t.values;
        at += t.values.size();
    }
    return out;
}

Mat seeded_gaussian(std::uint64_t key, int rows, int cols, double stddev) {
    CounterRng rng(key);
    Mat m(rows, cols);
    // Row-major draw order so the stream layout does not depend on Eigen storage order.
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            m(r, c) = stddev * rng.normal();
        }
    }
    return m;
}

Vec seeded_gaussian(std::uint64_t key, int n, double stddev) {
    CounterRng rng(key);
    Vec v(n);
    for (int i = 0; i < n; ++i) {
        v[i] = stddev * rng.normal();
    }
    return v;
}

Backbone Backbone::instantiate(BackboneSpec spec) {
    if (spec.input_dim <= 0 || spec.hidden_dim <= 0 || spec.feature_dim <= 0 || spec.token_dim <= 0 ||
        spec.prompt_token_count <= 0) {
        throw InvalidInput("backbone dimensions must be positive");
    }
    const auto key = CounterRng::derive(spec.master_seed, "backbone");
    auto init = [&](std::string_view name, int rows, int cols) {
        return seeded_gaussian(CounterRng::derive(key, name), rows, cols, 1.0 / std::sqrt(double(cols)));
    };
    auto init_bias = [&](std::string_view name, int n, int fan_in) {
        return seeded_gaussian(CounterRng::derive(key, name), n, 1.0 / std::sqrt(double(fan_in)));
    };

    Backbone b;
    b.vis_w1_ = init("vis.w1", spec.hidden_dim, spec.input_dim);
    b.vis_b1_ = init_bias("vis.b1", spec.hidden_dim, spec.input_dim);
    b.vis_w2_ = init("vis.w2", spec.feature_dim, spec.hidden_dim);
    b.vis_b2_ = init_bias("vis.b2", spec.feature_dim, spec.hidden_dim);
    b.txt_w1_ = init("txt.w1", spec.hidden_dim, spec.prompt_dim());
    b.txt_b1_ = init_bias("txt.b1", spec.hidden_dim, spec.prompt_dim());
    b.txt_w2_ = init("txt.w2", spec.feature_dim, spec.hidden_dim);
    b.txt_b2_ = init_bias("txt.b2", spec.feature_dim, spec.hidden_dim);
    b.spec_ = spec;
    b.spec_.frozen_param_digest = backbone_digest(b);
    return b;
}

ImageEncoding Backbone::encode_image(const Vec& x) const {
    if (x.size() != spec_.input_dim) {
        throw InvalidInput("encode_image: expected input of length " + std::to_string(spec_.input_dim) + ", got " +
                           std::to_string(x.size()));
    }
    ImageEncoding out;
    Vec h = (vis_w1_ * x + vis_b1_).array().tanh().matrix();
    out.f_v = vis_w2_ * h + vis_b2_;
    out.ms.resize(spec_.multiscale_dim());
    out.ms << h, out.f_v;
    return out;
}

FeatureVector Backbone::encode_text(const Prompt& prompt) const {
    if (static_cast<int>(prompt.tokens.size()) != spec_.prompt_token_count) {
        throw InvalidPrompt("prompt must hold exactly " + std::to_string(spec_.prompt_token_count) + " tokens, got " +
                            std::to_string(prompt.tokens.size()));
    }
    for (const auto& t : prompt.tokens) {
        if (t.values.size() != spec_.token_dim) {
            throw InvalidPrompt("token of length " + std::to_string(t.values.size()) + " (expected " +
                                std::to_string(spec_.token_dim) + ")");
        }
    }
    return encode_text_flat(prompt.flatten());
}

FeatureVector Backbone::encode_text_flat(const Vec& flat) const {
    if (flat.size() != spec_.prompt_dim()) {
        throw InvalidPrompt("flattened prompt has wrong length");
    }
    Vec h = (txt_w1_ * flat + txt_b1_).array().tanh().matrix();
    return txt_w2_ * h + txt_b2_;
}

Vec Backbone::encode_text_vjp(const Vec& flat, const Vec& upstream) const {
    if (flat.size() != spec_.prompt_dim() || upstream.size() != spec_.feature_dim) {
        throw InvalidPrompt("encode_text_vjp: shape mismatch");
    }
    Vec h = (txt_w1_ * flat + txt_b1_).array().tanh().matrix();
    Vec dh = txt_w2_.transpose() * upstream;
    Vec da = dh.array() * (1.0 - h.array().square());
    return txt_w1_.transpose() * da;
}

namespace {

void hash_spec_dims(Hasher& h, const BackboneSpec& spec) {
    h.str("aodip.backbone.v1")
        .u64(spec.master_seed)
        .i64(spec.input_dim)
        .i64(spec.hidden_dim)
        .i64(spec.feature_dim)
        .i64(spec.token_dim)
        .i64(spec.prompt_token_count);
}

}  // namespace

Digest backbone_digest(const Backbone& b) {
    Hasher h;
    hash_spec_dims(h, b.spec());
    h.mat(b.vis_w1()).vec(b.vis_b1()).mat(b.vis_w2()).vec(b.vis_b2());
    h.mat(b.txt_w1()).vec(b.txt_b1()).mat(b.txt_w2()).vec(b.txt_b2());
    return h.finish();
}

Digest backbone_digest(const BackboneSpec& spec) {
    return Backbone::instantiate(spec).spec().frozen_param_digest;
}

std::vector<FeatureRecord> ingest_precomputed_features(const std::filesystem::path& path, int expected_dim) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open feature file " + path.string());
    }
    std::vector<FeatureRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        FeatureRecord rec;
        try {
            auto j = nlohmann::json::parse(line);
            rec.domain = j.at("domain").get<std::string>();
            rec.label = j.at("label").get<int>();
            auto values = j.at("feature").get<std::vector<double>>();
            rec.feature = Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
        if (expected_dim >= 0 && rec.feature.size() != expected_dim) {
            throw InvalidInput("record " + std::to_string(out.size()) + " (line " + std::to_string(line_no) +
                               ") has dimension " + std::to_string(rec.feature.size()) + ", expected " +
                               std::to_string(expected_dim));
        }
        if (!rec.feature.allFinite()) {
            throw ParseError("non-finite feature value", line_no);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void write_feature_file(const std::filesystem::path& path, const std::vector<FeatureRecord>& records) {
    std::ofstream out(path);
    if (!out) {
        throw StorageError("cannot write " + path.string());
    }
    for (const auto& r : records) {
        nlohmann::json j;
        j["domain"] = r.domain;
        j["label"] = r.label;
        j["feature"] = std::vector<double>(r.feature.data(), r.feature.data() + r.feature.size());
        out << j.dump() << '\n';
    }
}

void to_json(nlohmann::json& j, const BackboneSpec& spec) {
    j = nlohmann::json{{"master_seed", spec.master_seed},
                       {"input_dim", spec.input_dim},
                       {"hidden_dim", spec.hidden_dim},
                       {"feature_dim", spec.feature_dim},
                       {"token_dim", spec.token_dim},
                       {"prompt_token_count", spec.prompt_token_count},
                       {"frozen_param_digest", to_hex(spec.frozen_param_digest)}};
}

void from_json(const nlohmann::json& j, BackboneSpec& spec) {
    spec.master_seed = j.at("master_seed").get<std::uint64_t>();
    spec.input_dim = j.at("input_dim").get<int>();
    spec.hidden_dim = j.at("hidden_dim").get<int>();
    spec.feature_dim = j.at("feature_dim").get<int>();
    spec.token_dim = j.at("token_dim").get<int>();
    spec.prompt_token_count = j.at("prompt_token_count").get<int>();
    if (j.contains("frozen_param_digest")) {
        spec.frozen_param_digest = digest_from_hex(j.at("frozen_param_digest").get<std::string>());
    }
}

}  // namespace aodip
