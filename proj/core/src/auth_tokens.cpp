#include "aodip/auth_tokens.hpp"

#include "aodip/errors.hpp"
#include "aodip/json_util.hpp"
#include "aodip/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>

namespace aodip {

namespace {

Affine make_affine(std::uint64_t key, int out, int in) {
    Affine a;
    a.weight = seeded_gaussian(key, out, in, 1.0 / std::sqrt(double(in)));
    a.bias = Vec::Zero(out);
    return a;
}

Token project(const Affine& layer, const Vec& x, TokenRole role, const char* what) {
    if (x.size() != layer.in_dim()) {
        throw InvalidInput(std::string(what) + ": expected input of length " + std::to_string(layer.in_dim()) +
                           ", got " + std::to_string(x.size()));
    }
    return Token{role, layer(x)};
}

template <class F>
void for_each_tensor(const ProjectorParams& p, F&& f) {
    for (const Affine* a : {&p.img, &p.dom, &p.enc}) {
        f(a->weight);
        f(a->bias);
    }
}

template <class F>
void for_each_tensor(ProjectorParams& p, F&& f) {
    for (Affine* a : {&p.img, &p.dom, &p.enc}) {
        f(a->weight);
        f(a->bias);
    }
}

}  // namespace

ProjectorParams ProjectorParams::initialize(const BackboneSpec& spec, std::uint64_t seed) {
    const auto key = CounterRng::derive(seed, "projectors");
    ProjectorParams p;
    p.img = make_affine(CounterRng::derive(key, "img"), spec.token_dim, spec.multiscale_dim());
    p.dom = make_affine(CounterRng::derive(key, "dom"), spec.token_dim, spec.multiscale_dim());
    p.enc = make_affine(CounterRng::derive(key, "enc"), spec.token_dim, spec.feature_dim);
    return p;
}

ProjectorParams ProjectorParams::zeros_like(const ProjectorParams& p) {
    ProjectorParams z = p;
    for_each_tensor(z, [](auto& t) { t.setZero(); });
    return z;
}

Eigen::Index ProjectorParams::size() const {
    Eigen::Index n = 0;
    for_each_tensor(*this, [&](const auto& t) { n += t.size(); });
    return n;
}

Vec ProjectorParams::pack() const {
    Vec flat(size());
    Eigen::Index at = 0;
    for_each_tensor(*this, [&](const auto& t) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                flat[at++] = t(r, c);
            }
        }
    });
    return flat;
}

void ProjectorParams::unpack(const Vec& flat) {
    if (flat.size() != size()) {
        throw InvalidInput("ProjectorParams::unpack: size mismatch");
    }
    Eigen::Index at = 0;
    for_each_tensor(*this, [&](auto& t) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                t(r, c) = flat[at++];
            }
        }
    });
}

bool ProjectorParams::all_finite() const {
    bool ok = true;
    for_each_tensor(*this, [&](const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

AffineGrad affine_vjp(const Affine& layer, const Vec& x, const Vec& upstream) {
    if (x.size() != layer.in_dim() || upstream.size() != layer.out_dim()) {
        throw InvalidInput("affine_vjp: shape mismatch");
    }
    return AffineGrad{upstream * x.transpose(), upstream};
}

Token project_image_token(const Vec& ms, const ProjectorParams& params) {
    return project(params.img, ms, TokenRole::image, "project_image_token");
}

Token project_domain_token(const Vec& ms, const ProjectorParams& params) {
    return project(params.dom, ms, TokenRole::domain, "project_domain_token");
}

Token derive_credential(const FeatureVector& domain_mean, const ProjectorParams& params) {
    return project(params.enc, domain_mean, TokenRole::credential, "derive_credential");
}

std::vector<Prompt> assemble_prompts(const Token& credential, const Token& image_tok, const Token& domain_tok,
                                     const std::vector<Token>& class_table) {
    auto expect = [](const Token& t, TokenRole role, const char* slot) {
        if (t.role != role) {
            throw InvalidToken(std::string("slot '") + slot + "' expects a " + std::string(to_string(role)) +
                               " token, got " + std::string(to_string(t.role)));
        }
    };
    expect(credential, TokenRole::credential, "credential");
    expect(image_tok, TokenRole::image, "image");
    expect(domain_tok, TokenRole::domain, "domain");
    const auto width = credential.values.size();
    if (image_tok.values.size() != width || domain_tok.values.size() != width) {
        throw InvalidToken("prompt tokens differ in length");
    }

    std::vector<Prompt> prompts;
    prompts.reserve(class_table.size());
    for (std::size_t k = 0; k < class_table.size(); ++k) {
        expect(class_table[k], TokenRole::class_embedding, "class");
        if (class_table[k].values.size() != width) {
            throw InvalidToken("class token " + std::to_string(k) + " has wrong length");
        }
        prompts.push_back(Prompt{{credential, image_tok, domain_tok, class_table[k]}, static_cast<int>(k)});
    }
    return prompts;
}

std::vector<Token> make_class_table(const BackboneSpec& spec, int num_classes, std::uint64_t seed) {
    if (num_classes < 1) {
        throw InvalidInput("class table needs at least one task class");
    }
    const auto key = CounterRng::derive(seed, "class_table");
    std::vector<Token> table;
    for (int k = 0; k <= num_classes; ++k) {
        table.push_back(
            Token{TokenRole::class_embedding, seeded_gaussian(CounterRng::derive(key, std::uint64_t(k)), spec.token_dim, 1.0)});
    }
    return table;
}

void to_json(nlohmann::json& j, const ProjectorParams& p) {
    auto layer = [](const Affine& a) { return nlohmann::json{{"weight", matrix_to_json(a.weight)}, {"bias", vector_to_json(a.bias)}}; };
    j = nlohmann::json{{"img", layer(p.img)}, {"dom", layer(p.dom)}, {"enc", layer(p.enc)}};
}

void from_json(const nlohmann::json& j, ProjectorParams& p) {
    auto layer = [](const nlohmann::json& jj) {
        return Affine{matrix_from_json(jj.at("weight")), vector_from_json(jj.at("bias"))};
    };
    p.img = layer(j.at("img"));
    p.dom = layer(j.at("dom"));
    p.enc = layer(j.at("enc"));
}

void to_json(nlohmann::json& j, const Token& t) {
    j = nlohmann::json{{"role", std::string(to_string(t.role))}, {"values", vector_to_json(t.values)}};
}

void from_json(const nlohmann::json& j, Token& t) {
    const auto role = j.at("role").get<std::string>();
    if (role == "credential") t.role = TokenRole::credential;
    else if (role == "image") t.role = TokenRole::image;
    else if (role == "domain") t.role = TokenRole::domain;
    else if (role == "class") t.role = TokenRole::class_embedding;
    else throw InvalidToken("unknown token role '" + role + "'");
    t.values = vector_from_json(j.at("values"));
}

}  // namespace aodip
