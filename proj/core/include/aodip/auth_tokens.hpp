#pragma once

#include "aodip/embedding.hpp"
#include "aodip/tokens.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <vector>

namespace aodip {

/// Single affine layer y = W x + b.
struct Affine {
    Mat weight;
    Vec bias;

    Vec operator()(const Vec& x) const { return weight * x + bias; }
    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

/// The three trainable projectors of the authorization module.
struct ProjectorParams {
    Affine img;  // multi-scale feature -> image token
    Affine dom;  // multi-scale feature -> domain token
    Affine enc;  // domain-mean visual feature -> credential token

    static ProjectorParams initialize(const BackboneSpec& spec, std::uint64_t seed);
    static ProjectorParams zeros_like(const ProjectorParams& p);

    /// Flat parameter vector in the fixed order img.W, img.b, dom.W, dom.b, enc.W, enc.b
    /// (matrices row-major).
    Vec pack() const;
    void unpack(const Vec& flat);
    Eigen::Index size() const;

    bool all_finite() const;
};

/// Gradient of a scalar w.r.t. an affine layer's parameters given dL/dy.
struct AffineGrad {
    Mat weight;
    Vec bias;
};
AffineGrad affine_vjp(const Affine& layer, const Vec& x, const Vec& upstream);

Token project_image_token(const Vec& ms, const ProjectorParams& params);
Token project_domain_token(const Vec& ms, const ProjectorParams& params);
Token derive_credential(const FeatureVector& domain_mean, const ProjectorParams& params);

/// One prompt per class k in [0, class_table.size()): [credential, image, domain, class_k].
std::vector<Prompt> assemble_prompts(const Token& credential, const Token& image_tok, const Token& domain_tok,
                                     const std::vector<Token>& class_table);

/// Frozen, seeded class-embedding tokens; entry N is the unauthorized class.
std::vector<Token> make_class_table(const BackboneSpec& spec, int num_classes, std::uint64_t seed);

void to_json(nlohmann::json& j, const ProjectorParams& p);
void from_json(const nlohmann::json& j, ProjectorParams& p);
void to_json(nlohmann::json& j, const Token& t);
void from_json(const nlohmann::json& j, Token& t);

}  // namespace aodip
