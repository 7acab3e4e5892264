#pragma once

// Batched forward/backward through the prompt path. Columns are samples.
// The text encoder's first layer is linear in the prompt, so the shared slots
// contribute one pre-activation per sample and each class adds a constant column.

#include "aodip/auth_tokens.hpp"
#include "aodip/embedding.hpp"

#include <vector>

namespace aodip::detail {

struct FrozenText {
    Mat w1c, w1g, w1d;  // hidden x token_dim blocks of the first layer
    Mat q;              // hidden x (N+1): class-slot contribution plus bias
    Mat w2;
    Vec b2;

    int classes() const { return static_cast<int>(q.cols()); }
};

FrozenText make_frozen_text(const Backbone& backbone, const std::vector<Token>& class_table);

struct EncodedColumns {
    Mat f_v;  // d x B
    Mat ms;   // d_ms x B
};

struct StreamForward {
    Mat g, dm;                 // token_dim x B
    Vec cred;                  // token_dim
    std::vector<Mat> h;        // per class, hidden x B
    std::vector<Mat> f_t;      // per class, d x B
    Vec fv_norm;               // B
    std::vector<Vec> ft_norm;  // per class, B
    Mat cos;                   // (N+1) x B
};

/// Throws DegenerateFeature on a zero-norm visual or text feature.
StreamForward forward_stream(const FrozenText& text, const ProjectorParams& params, const EncodedColumns& in,
                             const Vec& cred);

/// Gradient of the scalar loss with respect to the stream's token inputs.
struct StreamGrad {
    Mat d_g, d_dm;  // token_dim x B
    Vec d_cred;     // token_dim
};

/// d_cos: dL/dcos, (N+1) x B. d_ft: optional extra dL/df_t per class (empty to skip).
StreamGrad backward_stream(const FrozenText& text, const EncodedColumns& in, const StreamForward& fw,
                           const Mat& d_cos, const std::vector<Mat>& d_ft);

/// Accumulates projector gradients for a stream whose credential came from cred_source via P_enc.
void accumulate_projector_grad(const EncodedColumns& in, const StreamGrad& sg, ProjectorParams& grad);
void accumulate_credential_grad(const Vec& cred_source, const Vec& d_cred, ProjectorParams& grad);

}  // namespace aodip::detail
