#include "prompt_kernel.hpp"

#include "aodip/errors.hpp"

namespace aodip::detail {

FrozenText make_frozen_text(const Backbone& backbone, const std::vector<Token>& class_table) {
    const auto& spec = backbone.spec();
    const int t = spec.token_dim;
    if (spec.prompt_token_count != 4) {
        throw InvalidPrompt("batched prompt path expects 4 token slots");
    }
    const Mat& w1 = backbone.txt_w1();
    FrozenText ft;
    ft.w1c = w1.middleCols(0, t);
    ft.w1g = w1.middleCols(t, t);
    ft.w1d = w1.middleCols(2 * t, t);
    ft.q.resize(spec.hidden_dim, static_cast<Eigen::Index>(class_table.size()));
    for (std::size_t k = 0; k < class_table.size(); ++k) {
        if (class_table[k].values.size() != t) {
            throw InvalidToken("class token " + std::to_string(k) + " has wrong length");
        }
        ft.q.col(static_cast<Eigen::Index>(k)) = w1.middleCols(3 * t, t) * class_table[k].values + backbone.txt_b1();
    }
    ft.w2 = backbone.txt_w2();
    ft.b2 = backbone.txt_b2();
    return ft;
}

StreamForward forward_stream(const FrozenText& text, const ProjectorParams& params, const EncodedColumns& in,
                             const Vec& cred) {
    const Eigen::Index batch = in.f_v.cols();
    const int classes = text.classes();
    StreamForward fw;
    fw.g = (params.img.weight * in.ms).colwise() + params.img.bias;
    fw.dm = (params.dom.weight * in.ms).colwise() + params.dom.bias;
    fw.cred = cred;

    Mat z = text.w1g * fw.g + text.w1d * fw.dm;
    z.colwise() += text.w1c * cred;

    fw.fv_norm = in.f_v.colwise().norm().transpose();
    if ((fw.fv_norm.array() == 0.0).any()) {
        throw DegenerateFeature("zero-norm visual feature");
    }
    fw.h.resize(classes);
    fw.f_t.resize(classes);
    fw.ft_norm.resize(classes);
    fw.cos.resize(classes, batch);
    for (int k = 0; k < classes; ++k) {
        fw.h[k] = (z.colwise() + text.q.col(k)).array().tanh().matrix();
        fw.f_t[k] = (text.w2 * fw.h[k]).colwise() + text.b2;
        fw.ft_norm[k] = fw.f_t[k].colwise().norm().transpose();
        if ((fw.ft_norm[k].array() == 0.0).any()) {
            throw DegenerateFeature("zero-norm text feature for class " + std::to_string(k));
        }
        const Vec dots = (in.f_v.array() * fw.f_t[k].array()).colwise().sum().transpose();
        fw.cos.row(k) = (dots.array() / (fw.fv_norm.array() * fw.ft_norm[k].array())).transpose();
    }
    return fw;
}

StreamGrad backward_stream(const FrozenText& text, const EncodedColumns& in, const StreamForward& fw,
                           const Mat& d_cos, const std::vector<Mat>& d_ft) {
    const int classes = text.classes();
    Mat dz = Mat::Zero(text.q.rows(), in.f_v.cols());
    for (int k = 0; k < classes; ++k) {
        // dcos/df_t = f_v / (|f_v||f_t|) - cos * f_t / |f_t|^2
        const Eigen::ArrayXXd inv_ft = fw.ft_norm[k].array().inverse().transpose().replicate(in.f_v.rows(), 1);
        const Eigen::ArrayXXd inv_fv = fw.fv_norm.array().inverse().transpose().replicate(in.f_v.rows(), 1);
        const Eigen::ArrayXXd c = fw.cos.row(k).array().replicate(in.f_v.rows(), 1);
        const Eigen::ArrayXXd w = d_cos.row(k).array().replicate(in.f_v.rows(), 1);
        Mat df = (w * (in.f_v.array() * inv_fv * inv_ft - c * fw.f_t[k].array() * inv_ft.square())).matrix();
        if (!d_ft.empty()) {
            df += d_ft[k];
        }
        dz.array() += (text.w2.transpose() * df).array() * (1.0 - fw.h[k].array().square());
    }
    StreamGrad sg;
    sg.d_g = text.w1g.transpose() * dz;
    sg.d_dm = text.w1d.transpose() * dz;
    sg.d_cred = text.w1c.transpose() * dz.rowwise().sum();
    return sg;
}

void accumulate_projector_grad(const EncodedColumns& in, const StreamGrad& sg, ProjectorParams& grad) {
    grad.img.weight.noalias() += sg.d_g * in.ms.transpose();
    grad.img.bias += sg.d_g.rowwise().sum();
    grad.dom.weight.noalias() += sg.d_dm * in.ms.transpose();
    grad.dom.bias += sg.d_dm.rowwise().sum();
}

void accumulate_credential_grad(const Vec& cred_source, const Vec& d_cred, ProjectorParams& grad) {
    grad.enc.weight.noalias() += d_cred * cred_source.transpose();
    grad.enc.bias += d_cred;
}

}  // namespace aodip::detail
