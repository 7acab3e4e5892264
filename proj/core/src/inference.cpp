#include "aodip/inference.hpp"

#include "aodip/errors.hpp"
#include "prompt_kernel.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace aodip {

int argmax_lowest(const Vec& p) {
    if (p.size() == 0) {
        throw InvalidInput("argmax of an empty vector");
    }
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = i;
    }
    return static_cast<int>(best);
}

int legality(const Vec& p) {
    if (p.size() < 2) {
        throw InvalidInput("prediction vector needs at least one task class and the unauthorized class");
    }
    return argmax_lowest(p) != p.size() - 1 ? 1 : 0;
}

struct ProtectedModel::Impl {
    detail::FrozenText text;
};

ProtectedModel::ProtectedModel(Checkpoint ck)
    : ck_(std::move(ck)), backbone_(Backbone::instantiate(ck_.backbone)), impl_(std::make_unique<Impl>()) {
    if (backbone_.spec().frozen_param_digest != ck_.backbone.frozen_param_digest) {
        throw InvalidInput("checkpoint backbone digest does not match the re-derived backbone");
    }
    impl_->text = detail::make_frozen_text(backbone_, ck_.class_table);
}

ProtectedModel::~ProtectedModel() = default;
ProtectedModel::ProtectedModel(ProtectedModel&&) noexcept = default;

namespace {

void check_credential(const Token& t, int token_dim) {
    if (t.role != TokenRole::credential) {
        throw InvalidToken("credential slot received a " + std::string(to_string(t.role)) + " token");
    }
    if (t.values.size() != token_dim) {
        throw InvalidToken("credential has length " + std::to_string(t.values.size()) + ", expected " +
                           std::to_string(token_dim));
    }
    if (!t.values.allFinite()) {
        throw InvalidToken("credential holds non-finite values");
    }
}

}  // namespace

Mat ProtectedModel::logits(const Mat& samples, const Token& credential) const {
    check_credential(credential, ck_.backbone.token_dim);
    DomainDataset tmp;
    tmp.samples = samples;
    tmp.labels.assign(static_cast<std::size_t>(samples.rows()), 0);
    tmp.num_classes = num_classes();
    const EncodedBatch enc = encode_batch(backbone_, tmp);
    const auto fw = detail::forward_stream(impl_->text, ck_.projectors, {enc.f_v, enc.ms}, credential.values);
    return fw.cos / ck_.config.temperature;
}

DualOutput infer(const InferenceRequest& req, const ProtectedModel& model) {
    if (!req.credential) {
        throw CredentialMissing();
    }
    const auto& ck = model.checkpoint();
    check_credential(*req.credential, ck.backbone.token_dim);
    const ImageEncoding enc = model.backbone().encode_image(req.sample);
    const Token g = project_image_token(enc.ms, ck.projectors);
    const Token d = project_domain_token(enc.ms, ck.projectors);
    const auto prompts = assemble_prompts(*req.credential, g, d, ck.class_table);
    DualOutput out;
    out.p = compute_logits(enc.f_v, prompts, model.backbone(), ck.config.temperature);
    out.predicted_class = argmax_lowest(out.p);
    out.r = legality(out.p);
    return out;
}

DomainEvaluation evaluate_domain(const DomainDataset& ds, const Token& credential, const ProtectedModel& model,
                                 int legality_expectation) {
    if (ds.empty()) {
        throw InvalidInput("evaluate_domain: dataset " + ds.domain_id + " is empty");
    }
    if (legality_expectation != 0 && legality_expectation != 1) {
        throw InvalidInput("legality expectation must be 0 or 1");
    }
    const Mat p = model.logits(ds.samples, credential);
    DomainEvaluation ev;
    long correct = 0, matched = 0;
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
        const Vec col = p.col(i);
        const int pred = argmax_lowest(col);
        const int r = legality(col);
        ev.predictions.push_back(pred);
        ev.legal.push_back(r);
        correct += pred == ds.labels[static_cast<std::size_t>(i)];
        matched += r == legality_expectation;
    }
    ev.task_accuracy = 100.0 * double(correct) / double(p.cols());
    ev.legality_rate = 100.0 * double(matched) / double(p.cols());
    return ev;
}

InferenceSession::InferenceSession(const ProtectedModel& model, const CredentialStore& store)
    : model_(model), store_(store) {}

const CredentialRecord& InferenceSession::switch_domain(const std::string& domain_id) {
    active_ = store_.latest(domain_id);
    return *active_;
}

void InferenceSession::clear() { active_.reset(); }

DualOutput InferenceSession::infer(const Vec& sample) const {
    InferenceRequest req;
    req.sample = sample;
    if (active_) {
        req.credential = active_->token;
        req.declared_domain = active_->domain_id;
    }
    return aodip::infer(req, model_);
}

void append_result_log(std::ostream& out, const std::vector<ResultLogEntry>& entries) {
    for (const auto& e : entries) {
        nlohmann::json j{{"task", e.task},   {"domain", e.domain}, {"credential_id", e.credential_id},
                         {"label", e.label}, {"pred", e.pred},     {"legal", e.legal}};
        out << j.dump() << '\n';
    }
}

std::vector<ResultLogEntry> read_result_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot open result log " + path.string());
    }
    std::vector<ResultLogEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back(ResultLogEntry{j.at("task").get<std::string>(), j.at("domain").get<std::string>(),
                                         j.at("credential_id").get<std::string>(), j.at("label").get<int>(),
                                         j.at("pred").get<int>(), j.at("legal").get<bool>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return out;
}

std::vector<ResultLogEntry> result_entries(const std::string& task, const DomainDataset& ds,
                                           const std::string& credential_id, const DomainEvaluation& ev) {
    std::vector<ResultLogEntry> out;
    for (std::size_t i = 0; i < ev.predictions.size(); ++i) {
        out.push_back(ResultLogEntry{task, ds.domain_id, credential_id, ds.labels[i], ev.predictions[i], ev.legal[i] == 1});
    }
    return out;
}

}  // namespace aodip
