#pragma once

#include "aodip/credentials.hpp"
#include "aodip/training.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace aodip {

/// (N+1)-way prediction plus the legality bit; r == 0 iff predicted_class == N.
struct DualOutput {
    Vec p;
    int predicted_class = 0;
    int r = 0;
};

struct InferenceRequest {
    Vec sample;
    std::optional<Token> credential;
    std::optional<std::string> declared_domain;  // logging metadata; never read by the model
};

/// Index of the maximum entry; the lowest index wins ties.
int argmax_lowest(const Vec& p);

/// 1 iff argmax_lowest(p) is a task class (not the last entry).
int legality(const Vec& p);

/// Immutable checkpoint plus its re-instantiated frozen backbone.
class ProtectedModel {
public:
    /// Throws InvalidInput when the re-derived backbone does not match the stored digest.
    explicit ProtectedModel(Checkpoint ck);
    ~ProtectedModel();
    ProtectedModel(ProtectedModel&&) noexcept;

    const Checkpoint& checkpoint() const { return ck_; }
    const Backbone& backbone() const { return backbone_; }
    int num_classes() const { return ck_.num_classes(); }

    /// Batched logits, (N+1) x count, for every row of samples under one credential.
    Mat logits(const Mat& samples, const Token& credential) const;

private:
    Checkpoint ck_;
    Backbone backbone_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Throws CredentialMissing when no credential is supplied and InvalidToken on a malformed one.
DualOutput infer(const InferenceRequest& req, const ProtectedModel& model);

struct DomainEvaluation {
    double task_accuracy = 0.0;  // % with predicted_class == label
    double legality_rate = 0.0;  // % with r == expectation
    std::vector<int> predictions;
    std::vector<int> legal;
};

DomainEvaluation evaluate_domain(const DomainDataset& ds, const Token& credential, const ProtectedModel& model,
                                 int legality_expectation);

/// Caller-side credential selection; the model is never modified.
class InferenceSession {
public:
    InferenceSession(const ProtectedModel& model, const CredentialStore& store);

    /// Activates the latest credential for domain_id. Throws CredentialNotFound.
    const CredentialRecord& switch_domain(const std::string& domain_id);
    void clear();
    const std::optional<CredentialRecord>& active() const { return active_; }

    /// infer() with the active credential; CredentialMissing when none is active.
    DualOutput infer(const Vec& sample) const;

private:
    const ProtectedModel& model_;
    const CredentialStore& store_;
    std::optional<CredentialRecord> active_;
};

struct ResultLogEntry {
    std::string task;
    std::string domain;
    std::string credential_id;
    int label = 0;
    int pred = 0;
    bool legal = false;

    bool operator==(const ResultLogEntry&) const = default;
};

/// JSON-lines {"task", "domain", "credential_id", "label", "pred", "legal"}.
void append_result_log(std::ostream& out, const std::vector<ResultLogEntry>& entries);
std::vector<ResultLogEntry> read_result_log(const std::filesystem::path& path);

std::vector<ResultLogEntry> result_entries(const std::string& task, const DomainDataset& ds,
                                           const std::string& credential_id, const DomainEvaluation& ev);

}  // namespace aodip
