#pragma once

#include "aodip/auth_tokens.hpp"
#include "aodip/domain_forge.hpp"
#include "aodip/embedding.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace aodip {

/// Per-term values of the protection objective.
/// total == ce_a - lambda1 * ce_a_to_u + ce_u + ce_e - kl + ce_matched.
/// ce_a already carries its lambda1 weight; ce_matched is zero unless train_matched_extended is set.
struct LossBreakdown {
    double ce_a = 0.0;
    double ce_a_to_u = 0.0;
    double ce_u = 0.0;
    double ce_e = 0.0;
    double kl = 0.0;
    double ce_matched = 0.0;
    double total = 0.0;
};

enum class Objective {
    protection,   // the full five-term objective
    source_only,  // plain authorized-domain CE; the unprotected baseline
};

struct TrainConfig {
    double lambda1 = 0.1;
    double learning_rate = 1e-3;
    int epochs = 200;
    int batch_size = 64;  // per stream; authorized, extended and unauthorized batches are equal size
    double temperature = 0.07;
    double kl_cap = 5.0;
    double ema_momentum = 0.9;
    std::uint64_t master_seed = 42;
    bool train_matched_extended = false;
    int ext_ops_per_sample = 2;
    Objective objective = Objective::protection;

    /// Throws InvalidInput on out-of-range values.
    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct Checkpoint {
    BackboneSpec backbone;
    ProjectorParams projectors;
    std::vector<Token> class_table;  // N+1 entries, last one is the unauthorized class
    Token training_credential;
    TrainConfig config;
    Digest digest{};

    int num_classes() const { return static_cast<int>(class_table.size()) - 1; }
};

/// SHA-256 over backbone spec, projector tensors and class table.
Digest checkpoint_digest(const Checkpoint& ck);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws InvalidInput when the stored digest does not match the payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_to_string(const Checkpoint& ck);

/// Per-class logits p[k] = cos(f_v, encode_text(prompts[k])) / T, evaluated prompt by prompt.
Vec compute_logits(const FeatureVector& f_v, const std::vector<Prompt>& prompts, const Backbone& backbone,
                   double temperature);

/// -log softmax(p)[y] with the probability clamped below at kProbabilityFloor.
inline constexpr double kProbabilityFloor = 1e-6;
double cross_entropy(const Vec& logits, int y);
/// dCE/dlogits; zero when the clamp is engaged.
Vec cross_entropy_grad(const Vec& logits, int y);

/// min(cap, KL(softmax(f_a_t) || softmax(f_e_t))).
double kl_separation(const Vec& f_a_t, const Vec& f_e_t, double cap);

/// Visual features of selected rows, stacked column-wise.
struct EncodedBatch {
    Mat f_v;  // d x B
    Mat ms;   // d_ms x B
    std::vector<int> labels;

    Eigen::Index size() const { return f_v.cols(); }
};

EncodedBatch encode_batch(const Backbone& backbone, const DomainDataset& ds);
EncodedBatch encode_batch(const Backbone& backbone, const DomainDataset& ds, const std::vector<Eigen::Index>& rows);
EncodedBatch select_columns(const EncodedBatch& all, const std::vector<Eigen::Index>& rows);

/// One optimisation step's worth of data. Extended column i is paired with authorized column i
/// for the KL term. credential_mean feeds P_enc to form the authorized credential.
struct LossBatch {
    EncodedBatch a, e, u;
    Vec credential_mean;
};

/// Frozen context for loss evaluation: backbone, class table and config.
class LossModel {
public:
    LossModel(const Backbone& backbone, std::vector<Token> class_table, TrainConfig cfg);
    ~LossModel();
    LossModel(LossModel&&) noexcept;

    const TrainConfig& config() const { return cfg_; }
    int num_classes() const;

    /// Loss value; when grad is non-null it receives dtotal/dparams (same shapes as params).
    LossBreakdown evaluate(const ProjectorParams& params, const LossBatch& batch, ProjectorParams* grad = nullptr) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    TrainConfig cfg_;
};

LossBreakdown total_loss(const LossBatch& batch, const Backbone& backbone, const std::vector<Token>& class_table,
                         const ProjectorParams& params, const TrainConfig& cfg);

struct EpochLog {
    int epoch = 0;
    LossBreakdown loss;  // mean over the epoch's steps, measured before each update
};

nlohmann::json epoch_log_to_json(const EpochLog& log);
void write_epoch_log(const std::filesystem::path& path, const std::vector<EpochLog>& logs);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> epochs;
};

using EpochObserver = std::function<void(const EpochLog&)>;

/// Mini-batch Adam over the projectors only. The backbone is derived from master_seed and the
/// authorized data's input dimension. Throws TrainingDiverged on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const DomainDataset& d_a, const DomainDataset& d_u,
                  const EpochObserver& observer = {});

struct GradientCheckConfig {
    BackboneSpec spec{.master_seed = 7, .input_dim = 8, .hidden_dim = 16, .feature_dim = 8, .token_dim = 8};
    int num_classes = 3;
    int batch = 4;
    double step = 1e-5;
    int max_entries_per_tensor = 0;  // 0 checks every entry
};

struct TensorCheck {
    std::string name;
    Eigen::Index entries_checked = 0;
    double rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|), L2 over checked entries
};

struct GradientCheckReport {
    std::vector<TensorCheck> tensors;
    double max_rel_error = 0.0;
};

/// Compares analytic gradients of the objective with central differences on a tiny seeded instance.
/// Parameters are restored exactly; nothing is updated.
GradientCheckReport gradient_check(const TrainConfig& cfg, const GradientCheckConfig& check = {});

}  // namespace aodip
