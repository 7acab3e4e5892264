#pragma once

#include "run_config.hpp"

#include "aodip/inference.hpp"
#include "aodip/metrics.hpp"

#include <iosfwd>
#include <map>
#include <utility>

namespace aodip::cli {

/// Writes one JSON-lines file per synthetic domain plus the authorized-domain style variants.
std::vector<std::filesystem::path> gen_data(const RunConfig& cfg);

/// (train, held-out) parts of a domain. Watermarked ids are derived from their clean file.
/// Throws CredentialNotFound for an id with no data file.
std::pair<DomainDataset, DomainDataset> load_domain(const RunConfig& cfg, const std::string& id);

/// Trains the unprotected baseline and the protected model; writes checkpoint, baseline and epoch log.
/// With a sweep, one protected checkpoint per lambda1 value lands in out/sweep/lambda1_<v>/.
void train_models(const RunConfig& cfg, const std::vector<double>& sweep, std::ostream& log);

std::filesystem::path sweep_dir(const RunConfig& cfg, double lambda1);

/// Issues a credential from the training part of the domain and appends it to the store.
CredentialRecord issue(const RunConfig& cfg, const std::string& domain_id);

/// One JSON object {"p", "class", "legal"} per sample. Sample files hold one JSON array or
/// one dataset record per line.
std::vector<nlohmann::json> infer_file(const RunConfig& cfg, const std::filesystem::path& samples,
                                       const std::optional<std::string>& credential_id);

// Result-log task tags: "<task>#a" task domain under the task credential, "<task>#u" an
// unauthorized domain under the task credential, "<ext>#x" extended data under the authorized
// credential. Only extended tasks carry "#x" records. Baseline credentials are logged as "sl:<domain>".
inline constexpr const char* kBaselinePrefix = "sl:";

struct TaskRates {
    std::string task_id;
    LegalityRates rates;            // r_e is 0 when the run has no extended domains
    bool has_extended = false;
    std::optional<double> misuse_rejected;  // % of "#x" records rejected; extended tasks only
};

struct Evaluation {
    MetricsReport report;
    std::vector<TaskRates> rates;
};

/// Runs every pairing of the scenario, writes results.jsonl, report.txt and report.csv.
/// Throws CredentialNotFound naming the pairing when a required credential was never issued.
Evaluation evaluate(const RunConfig& cfg);

/// Recomputes task results from a result log alone.
std::vector<TaskResult> results_from_log(const std::vector<ResultLogEntry>& log);
Evaluation evaluation_from_log(const std::vector<ResultLogEntry>& log);

std::string render_rates(const std::vector<TaskRates>& rates);

}  // namespace aodip::cli
