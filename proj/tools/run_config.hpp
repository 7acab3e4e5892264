#pragma once

#include "aodip/domain_forge.hpp"
#include "aodip/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace aodip::cli {

enum class Scenario { target_specified, authorization_application };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

struct DataConfig {
    int n_domains = 4;
    int num_classes = 10;
    int per_class = 100;
    double holdout_fraction = 0.3;
    int styles = 1;  // style variants of the authorized domain written by gen-data, ids "<authorized>-s<k>"
};

struct Roles {
    std::string authorized = "domain0";
    std::vector<std::string> unauthorized{"domain3"};
    std::vector<std::string> extended{"domain0-s0"};
};

/// Everything one pipeline run needs. Precedence per field: command-line flag, then config file,
/// then the defaults below; the output directory falls back to $AODIP_OUT before "aodip-out".
struct RunConfig {
    TrainConfig train;
    DataConfig data;
    Scenario scenario = Scenario::target_specified;
    Roles roles;
    WatermarkKey watermark{.secret_seed = 7};
    std::uint64_t seed = 42;  // data seed; also the master seed unless train.master_seed is set in the file
    std::filesystem::path out = "aodip-out";

    /// Throws InvalidInput on inconsistent roles or ranges.
    void validate() const;

    /// Role ids after the scenario is applied: under authorization-application the authorized id
    /// gains the watermark suffix and the clean authorized domain joins the unauthorized set.
    std::string authorized_id() const;
    std::vector<std::string> unauthorized_ids() const;

    std::filesystem::path data_dir() const { return out / "data"; }
    std::filesystem::path checkpoint_path() const { return out / "checkpoint.json"; }
    std::filesystem::path baseline_path() const { return out / "baseline.json"; }
    std::filesystem::path epoch_log_path() const { return out / "epochs.jsonl"; }
    std::filesystem::path store_path() const { return out / "credentials.json"; }
    std::filesystem::path result_log_path() const { return out / "results.jsonl"; }
};

nlohmann::json to_json(const RunConfig& cfg);

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
};

/// Layers a JSON document and the flag overrides over the defaults. env_out is $AODIP_OUT.
RunConfig resolve_config(const nlohmann::json& file, const Overrides& flags, const char* env_out);
RunConfig load_config(const std::optional<std::filesystem::path>& path, const Overrides& flags);

}  // namespace aodip::cli
