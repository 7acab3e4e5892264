#include "run_config.hpp"

#include "aodip/errors.hpp"

#include <algorithm>
#include <fstream>

namespace aodip::cli {

std::string_view to_string(Scenario s) {
    return s == Scenario::target_specified ? "target-specified" : "authorization-application";
}

Scenario parse_scenario(std::string_view s) {
    if (s == "target-specified") return Scenario::target_specified;
    if (s == "authorization-application") return Scenario::authorization_application;
    throw InvalidInput("unknown scenario '" + std::string(s) + "'");
}

void RunConfig::validate() const {
    train.validate();
    if (data.n_domains < 2 || data.num_classes < 2 || data.per_class < 1) {
        throw InvalidInput("data: need at least 2 domains, 2 classes and 1 sample per class");
    }
    if (!(data.holdout_fraction > 0.0 && data.holdout_fraction < 1.0)) {
        throw InvalidInput("data.holdout_fraction must lie in (0, 1)");
    }
    if (data.styles < 0) {
        throw InvalidInput("data.styles must be non-negative");
    }
    if (roles.unauthorized.empty()) {
        throw InvalidInput("roles.unauthorized must name at least one domain");
    }
    auto contains = [](const std::vector<std::string>& v, const std::string& x) {
        return std::find(v.begin(), v.end(), x) != v.end();
    };
    if (contains(roles.unauthorized, roles.authorized)) {
        throw InvalidInput("authorized domain '" + roles.authorized + "' is also listed as unauthorized");
    }
    for (const auto& e : roles.extended) {
        if (e == roles.authorized || contains(roles.unauthorized, e)) {
            throw InvalidInput("extended domain '" + e + "' overlaps the authorized or unauthorized roles");
        }
    }
    if (!(watermark.strength >= 0.0 && watermark.strength <= 1.0)) {
        throw InvalidInput("watermark.strength must lie in [0, 1]");
    }
}

std::string RunConfig::authorized_id() const {
    return scenario == Scenario::authorization_application ? roles.authorized + "†" : roles.authorized;
}

std::vector<std::string> RunConfig::unauthorized_ids() const {
    std::vector<std::string> ids;
    if (scenario == Scenario::authorization_application) {
        ids.push_back(roles.authorized);
    }
    ids.insert(ids.end(), roles.unauthorized.begin(), roles.unauthorized.end());
    return ids;
}

nlohmann::json to_json(const RunConfig& cfg) {
    return nlohmann::json{
        {"seed", cfg.seed},
        {"out", cfg.out.string()},
        {"scenario", to_string(cfg.scenario)},
        {"train", cfg.train},
        {"data",
         {{"n_domains", cfg.data.n_domains},
          {"num_classes", cfg.data.num_classes},
          {"per_class", cfg.data.per_class},
          {"holdout_fraction", cfg.data.holdout_fraction},
          {"styles", cfg.data.styles}}},
        {"roles",
         {{"authorized", cfg.roles.authorized},
          {"unauthorized", cfg.roles.unauthorized},
          {"extended", cfg.roles.extended}}},
        {"watermark", {{"secret_seed", cfg.watermark.secret_seed}, {"strength", cfg.watermark.strength}}},
    };
}

RunConfig resolve_config(const nlohmann::json& file, const Overrides& flags, const char* env_out) {
    RunConfig cfg;
    try {
        if (!file.is_null() && !file.is_object()) {
            throw InvalidInput("config root must be a JSON object");
        }
        const auto& f = file.is_null() ? nlohmann::json::object() : file;
        cfg.seed = f.value("seed", cfg.seed);
        bool master_in_file = false;
        if (f.contains("train")) {
            cfg.train = f.at("train").get<TrainConfig>();
            master_in_file = f.at("train").contains("master_seed");
        }
        if (flags.seed) {
            cfg.seed = *flags.seed;
            cfg.train.master_seed = *flags.seed;
        } else if (!master_in_file) {
            cfg.train.master_seed = cfg.seed;
        }
        if (f.contains("data")) {
            const auto& d = f.at("data");
            cfg.data.n_domains = d.value("n_domains", cfg.data.n_domains);
            cfg.data.num_classes = d.value("num_classes", cfg.data.num_classes);
            cfg.data.per_class = d.value("per_class", cfg.data.per_class);
            cfg.data.holdout_fraction = d.value("holdout_fraction", cfg.data.holdout_fraction);
            cfg.data.styles = d.value("styles", cfg.data.styles);
        }
        if (f.contains("scenario")) {
            cfg.scenario = parse_scenario(f.at("scenario").get<std::string>());
        }
        if (f.contains("roles")) {
            const auto& r = f.at("roles");
            cfg.roles.authorized = r.value("authorized", cfg.roles.authorized);
            cfg.roles.unauthorized = r.value("unauthorized", cfg.roles.unauthorized);
            cfg.roles.extended = r.value("extended", cfg.roles.extended);
        }
        if (f.contains("watermark")) {
            const auto& w = f.at("watermark");
            cfg.watermark.secret_seed = w.value("secret_seed", cfg.watermark.secret_seed);
            cfg.watermark.strength = w.value("strength", cfg.watermark.strength);
        }
        if (flags.out) {
            cfg.out = *flags.out;
        } else if (f.contains("out")) {
            cfg.out = f.at("out").get<std::string>();
        } else if (env_out != nullptr && *env_out != '\0') {
            cfg.out = env_out;
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path, const Overrides& flags) {
    nlohmann::json file;
    if (path) {
        std::ifstream in(*path);
        if (!in) {
            throw InvalidInput("cannot open config " + path->string());
        }
        try {
            file = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("config " + path->string() + ": " + e.what());
        }
    }
    return resolve_config(file, flags, std::getenv("AODIP_OUT"));
}

}  // namespace aodip::cli
