// aodip: data generation, training, credential issuance, inference, evaluation and reporting.
// Exit codes: 0 success, 1 verification or training failure, 2 usage or configuration error.

#include "pipeline.hpp"

#include "aodip/errors.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <iostream>
#include <sstream>

namespace {

using namespace aodip;
using namespace aodip::cli;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

std::vector<double> parse_sweep(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size()) {
            throw InvalidInput("--sweep-lambda1: '" + item + "' is not a number");
        }
        out.push_back(v);
    }
    if (out.empty()) {
        throw InvalidInput("--sweep-lambda1 needs at least one value");
    }
    return out;
}

int verify_paper(const std::optional<std::string>& fixture, bool list_only) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = load_paper_rows(fixture ? std::filesystem::path(*fixture) : default_fixture_path());
    if (list_only) {
        for (const auto& r : rows) std::cout << r.id() << '\n';
        return kExitOk;
    }
    const auto checks = verify_paper_rows(rows);
    std::size_t failed = 0;
    for (const auto& c : checks) {
        std::cout << fmt::format("{} {:<40} computed {:8.3f} published {:8.3f}{}\n", c.pass ? "ok  " : "FAIL", c.id,
                                 c.computed, c.published, c.pass ? "" : "  " + c.detail);
        failed += !c.pass;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    std::cout << fmt::format("{} rows checked, {} failed, {:.1f} ms\n", checks.size(), failed, ms);
    return failed == 0 && !checks.empty() ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Authorize-on-demand protection of a frozen prompt-tuned classifier"};
    app.require_subcommand(1);
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "master seed (overrides the config file)");
    app.add_option("--out", out_dir, "output directory (default: $AODIP_OUT, else aodip-out)");

    auto* gen = app.add_subcommand("gen-data", "write one JSON-lines file per synthetic domain");

    auto* train_cmd = app.add_subcommand("train", "train the baseline and the protected model");
    std::optional<std::string> sweep;
    std::optional<int> epochs;
    std::optional<double> lambda1;
    bool matched = false;
    train_cmd->add_option("--sweep-lambda1", sweep, "comma-separated lambda1 values, one checkpoint each");
    train_cmd->add_option("--epochs", epochs, "override train.epochs");
    train_cmd->add_option("--lambda1", lambda1, "override train.lambda1");
    train_cmd->add_flag("--matched-extended", matched, "enable train_matched_extended");

    auto* issue_cmd = app.add_subcommand("issue-credential", "issue a credential for a domain");
    std::string issue_domain;
    issue_cmd->add_option("--domain", issue_domain, "domain id")->required();

    auto* infer_cmd = app.add_subcommand("infer", "classify samples under a stored credential");
    std::string samples;
    std::optional<std::string> credential;
    infer_cmd->add_option("--samples", samples, "JSON-lines file of samples or dataset records")->required();
    infer_cmd->add_option("--credential", credential, "domain id of the credential to present");

    auto* eval_cmd = app.add_subcommand("eval", "run every pairing of the scenario and report");

    auto* report_cmd = app.add_subcommand("report", "recompute the report from a result log");
    std::optional<std::string> log_path;
    std::string format = "text";
    report_cmd->add_option("--log", log_path, "result log (default: <out>/results.jsonl)");
    report_cmd->add_option("--format", format, "text or csv")->check(CLI::IsMember({"text", "csv"}));

    auto* verify_cmd = app.add_subcommand("verify-paper", "recompute the published metric rows");
    std::optional<std::string> fixture;
    bool list_only = false;
    verify_cmd->add_option("--fixture", fixture, "fixture CSV (default: the bundled one)");
    verify_cmd->add_flag("--list", list_only, "print row ids without computing");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (verify_cmd->parsed()) {
            return verify_paper(fixture, list_only);
        }
        Overrides flags;
        flags.seed = seed;
        if (out_dir) flags.out = *out_dir;
        RunConfig cfg = load_config(config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt,
                                    flags);
        if (gen->parsed()) {
            for (const auto& p : gen_data(cfg)) std::cout << p.string() << '\n';
        } else if (train_cmd->parsed()) {
            if (epochs) cfg.train.epochs = *epochs;
            if (lambda1) cfg.train.lambda1 = *lambda1;
            if (matched) cfg.train.train_matched_extended = true;
            cfg.validate();
            train_models(cfg, sweep ? parse_sweep(*sweep) : std::vector<double>{}, std::cout);
        } else if (issue_cmd->parsed()) {
            const auto rec = issue(cfg, issue_domain);
            std::cout << fmt::format("issued credential for {} at {} (checkpoint {})\n", rec.domain_id, rec.issued_at,
                                     to_hex(rec.checkpoint_digest).substr(0, 16));
        } else if (infer_cmd->parsed()) {
            for (const auto& j : infer_file(cfg, samples, credential)) std::cout << j.dump() << '\n';
        } else if (eval_cmd->parsed()) {
            const auto ev = evaluate(cfg);
            std::cout << render_report(ev.report, ReportFormat::text) << render_rates(ev.rates);
        } else if (report_cmd->parsed()) {
            const auto ev = evaluation_from_log(read_result_log(log_path ? std::filesystem::path(*log_path) : cfg.result_log_path()));
            if (format == "csv") {
                std::cout << render_report(ev.report, ReportFormat::csv);
            } else {
                std::cout << render_report(ev.report, ReportFormat::text) << render_rates(ev.rates);
            }
        }
        return kExitOk;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}
