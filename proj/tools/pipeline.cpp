#include "pipeline.hpp"

#include "aodip/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <ostream>

namespace aodip::cli {

namespace fs = std::filesystem;

namespace {

fs::path domain_file(const RunConfig& cfg, const std::string& id) { return cfg.data_dir() / (id + ".jsonl"); }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw StorageError("cannot create " + dir.string() + ": " + ec.message());
    }
}

DomainDataset concat(const std::vector<DomainDataset>& parts, const std::string& id) {
    DomainDataset out;
    out.domain_id = id;
    out.num_classes = parts.front().num_classes;
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.size();
    out.samples.resize(rows, parts.front().samples.cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        if (p.samples.cols() != out.samples.cols()) {
            throw InvalidInput("domain " + p.domain_id + " has a different input dimension");
        }
        out.samples.middleRows(at, p.size()) = p.samples;
        at += p.size();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw StorageError("cannot write " + p.string());
    }
    out << text;
}

Checkpoint load_required(const fs::path& p, const char* what) {
    if (!fs::exists(p)) {
        throw InvalidInput(std::string("no ") + what + " at " + p.string() + "; run `aodip train` first");
    }
    return load_checkpoint(p);
}

}  // namespace

std::vector<fs::path> gen_data(const RunConfig& cfg) {
    ensure_dir(cfg.data_dir());
    auto domains = generate_synthetic_domains(cfg.data.n_domains, cfg.data.num_classes, cfg.data.per_class, cfg.seed);
    const auto auth = std::find_if(domains.begin(), domains.end(),
                                   [&](const DomainDataset& d) { return d.domain_id == cfg.roles.authorized; });
    if (cfg.data.styles > 0 && auth == domains.end()) {
        throw InvalidInput("authorized domain '" + cfg.roles.authorized + "' is not among the generated domains");
    }
    const std::uint64_t style_key = CounterRng::derive(cfg.seed, "cli_styles");
    for (int k = 0; k < cfg.data.styles; ++k) {
        DomainDataset s = generate_style_domain(domains[std::size_t(auth - domains.begin())],
                                                CounterRng::derive(style_key, std::uint64_t(k)),
                                                ExtendedDomainConfig{.ops_per_sample = cfg.train.ext_ops_per_sample});
        s.domain_id = cfg.roles.authorized + "-s" + std::to_string(k);
        domains.push_back(std::move(s));
    }
    std::vector<fs::path> written;
    for (const auto& d : domains) {
        const fs::path p = domain_file(cfg, d.domain_id);
        write_dataset(p, d);
        written.push_back(p);
    }
    return written;
}

std::pair<DomainDataset, DomainDataset> load_domain(const RunConfig& cfg, const std::string& id) {
    const bool watermarked = cfg.scenario == Scenario::authorization_application && id == cfg.authorized_id();
    const std::string base_id = watermarked ? cfg.roles.authorized : id;
    const fs::path p = domain_file(cfg, base_id);
    if (!fs::exists(p)) {
        throw CredentialNotFound("unknown domain '" + id + "' (no data file " + p.string() + ")");
    }
    DomainDataset ds = read_dataset(p, cfg.data.num_classes);
    if (watermarked) {
        ds = embed_watermark(ds, cfg.watermark);
    }
    return split_holdout(ds, cfg.data.holdout_fraction, cfg.seed);
}

fs::path sweep_dir(const RunConfig& cfg, double lambda1) {
    return cfg.out / "sweep" / fmt::format("lambda1_{}", lambda1);
}

void train_models(const RunConfig& cfg, const std::vector<double>& sweep, std::ostream& log) {
    ensure_dir(cfg.out);
    const DomainDataset d_a = load_domain(cfg, cfg.authorized_id()).first;
    std::vector<DomainDataset> u_parts;
    for (const auto& id : cfg.unauthorized_ids()) {
        u_parts.push_back(load_domain(cfg, id).first);
    }
    const DomainDataset d_u = concat(u_parts, "unauthorized");

    TrainConfig sl = cfg.train;
    sl.objective = Objective::source_only;
    sl.train_matched_extended = false;
    log << "training baseline (" << sl.epochs << " epochs)\n";
    save_checkpoint(cfg.baseline_path(), train(sl, d_a, d_u).checkpoint);

    auto run = [&](const TrainConfig& tc, const fs::path& dir) {
        ensure_dir(dir);
        log << fmt::format("training protected model lambda1={} ({} epochs)\n", tc.lambda1, tc.epochs);
        const TrainResult r = train(tc, d_a, d_u);
        save_checkpoint(dir / "checkpoint.json", r.checkpoint);
        write_epoch_log(dir / "epochs.jsonl", r.epochs);
        if (!r.epochs.empty()) {
            const auto& last = r.epochs.back().loss;
            log << fmt::format("  final total {:.4f} (ce_a {:.4f} ce_u {:.4f} ce_e {:.4f} kl {:.4f})\n", last.total,
                               last.ce_a, last.ce_u, last.ce_e, last.kl);
        }
    };
    if (sweep.empty()) {
        run(cfg.train, cfg.out);
        return;
    }
    for (double l : sweep) {
        TrainConfig tc = cfg.train;
        tc.lambda1 = l;
        tc.validate();
        run(tc, sweep_dir(cfg, l));
    }
}

CredentialRecord issue(const RunConfig& cfg, const std::string& domain_id) {
    const Checkpoint ck = load_required(cfg.checkpoint_path(), "checkpoint");
    const DomainDataset reference = load_domain(cfg, domain_id).first;
    CredentialStore store(cfg.store_path());
    return issue_credential(reference, ck, store);
}

std::vector<nlohmann::json> infer_file(const RunConfig& cfg, const fs::path& samples,
                                       const std::optional<std::string>& credential_id) {
    const ProtectedModel model(load_required(cfg.checkpoint_path(), "checkpoint"));
    std::optional<Token> cred;
    if (credential_id) {
        cred = CredentialStore(cfg.store_path()).latest(*credential_id).token;
    }
    std::ifstream in(samples);
    if (!in) {
        throw InvalidInput("cannot open sample file " + samples.string());
    }
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Vec x;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto values = (j.is_object() ? j.at("x") : j).get<std::vector<double>>();
            x = Eigen::Map<const Vec>(values.data(), Eigen::Index(values.size()));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
        if (x.size() != model.backbone().spec().input_dim) {
            throw ParseError("sample has " + std::to_string(x.size()) + " values, expected " +
                                 std::to_string(model.backbone().spec().input_dim),
                             line_no);
        }
        const DualOutput o = infer(InferenceRequest{x, cred, credential_id}, model);
        out.push_back(nlohmann::json{{"p", std::vector<double>(o.p.data(), o.p.data() + o.p.size())},
                                     {"class", o.predicted_class},
                                     {"legal", o.r == 1}});
    }
    return out;
}

Evaluation evaluate(const RunConfig& cfg) {
    const ProtectedModel protected_model(load_required(cfg.checkpoint_path(), "checkpoint"));
    const Checkpoint baseline_ck = load_required(cfg.baseline_path(), "baseline checkpoint");
    const ProtectedModel baseline(baseline_ck);
    const CredentialStore store(cfg.store_path());

    const std::string auth_id = cfg.authorized_id();
    auto required = [&](const std::string& cred_domain, const std::string& data_domain) {
        auto rec = store.find_latest(cred_domain);
        if (!rec) {
            throw CredentialNotFound("pairing (data " + data_domain + ", credential " + cred_domain +
                                     ") needs a credential for '" + cred_domain + "'; run `aodip issue-credential`");
        }
        return rec->token;
    };

    std::map<std::string, std::pair<DomainDataset, DomainDataset>> data;
    auto domain = [&](const std::string& id) -> const std::pair<DomainDataset, DomainDataset>& {
        auto it = data.find(id);
        if (it == data.end()) it = data.emplace(id, load_domain(cfg, id)).first;
        return it->second;
    };

    std::vector<ResultLogEntry> log;
    auto run_pairing = [&](const std::string& tag, const std::string& data_id, const std::string& cred_id,
                           const Token& cred, const ProtectedModel& model, int expectation) {
        const DomainDataset& held = domain(data_id).second;
        const DomainEvaluation ev = evaluate_domain(held, cred, model, expectation);
        const auto entries = result_entries(tag, held, cred_id, ev);
        log.insert(log.end(), entries.begin(), entries.end());
    };

    std::vector<std::string> tasks{auth_id};
    tasks.insert(tasks.end(), cfg.roles.extended.begin(), cfg.roles.extended.end());
    const Token auth_cred = required(auth_id, auth_id);
    for (const auto& t : tasks) {
        const Token cred = t == auth_id ? auth_cred : required(t, t);
        const Token sl_cred = credential_for(domain(t).first, baseline_ck);
        const std::string sl_id = kBaselinePrefix + t;
        run_pairing(t + "#a", t, t, cred, protected_model, 1);
        run_pairing(t + "#a", t, sl_id, sl_cred, baseline, 1);
        for (const auto& u : cfg.unauthorized_ids()) {
            run_pairing(t + "#u", u, t, cred, protected_model, 0);
            run_pairing(t + "#u", u, sl_id, sl_cred, baseline, 0);
        }
        if (t != auth_id) {
            run_pairing(t + "#x", t, auth_id, auth_cred, protected_model, 0);
        }
    }

    ensure_dir(cfg.out);
    {
        std::ofstream out(cfg.result_log_path(), std::ios::binary | std::ios::trunc);
        if (!out) {
            throw StorageError("cannot write " + cfg.result_log_path().string());
        }
        append_result_log(out, log);
    }
    Evaluation ev = evaluation_from_log(log);
    write_text(cfg.out / "report.txt", render_report(ev.report, ReportFormat::text) + render_rates(ev.rates));
    write_text(cfg.out / "report.csv", render_report(ev.report, ReportFormat::csv));
    return ev;
}

namespace {

struct Split {
    std::string task, role;
};

Split split_tag(const std::string& tag) {
    const auto hash = tag.rfind('#');
    if (hash == std::string::npos || hash + 2 != tag.size()) {
        throw InvalidInput("result log task '" + tag + "' lacks a #a/#u/#x role tag");
    }
    return {tag.substr(0, hash), tag.substr(hash + 1)};
}

double accuracy(const std::vector<ResultLogEntry>& group) {
    if (group.empty()) {
        throw InvalidInput("accuracy of an empty record group");
    }
    const auto hits = std::count_if(group.begin(), group.end(), [](const auto& e) { return e.pred == e.label; });
    return 100.0 * double(hits) / double(group.size());
}

bool is_baseline(const ResultLogEntry& e) { return e.credential_id.rfind(kBaselinePrefix, 0) == 0; }

struct TaskGroups {
    std::vector<ResultLogEntry> a_ip, a_sl, u_ip, x;
    std::map<std::string, std::pair<std::vector<ResultLogEntry>, std::vector<ResultLogEntry>>> u_by_domain;  // sl, ip
};

std::map<std::string, TaskGroups> group_log(const std::vector<ResultLogEntry>& log) {
    std::map<std::string, TaskGroups> g;
    for (const auto& e : log) {
        const Split s = split_tag(e.task);
        auto& tg = g[s.task];
        const bool sl = is_baseline(e);
        if (s.role == "a") {
            (sl ? tg.a_sl : tg.a_ip).push_back(e);
        } else if (s.role == "u") {
            auto& cell = tg.u_by_domain[e.domain];
            (sl ? cell.first : cell.second).push_back(e);
            if (!sl) tg.u_ip.push_back(e);
        } else if (s.role == "x") {
            tg.x.push_back(e);
        } else {
            throw InvalidInput("result log task '" + e.task + "' has unknown role");
        }
    }
    return g;
}

}  // namespace

std::vector<TaskResult> results_from_log(const std::vector<ResultLogEntry>& log) {
    const auto groups = group_log(log);
    std::vector<ResultLogEntry> extended_a;
    for (const auto& [task, tg] : groups) {
        if (!tg.x.empty()) extended_a.insert(extended_a.end(), tg.a_ip.begin(), tg.a_ip.end());
    }
    std::vector<TaskResult> out;
    for (const auto& [task, tg] : groups) {
        TaskResult r;
        r.task_id = task;
        r.authorized_id = tg.a_ip.empty() ? task : tg.a_ip.front().domain;
        r.a_a_ip = accuracy(tg.a_ip);
        r.a_a_sl = accuracy(tg.a_sl);
        for (const auto& [dom, cell] : tg.u_by_domain) {
            r.unauthorized.push_back(UnauthorizedCell{dom, accuracy(cell.first), accuracy(cell.second)});
        }
        r.rates.r_a = legality_rate(tg.a_ip, true);
        r.rates.r_u = tg.u_ip.empty() ? 0.0 : legality_rate(tg.u_ip, false);
        r.rates.r_e = extended_a.empty() ? 0.0 : legality_rate(extended_a, true);
        out.push_back(std::move(r));
    }
    return out;
}

Evaluation evaluation_from_log(const std::vector<ResultLogEntry>& log) {
    const auto results = results_from_log(log);
    const auto groups = group_log(log);
    Evaluation ev;
    ev.report = compute_report(results);
    bool any_extended = false;
    for (const auto& [task, tg] : groups) any_extended |= !tg.x.empty();
    for (const auto& r : results) {
        TaskRates tr{r.task_id, r.rates, any_extended, std::nullopt};
        const auto& x = groups.at(r.task_id).x;
        if (!x.empty()) tr.misuse_rejected = legality_rate(x, false);
        ev.rates.push_back(std::move(tr));
    }
    return ev;
}

std::string render_rates(const std::vector<TaskRates>& rates) {
    std::string out = fmt::format("\n{:<24} {:>8} {:>8} {:>8} {:>12}\n", "task", "R_a", "R_e", "R_u", "misuse_rej");
    for (const auto& r : rates) {
        out += fmt::format("{:<24} {:>8.2f} {:>8} {:>8.2f} {:>12}\n", r.task_id, r.rates.r_a,
                           r.has_extended ? fmt::format("{:.2f}", r.rates.r_e) : "-", r.rates.r_u,
                           r.misuse_rejected ? fmt::format("{:.2f}", *r.misuse_rejected) : "-");
    }
    return out;
}

}  // namespace aodip::cli
