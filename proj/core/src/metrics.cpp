#include "aodip/metrics.hpp"

#include "aodip/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#ifndef AODIP_FIXTURE_PATH
#define AODIP_FIXTURE_PATH "paper_rows.csv"
#endif

namespace aodip {

namespace {

void check_percent(double v, const char* name) {
    if (!(v >= 0.0 && v <= 100.0)) {
        throw InvalidInput(fmt::format("{} = {} outside [0, 100]", name, v));
    }
}

}  // namespace

double drop_a(double a_a_sl, double a_a_ip) {
    check_percent(a_a_sl, "A_a_sl");
    check_percent(a_a_ip, "A_a_ip");
    return a_a_sl - a_a_ip;
}

double drop_u(const std::vector<std::pair<double, double>>& sl_ip_pairs) {
    if (sl_ip_pairs.empty()) {
        throw InvalidInput("drop_u needs at least one unauthorized domain");
    }
    double sum = 0.0;
    for (const auto& [sl, ip] : sl_ip_pairs) {
        check_percent(sl, "A_u_sl");
        check_percent(ip, "A_u_ip");
        sum += sl - ip;
    }
    return sum / double(sl_ip_pairs.size());
}

double w_diff(double a_a_ip, double d_u, double d_a) {
    check_percent(a_a_ip, "A_a_ip");
    return a_a_ip / 100.0 * (d_u - d_a);
}

double d_cross(double a_a_ip, double a_u_ip) {
    check_percent(a_a_ip, "A_a_ip");
    check_percent(a_u_ip, "A_u_ip");
    return a_a_ip / 100.0 * (a_a_ip - a_u_ip);
}

double legality_rate(const std::vector<ResultLogEntry>& group, bool expect_legal) {
    if (group.empty()) {
        throw InvalidInput("legality rate of an empty record group");
    }
    const auto hits = std::count_if(group.begin(), group.end(), [&](const auto& e) { return e.legal == expect_legal; });
    return 100.0 * double(hits) / double(group.size());
}

LegalityRates legality_rates(const std::vector<ResultLogEntry>& authorized, const std::vector<ResultLogEntry>& extended,
                             const std::vector<ResultLogEntry>& unauthorized) {
    return LegalityRates{legality_rate(authorized, true), legality_rate(extended, true),
                         legality_rate(unauthorized, false)};
}

void TaskResult::validate() const {
    check_percent(a_a_sl, "A_a_sl");
    check_percent(a_a_ip, "A_a_ip");
    if (unauthorized.empty()) {
        throw InvalidInput(task_id + ": no unauthorized domains");
    }
    for (const auto& u : unauthorized) {
        check_percent(u.a_u_sl, "A_u_sl");
        check_percent(u.a_u_ip, "A_u_ip");
    }
    check_percent(rates.r_a, "R_a");
    check_percent(rates.r_e, "R_e");
    check_percent(rates.r_u, "R_u");
}

TaskMetrics task_metrics(const TaskResult& r) {
    r.validate();
    std::vector<std::pair<double, double>> pairs;
    double u_ip = 0.0;
    for (const auto& u : r.unauthorized) {
        pairs.emplace_back(u.a_u_sl, u.a_u_ip);
        u_ip += u.a_u_ip;
    }
    u_ip /= double(r.unauthorized.size());
    TaskMetrics m;
    m.task_id = r.task_id;
    m.drop_a = drop_a(r.a_a_sl, r.a_a_ip);
    m.drop_u = drop_u(pairs);
    m.w_u_a = w_diff(r.a_a_ip, m.drop_u, m.drop_a);
    m.d_u_a = d_cross(r.a_a_ip, u_ip);
    return m;
}

MetricsReport make_report(std::vector<TaskMetrics> rows) {
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    MetricsReport rep;
    rep.mean.task_id = "mean";
    for (const auto& t : rows) {
        rep.mean.drop_a += t.drop_a;
        rep.mean.drop_u += t.drop_u;
        rep.mean.w_u_a += t.w_u_a;
        rep.mean.d_u_a += t.d_u_a;
    }
    if (!rows.empty()) {
        const double n = double(rows.size());
        rep.mean.drop_a /= n;
        rep.mean.drop_u /= n;
        rep.mean.w_u_a /= n;
        rep.mean.d_u_a /= n;
    }
    rep.tasks = std::move(rows);
    return rep;
}

MetricsReport compute_report(const std::vector<TaskResult>& results) {
    std::vector<TaskMetrics> rows;
    for (const auto& r : results) {
        rows.push_back(task_metrics(r));
    }
    return make_report(std::move(rows));
}

namespace {

constexpr const char* kCsvHeader = "task,drop_a,drop_u,w_u_a,d_u_a";

}  // namespace

namespace {

// -0 and values that round to -0.00 print as 0.
double unsigned_zero(double x, double resolution) { return std::abs(x) < resolution ? 0.0 : x; }

}  // namespace

std::string render_report(const MetricsReport& report, ReportFormat format) {
    std::string out;
    if (format == ReportFormat::csv) {
        out += kCsvHeader;
        out += '\n';
        for (const auto& t : report.tasks) {
            out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", t.task_id, t.drop_a + 0.0, t.drop_u + 0.0,
                               t.w_u_a + 0.0, t.d_u_a + 0.0);
        }
        return out;
    }
    std::size_t width = 4;
    for (const auto& t : report.tasks) {
        width = std::max(width, t.task_id.size());
    }
    auto line = [&](const std::string& id, double a, double u, double w, double d) {
        out += fmt::format("{:<{}}  {:>8.2f}  {:>8.2f}  {:>8.2f}  {:>8.2f}\n", id, width, unsigned_zero(a, 0.005),
                           unsigned_zero(u, 0.005), unsigned_zero(w, 0.005), unsigned_zero(d, 0.005));
    };
    out += fmt::format("{:<{}}  {:>8}  {:>8}  {:>8}  {:>8}\n", "task", width, "Drop_a", "Drop_u", "W_u-a", "D_u-a");
    for (const auto& t : report.tasks) {
        line(t.task_id, t.drop_a, t.drop_u, t.w_u_a, t.d_u_a);
    }
    if (!report.tasks.empty()) {
        line("mean", report.mean.drop_a, report.mean.drop_u, report.mean.w_u_a, report.mean.d_u_a);
    }
    return out;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) {
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        cells.emplace_back();
    }
    return cells;
}

double parse_number(const std::string& s, std::size_t line_no) {
    if (s.empty()) {
        throw ParseError("empty numeric cell", line_no);
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) {
        throw ParseError("not a finite number: '" + s + "'", line_no);
    }
    return v;
}

std::optional<double> parse_optional(const std::string& s, std::size_t line_no) {
    if (s.empty()) return std::nullopt;
    return parse_number(s, line_no);
}

}  // namespace

MetricsReport parse_report_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::size_t line_no = 0;
    std::vector<TaskMetrics> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != kCsvHeader) throw ParseError("unexpected report header", line_no);
            continue;
        }
        if (line.empty()) continue;
        const auto c = split_csv(line);
        if (c.size() != 5) throw ParseError("expected 5 cells", line_no);
        rows.push_back(TaskMetrics{c[0], parse_number(c[1], line_no), parse_number(c[2], line_no),
                                   parse_number(c[3], line_no), parse_number(c[4], line_no)});
    }
    if (line_no == 0) throw ParseError("missing report header", 1);
    return make_report(std::move(rows));
}

// ---------------------------------------------------------------------------
// Published-table regression

char PaperRow::kind() const { return task.empty() ? '?' : task.back(); }

bool PaperRow::is_mean() const { return task.find("/Mean/") != std::string::npos; }

std::string PaperRow::group() const {
    const auto slash = task.find('/');
    return dataset + ":" + task.substr(0, slash) + "/" + kind();
}

std::vector<PaperRow> load_paper_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FixtureNotFound("published-row fixture not found: " + path.string());
    }
    std::vector<PaperRow> rows;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {
            if (line != "dataset,task,A_a_ip,drop_u,drop_a,published_W,A_u_ip,published_D") {
                throw ParseError("unexpected fixture header", line_no);
            }
            header_seen = true;
            continue;
        }
        const auto c = split_csv(line);
        if (c.size() != 8) throw ParseError("expected 8 cells", line_no);
        PaperRow r;
        r.dataset = c[0];
        r.task = c[1];
        r.a_a_ip = parse_optional(c[2], line_no);
        r.drop_u = parse_optional(c[3], line_no);
        r.drop_a = parse_optional(c[4], line_no);
        r.published_w = parse_optional(c[5], line_no);
        r.a_u_ip = parse_optional(c[6], line_no);
        r.published_d = parse_optional(c[7], line_no);
        r.line = line_no;
        if (r.kind() != 'W' && r.kind() != 'D') throw ParseError("task id must end in /W or /D", line_no);
        rows.push_back(std::move(r));
    }
    return rows;
}

namespace {

// Float slack on top of the cell tolerance so that |x - y| == 0.1 exactly is not lost to rounding.
constexpr double kSlack = 1e-9;

double need(const std::optional<double>& v, const PaperRow& r, const char* what) {
    if (!v) throw ParseError(r.id() + ": missing " + what, r.line);
    return *v;
}

double row_value(const PaperRow& r) {
    if (r.kind() == 'W') {
        return w_diff(need(r.a_a_ip, r, "A_a_ip"), need(r.drop_u, r, "drop_u"), need(r.drop_a, r, "drop_a"));
    }
    return d_cross(need(r.a_a_ip, r, "A_a_ip"), need(r.a_u_ip, r, "A_u_ip"));
}

}  // namespace

std::vector<RowCheck> verify_paper_rows(const std::vector<PaperRow>& rows, double tolerance) {
    std::map<std::string, std::vector<const PaperRow*>> groups;
    for (const auto& r : rows) {
        if (!r.is_mean()) groups[r.group()].push_back(&r);
    }

    std::vector<RowCheck> out;
    for (const auto& r : rows) {
        RowCheck chk;
        chk.id = r.id();
        const bool w = r.kind() == 'W';
        try {
            chk.published = need(w ? r.published_w : r.published_d, r, w ? "published_W" : "published_D");
            if (!r.is_mean()) {
                chk.computed = row_value(r);
            } else {
                const auto& members = groups[r.group()];
                if (members.empty()) throw ParseError(r.id() + ": mean row without member rows", r.line);
                double mean_value = 0.0;
                std::map<std::string, double> input_means;
                for (const PaperRow* m : members) {
                    mean_value += row_value(*m);
                    if (w) {
                        input_means["drop_u"] += need(m->drop_u, *m, "drop_u");
                        input_means["drop_a"] += need(m->drop_a, *m, "drop_a");
                    } else {
                        input_means["A_a_ip"] += need(m->a_a_ip, *m, "A_a_ip");
                        input_means["A_u_ip"] += need(m->a_u_ip, *m, "A_u_ip");
                    }
                }
                const double n = double(members.size());
                chk.computed = mean_value / n;
                const std::map<std::string, std::optional<double>> printed =
                    w ? std::map<std::string, std::optional<double>>{{"drop_u", r.drop_u}, {"drop_a", r.drop_a}}
                      : std::map<std::string, std::optional<double>>{{"A_a_ip", r.a_a_ip}, {"A_u_ip", r.a_u_ip}};
                for (const auto& [name, value] : printed) {
                    if (!value) continue;
                    const double expect = input_means[name] / n;
                    if (std::abs(*value - expect) > tolerance + kSlack) {
                        chk.detail += fmt::format("printed {} mean {:.2f} vs rows {:.2f}; ", name, *value, expect);
                    }
                }
            }
        } catch (const InvalidInput& e) {
            chk.detail += e.what();
        }
        if (chk.detail.empty() && std::abs(chk.computed - chk.published) > tolerance + kSlack) {
            chk.detail = fmt::format("computed {:.4f} vs published {:.2f}", chk.computed, chk.published);
        }
        chk.pass = chk.detail.empty();
        out.push_back(std::move(chk));
    }
    return out;
}

std::filesystem::path default_fixture_path() {
    if (const char* env = std::getenv("AODIP_FIXTURE")) {
        return env;
    }
    return AODIP_FIXTURE_PATH;
}

}  // namespace aodip
