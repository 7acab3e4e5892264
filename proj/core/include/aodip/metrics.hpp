#pragma once

#include "aodip/inference.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace aodip {

// Percent-valued inputs live in [0, 100]; the weighted metrics scale by A_a_ip / 100.

double drop_a(double a_a_sl, double a_a_ip);
double drop_u(const std::vector<std::pair<double, double>>& sl_ip_pairs);
double w_diff(double a_a_ip, double d_u, double d_a);
double d_cross(double a_a_ip, double a_u_ip);

struct LegalityRates {
    double r_a = 0.0;
    double r_e = 0.0;
    double r_u = 0.0;
};

/// % of records whose legal flag equals expect_legal. Throws InvalidInput on an empty group.
double legality_rate(const std::vector<ResultLogEntry>& group, bool expect_legal);

/// R_a / R_e count legal matched-credential records, R_u counts rejected unauthorized records.
LegalityRates legality_rates(const std::vector<ResultLogEntry>& authorized, const std::vector<ResultLogEntry>& extended,
                             const std::vector<ResultLogEntry>& unauthorized);

struct UnauthorizedCell {
    std::string domain_id;
    double a_u_sl = 0.0;
    double a_u_ip = 0.0;
};

struct TaskResult {
    std::string task_id;
    std::string authorized_id;
    double a_a_sl = 0.0;
    double a_a_ip = 0.0;
    std::vector<UnauthorizedCell> unauthorized;
    LegalityRates rates;

    void validate() const;
};

struct TaskMetrics {
    std::string task_id;
    double drop_a = 0.0;
    double drop_u = 0.0;
    double w_u_a = 0.0;
    double d_u_a = 0.0;  // against the mean unauthorized accuracy under protection
};

struct MetricsReport {
    std::vector<TaskMetrics> tasks;  // sorted by task id
    TaskMetrics mean;                // arithmetic means of the task rows; task_id "mean"
};

TaskMetrics task_metrics(const TaskResult& r);
MetricsReport compute_report(const std::vector<TaskResult>& results);
/// Sorts the rows and recomputes the mean row.
MetricsReport make_report(std::vector<TaskMetrics> rows);

enum class ReportFormat { text, csv };

/// Text tables are column aligned with two decimals. CSV holds one line per task with
/// round-trippable values and no mean row.
std::string render_report(const MetricsReport& report, ReportFormat format);
MetricsReport parse_report_csv(const std::string& csv);

// ---------------------------------------------------------------------------
// Published-table regression

struct PaperRow {
    std::string dataset;
    std::string task;  // method/domain/kind, kind W or D; domain "Mean" marks a dataset mean
    std::optional<double> a_a_ip, drop_u, drop_a, published_w, a_u_ip, published_d;
    std::size_t line = 0;

    std::string id() const { return dataset + ":" + task; }
    char kind() const;
    bool is_mean() const;
    std::string group() const;  // dataset + method + kind
};

/// Skips '#' comment lines and the header. Throws FixtureNotFound when the file is absent.
std::vector<PaperRow> load_paper_rows(const std::filesystem::path& path);

inline constexpr double kPaperTolerance = 0.1;

struct RowCheck {
    std::string id;
    double computed = 0.0;
    double published = 0.0;
    bool pass = false;
    std::string detail;  // empty on pass
};

/// Recomputes W or D per row; mean rows are compared with the mean of their group's rows.
std::vector<RowCheck> verify_paper_rows(const std::vector<PaperRow>& rows, double tolerance = kPaperTolerance);

/// Directory holding the bundled fixture, fixed at build time.
std::filesystem::path default_fixture_path();

}  // namespace aodip
