#include "support.hpp"

#include "aodip/errors.hpp"
#include "aodip/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

using namespace aodip;
using namespace aodip::test;

namespace {

std::vector<ResultLogEntry> records(int legal, int illegal) {
    std::vector<ResultLogEntry> out;
    for (int i = 0; i < legal; ++i) out.push_back({"t", "d", "c", 0, 0, true});
    for (int i = 0; i < illegal; ++i) out.push_back({"t", "d", "c", 0, 1, false});
    return out;
}

std::map<std::string, RowCheck> checks_by_id(const std::vector<RowCheck>& checks) {
    std::map<std::string, RowCheck> out;
    for (const auto& c : checks) out[c.id] = c;
    return out;
}

TaskMetrics random_row(CounterRng& rng, const std::string& id) {
    return TaskMetrics{id, rng.uniform(-5.0, 10.0), rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0),
                       rng.uniform(0.0, 100.0)};
}

}  // namespace

TEST_CASE("published primitive values") {
    CHECK(drop_a(85.5, 85.4) == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(drop_a(42.0, 42.0) == 0.0);
    CHECK(drop_u({{87.5, 0.0}, {88.8, 0.0}}) == doctest::Approx(88.15).epsilon(1e-12));
    CHECK(drop_u({{30.0, 30.0}, {55.5, 55.5}}) == 0.0);

    const double w_am = w_diff(79.4, 88.15, 0.0);
    const double w_we = w_diff(94.4, 86.25, 0.0);
    CHECK(w_am == doctest::Approx(69.99).epsilon(1e-4));
    CHECK(std::abs(w_am - 69.98) <= 0.1);
    CHECK(w_we == doctest::Approx(81.42).epsilon(1e-4));
    CHECK(std::abs(w_we - 81.40) <= 0.1);
    CHECK(w_diff(63.0, 12.5, 12.5) == 0.0);

    CHECK(std::abs(d_cross(68.13, 2.61) - 44.64) <= 0.005);
    CHECK(std::abs(d_cross(81.75, 3.11) - 64.29) <= 0.005);
    CHECK(d_cross(57.0, 57.0) == 0.0);
}

TEST_CASE("property: formula identities over random percentages") {
    CounterRng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double sl = rng.uniform(0.0, 100.0), ip = rng.uniform(0.0, 100.0);
        REQUIRE(drop_a(sl, ip) == sl - ip);
        const int n = 1 + int(rng.below(5));
        std::vector<std::pair<double, double>> pairs;
        double sum = 0.0;
        for (int k = 0; k < n; ++k) {
            pairs.emplace_back(rng.uniform(0.0, 100.0), rng.uniform(0.0, 100.0));
            sum += pairs.back().first - pairs.back().second;
        }
        REQUIRE(std::abs(drop_u(pairs) - sum / n) <= 1e-12);
        const double du = rng.uniform(-100.0, 100.0), da = rng.uniform(-100.0, 100.0);
        REQUIRE(std::abs(w_diff(ip, du, da) - ip * (du - da) / 100.0) <= 1e-12);
        REQUIRE(std::abs(d_cross(sl, ip) - sl * (sl - ip) / 100.0) <= 1e-12);
        REQUIRE(w_diff(ip, du, du) == 0.0);
        REQUIRE(d_cross(sl, sl) == 0.0);
    }
}

TEST_CASE("out-of-range percentages are rejected") {
    CHECK_THROWS_AS(drop_a(100.5, 1), InvalidInput);
    CHECK_THROWS_AS(drop_a(1, -0.1), InvalidInput);
    CHECK_THROWS_AS(drop_u({}), InvalidInput);
    CHECK_THROWS_AS(drop_u({{1, 101}}), InvalidInput);
    CHECK_THROWS_AS(w_diff(std::nan(""), 1, 1), InvalidInput);
    CHECK_THROWS_AS(d_cross(50, 200), InvalidInput);
}

TEST_CASE("legality rates against a per-record count") {
    const auto all_legal = records(40, 0);
    const auto rates = legality_rates(all_legal, all_legal, all_legal);
    CHECK(rates.r_a == 100.0);
    CHECK(rates.r_e == 100.0);
    CHECK(rates.r_u == 0.0);
    std::ostringstream shown;
    shown << std::fixed << std::setprecision(1) << rates.r_a;
    CHECK(shown.str() == "100.0");

    CounterRng rng(8);
    for (int i = 0; i < 1000; ++i) {
        std::vector<ResultLogEntry> g;
        const int n = 1 + int(rng.below(50));
        int legal = 0;
        for (int k = 0; k < n; ++k) {
            const bool l = rng.below(2) == 1;
            legal += l;
            g.push_back({"t", "d", "c", 0, 0, l});
        }
        REQUIRE(legality_rate(g, true) == doctest::Approx(100.0 * legal / n).epsilon(1e-12));
        REQUIRE(legality_rate(g, true) + legality_rate(g, false) == doctest::Approx(100.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(legality_rate({}, true), InvalidInput);
    CHECK_THROWS_AS(legality_rates(all_legal, {}, all_legal), InvalidInput);
}

TEST_CASE("task metrics from per-domain accuracies") {
    TaskResult r{"domain0", "domain0", 90.0, 88.0, {{"domain2", 80.0, 10.0}, {"domain3", 70.0, 4.0}}, {99, 98, 97}};
    const auto m = task_metrics(r);
    CHECK(m.drop_a == doctest::Approx(2.0));
    CHECK(m.drop_u == doctest::Approx(68.0));
    CHECK(m.w_u_a == doctest::Approx(0.88 * 66.0));
    CHECK(m.d_u_a == doctest::Approx(0.88 * (88.0 - 7.0)));
    r.unauthorized.clear();
    CHECK_THROWS_AS(task_metrics(r), InvalidInput);
}

TEST_CASE("report mean row is the arithmetic mean of the task rows") {
    CounterRng rng(4);
    std::vector<TaskMetrics> rows;
    for (int i = 0; i < 7; ++i) rows.push_back(random_row(rng, "t" + std::to_string(6 - i)));
    const auto rep = make_report(rows);
    CHECK(std::is_sorted(rep.tasks.begin(), rep.tasks.end(),
                         [](const auto& a, const auto& b) { return a.task_id < b.task_id; }));
    double w = 0.0;
    for (const auto& r : rows) w += r.w_u_a;
    CHECK(rep.mean.w_u_a == doctest::Approx(w / 7.0).epsilon(1e-12));
    CHECK(rep.mean.task_id == "mean");
}

TEST_CASE("rendering: header-only empty report, CSV shape and round trip") {
    const MetricsReport empty = make_report({});
    const std::string text = render_report(empty, ReportFormat::text);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    CHECK(text.find("Drop_a") != std::string::npos);
    CHECK(render_report(empty, ReportFormat::csv) == "task,drop_a,drop_u,w_u_a,d_u_a\n");

    CounterRng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<TaskMetrics> rows;
        const int n = 1 + int(rng.below(6));
        for (int i = 0; i < n; ++i) rows.push_back(random_row(rng, "task" + std::to_string(i)));
        const auto rep = make_report(rows);
        const std::string csv = render_report(rep, ReportFormat::csv);
        std::istringstream in(csv);
        std::string line;
        std::getline(in, line);
        int cells = 0, lines = 0;
        while (std::getline(in, line)) {
            ++lines;
            cells += int(std::count(line.begin(), line.end(), ','));  // cells after the task id
        }
        REQUIRE(lines == n);
        REQUIRE(cells == n * 4);
        const auto back = parse_report_csv(csv);
        REQUIRE(render_report(back, ReportFormat::csv) == csv);
        REQUIRE(render_report(back, ReportFormat::text) == render_report(rep, ReportFormat::text));
        for (std::size_t i = 0; i < rep.tasks.size(); ++i) REQUIRE(back.tasks[i].d_u_a == rep.tasks[i].d_u_a);
    }
    CHECK_THROWS_AS(parse_report_csv("bogus\n"), ParseError);
    CHECK_THROWS_AS(parse_report_csv("task,drop_a,drop_u,w_u_a,d_u_a\nx,1,2,3\n"), ParseError);
}

TEST_CASE("text rendering never prints a negative zero") {
    const auto rep = make_report({TaskMetrics{"a", -0.0, -0.001, 0.0, -1e-12}});
    const std::string text = render_report(rep, ReportFormat::text);
    CHECK(text.find("-0.00") == std::string::npos);
    CHECK(render_report(rep, ReportFormat::csv).find("-0,") == std::string::npos);
}

TEST_CASE("bundled published rows all reproduce") {
    const auto rows = load_paper_rows(default_fixture_path());
    const auto checks = verify_paper_rows(rows);
    REQUIRE(checks.size() >= 12);
    for (const auto& c : checks) {
        INFO(c.id << ": " << c.detail);
        CHECK(c.pass);
    }
    const auto by_id = checks_by_id(checks);
    const std::pair<const char*, double> cited[] = {
        {"office31:AoD/Am/W", 69.98},       {"office31:AoD/Ds/W", 86.43},        {"office31:AoD/We/W", 81.40},
        {"office31:AoD/Amdag/D", 44.64},    {"officehome:AoD/Ardag/D", 64.29},   {"officehome:AoD/Mean/W", 63.47},
    };
    for (const auto& [id, value] : cited) {
        INFO(id);
        REQUIRE(by_id.count(id) == 1);
        CHECK(by_id.at(id).published == value);
        CHECK(by_id.at(id).pass);
    }
    const auto mean_row = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.id() == "officehome:AoD/Mean/W"; });
    REQUIRE(mean_row != rows.end());
    CHECK(*mean_row->drop_u == 74.57);
    CHECK(*mean_row->drop_a == 0.13);
}

TEST_CASE("a corrupted row fails and names itself") {
    auto rows = load_paper_rows(default_fixture_path());
    auto it = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.id() == "office31:AoD/Ds/W"; });
    REQUIRE(it != rows.end());
    it->drop_u = *it->drop_u - 5.0;
    const auto by_id = checks_by_id(verify_paper_rows(rows));
    CHECK_FALSE(by_id.at("office31:AoD/Ds/W").pass);
    CHECK(by_id.at("office31:AoD/Am/W").pass);
    CHECK_FALSE(by_id.at("office31:AoD/Ds/W").detail.empty());

    auto mean_rows = load_paper_rows(default_fixture_path());
    auto m = std::find_if(mean_rows.begin(), mean_rows.end(), [](const auto& r) { return r.id() == "officehome:AoD/Mean/W"; });
    m->drop_a = 3.0;
    CHECK_FALSE(checks_by_id(verify_paper_rows(mean_rows)).at("officehome:AoD/Mean/W").pass);
}

TEST_CASE("fixture errors") {
    TempDir dir;
    CHECK_THROWS_AS(load_paper_rows(dir / "absent.csv"), FixtureNotFound);
    std::ofstream(dir / "bad.csv") << "dataset,task,A_a_ip,drop_u,drop_a,published_W,A_u_ip,published_D\n"
                                   << "x,M/a/W,abc,1,1,1,,\n";
    try {
        load_paper_rows(dir / "bad.csv");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}
