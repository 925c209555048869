#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "banditcert/harness.hpp"
#include "oracles.hpp"

using namespace banditcert;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& dir) {
    ExperimentConfig c;
    c.num_examples = 400;
    c.test_examples = 200;
    c.num_actions = 3;
    c.feature_dim = 4;
    c.optim.epochs = 2;
    c.optim.batch_size = 64;
    c.optim.mc_train = 8;
    c.optim.mc_select = 16;
    c.mc_eval = 64;
    c.alphas = {0.2, 1.0};
    c.bounds = {BoundKind::cbb, BoundKind::ls};
    c.out_dir = fs::temp_directory_path() / dir;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cell enumeration") {
    ExperimentConfig c = tiny("banditcert_cells");
    CHECK(enumerate_cells(c).size() == 4);

    c.xis = {0.0, -0.5};
    c.bounds = {BoundKind::cbb, BoundKind::ls, BoundKind::catoni};
    c.ms = {1, 2};
    c.seeds = {0, 1, 2};
    // per seed and alpha: cbb 2 xi x 2 m, ls and catoni once at m = 1
    CHECK(enumerate_cells(c).size() == 3 * 2 * (4 + 2));
    for (const Cell& cell : enumerate_cells(c))
        if (cell.bound != BoundKind::cbb) {
            CHECK(cell.m == 1);
            CHECK(cell.xi == 0.0);
        }
    CHECK(resolve_tau(std::nullopt, 8) == 0.125);
    CHECK(resolve_tau(0.3, 8) == 0.3);
    c.alphas.clear();
    CHECK_THROWS(validate(c));
}

TEST_CASE("sweep output is deterministic and complete") {
    const ExperimentConfig c = tiny("banditcert_sweep_a");
    const ExperimentResult a = run_experiment(c);
    REQUIRE(a.rows.size() == 4);
    for (const auto& r : a.rows) {
        CHECK(r.error.empty());
        CHECK(r.guaranteed_improvement == r.logging_risk - r.guaranteed_risk);
        CHECK(r.tau == doctest::Approx(1.0 / 3.0));
        CHECK(r.n_records == 380);
    }
    const std::string csv = slurp(c.out_dir / "cells.csv");
    CHECK(csv.rfind(csv_header(), 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(fs::exists(c.out_dir / "cells.json"));
    CHECK(fs::exists(c.out_dir / "cells_long.csv"));
    CHECK(fs::exists(c.out_dir / "timings.csv"));

    ExperimentConfig again = c;
    again.out_dir = fs::temp_directory_path() / "banditcert_sweep_b";
    run_experiment(again);
    CHECK(slurp(again.out_dir / "cells.csv") == csv);

    // any single cell rerun on its own
    const ReportRow solo = run_cell(c, enumerate_cells(c)[3]);
    CHECK(to_csv_line(solo) == to_csv_line(a.rows[3]));

    const auto back = read_report_json(c.out_dir / "cells.json");
    REQUIRE(back.size() == a.rows.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == a.rows[i]);
}

TEST_CASE("report formatting") {
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
    ReportRow r;
    r.cell = {0.5, BoundKind::catoni, 0.0, 1, 3};
    r.guaranteed_risk = -0.123456789012345678;
    r.verdict = "KEEP_LOGGING";
    r.error = "boom, with a comma";
    CHECK(row_from_json(to_json(r)) == r);
    const std::string line = to_csv_line(r);
    CHECK(line.find("-0.12345678901234568") != std::string::npos);
    const std::string header = csv_header();
    const auto fields = std::count(header.begin(), header.end(), ',');
    CHECK(std::count(line.begin(), line.end(), ',') >= fields);

    const fs::path p = fs::temp_directory_path() / "banditcert_long.csv";
    emit_report({r}, p, ReportFormat::long_csv);
    const std::string text = slurp(p);
    CHECK(text.find("guaranteed_risk") != std::string::npos);
    CHECK(text.find("true_risk_policy") != std::string::npos);
}

TEST_CASE("wilson interval") {
    const auto [lo, hi] = wilson_interval(0, 1);
    CHECK(lo == 0.0);
    CHECK(hi > 0.7);
    const auto [l2, h2] = wilson_interval(10, 200);
    // closed form
    const double z = 1.959963984540054, p = 0.05, n = 200;
    const double centre = (p + z * z / (2 * n)) / (1 + z * z / n);
    const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n);
    CHECK(l2 == doctest::Approx(centre - half).epsilon(1e-14));
    CHECK(h2 == doctest::Approx(centre + half).epsilon(1e-14));
}

TEST_CASE("quadrature propensities") {
    LigParams q{Matrix(4, 3), 0.6};
    q.mu << 0.1, 0.5, -0.3, 1.0, 0.0, 0.2, -0.4, 0.3, 0.9, 0.2, 0.2, 0.2;
    const Vector x = Vector::LinSpaced(3, -0.5, 1.0);
    const Vector v = lig_propensities_quadrature(q, x);
    const Vector s = q.mu * x;
    const auto exact = oracle::argmax_probs({s.data(), s.data() + 4}, q.sigma * x.norm());
    for (int a = 0; a < 4; ++a) CHECK(v[a] == doctest::Approx(exact[static_cast<std::size_t>(a)]).epsilon(1e-9));
    CHECK(std::abs(v.sum() - 1.0) < 1e-10);
}

TEST_CASE("coverage harness") {
    CoverageConfig c;
    c.trials = 1;
    c.n = 300;
    c.pool_size = 30;
    c.bound.kind = BoundKind::ls;
    c.mc_samples = 128;
    const CoverageReport one = coverage_check(c);
    CHECK((one.rate == 0.0 || one.rate == 1.0));
    CHECK(one.wilson_high - one.wilson_low > 0.5);

    c.trials = 5;
    c.bound.kind = BoundKind::cbb;
    c.bound.xi = -0.5;
    const CoverageReport strict = coverage_check(c);
    c.bound.delta = 0.5;
    const CoverageReport loose = coverage_check(c);
    REQUIRE(strict.bounds.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(loose.bounds[i] <= strict.bounds[i]);
        CHECK(loose.true_risks[i] == strict.true_risks[i]);
    }
    CHECK(strict.allowed_rate == doctest::Approx(0.05 + 3 * std::sqrt(0.05 * 0.95 / 5)));
    const auto j = to_json(strict);
    CHECK(j.contains("violations"));
}
