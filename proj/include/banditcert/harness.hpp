#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "banditcert/bounds.hpp"
#include "banditcert/data.hpp"
#include "banditcert/learn.hpp"
#include "banditcert/policies.hpp"
#include "json.hpp"

namespace banditcert {

struct ExperimentConfig {
    // Synthetic environment, used unless both label files are given.
    std::size_t num_examples = 20000;
    std::size_t test_examples = 10000;
    int num_actions = 10;
    int feature_dim = 20;
    std::uint64_t label_rule_seed = 0;
    bool multilabel = false;
    std::optional<std::filesystem::path> train_file;
    std::optional<std::filesystem::path> test_file;

    double holdout_fraction = 0.05;
    LoggerTrainingSettings logger;  // seed is replaced per cell

    std::vector<double> alphas{1.0};
    std::vector<BoundKind> bounds{BoundKind::cbb};
    std::vector<double> xis{0.0};  // CBB only
    std::vector<int> ms{1};
    std::vector<std::uint64_t> seeds{0};
    std::optional<double> tau;  // empty: 1/K
    double delta = 0.05;
    int n_lambda = 100;
    double prior_sigma = 1.0;
    OptimSettings optim;  // seed is replaced per cell
    int mc_eval = 2048;

    std::filesystem::path out_dir = "out";
};

void validate(const ExperimentConfig& config);
double resolve_tau(const std::optional<double>& tau, int num_actions);

struct Cell {
    double alpha = 1.0;
    BoundKind bound = BoundKind::cbb;
    double xi = 0.0;
    int m = 1;
    std::uint64_t seed = 0;
};

// seeds x ms x alphas x bounds x xis; LS and Catoni take one cell with
// xi = 0 and only exist for m = 1.
std::vector<Cell> enumerate_cells(const ExperimentConfig& config);

struct ReportRow {
    Cell cell;
    double tau = 0.0;
    double delta = 0.0;
    std::size_t n_records = 0;
    std::size_t n_contexts = 0;
    double guaranteed_risk = 0.0;
    double logging_risk = 0.0;  // estimated from the logs
    double guaranteed_improvement = 0.0;
    double true_risk_policy = 0.0;  // R(pi*) on the test set
    double true_risk_logger = 0.0;  // R(pi0) on the test set
    double initial_bound = 0.0;
    double kl = 0.0;
    double sigma = 0.0;
    double lambda = 0.0;
    int best_epoch = 0;
    std::string verdict;
    std::string policy_ref;
    std::string error;  // empty on success
};

bool operator==(const ReportRow& a, const ReportRow& b);

// Shared per-seed inputs: the labelled splits and the trained logger.
struct SeedContext {
    LabeledDataset logging_split;
    LabeledDataset test;
    SoftmaxParams logger;
};

SeedContext prepare_seed(const ExperimentConfig& config, std::uint64_t seed);

// The logged data and the evaluation draws a cell uses.
LoggedDataset cell_dataset(const SeedContext& context, const Cell& cell);
McSettings cell_eval_settings(const ExperimentConfig& config, const Cell& cell);

ReportRow run_cell(const ExperimentConfig& config, const SeedContext& context, const Cell& cell,
                   MinimizeResult* details = nullptr);
ReportRow run_cell(const ExperimentConfig& config, const Cell& cell);

struct CellTiming {
    Cell cell;
    double seconds = 0.0;
};

struct ExperimentResult {
    std::vector<ReportRow> rows;
    std::vector<CellTiming> timings;
};

// Runs every cell, records failures per cell and writes cells.csv,
// cells.json, cells_long.csv and timings.csv into config.out_dir.
ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files = true);

enum class ReportFormat { csv, json, long_csv };

std::string csv_header();
std::string to_csv_line(const ReportRow& row);
nlohmann::json to_json(const ReportRow& row);
ReportRow row_from_json(const nlohmann::json& j);
void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path, ReportFormat format);
std::vector<ReportRow> read_report_json(const std::filesystem::path& path);
void write_timings(const std::vector<CellTiming>& timings, const std::filesystem::path& path);

// %.17g
std::string format_double(double x);

// ---------------------------------------------------------------------------
// Coverage of the probabilistic guarantee on an environment with a finite
// context pool, where the true risk of a fixed policy is computed exactly.

struct CoverageConfig {
    int num_actions = 5;
    int feature_dim = 10;
    std::size_t pool_size = 200;
    std::size_t n = 2000;
    int trials = 200;
    BoundSettings bound;  // tau <= 0 means 1/K
    double policy_spread = 0.3;  // std of mu - mu0 for the per-trial policy
    double policy_sigma = 1.0;
    int mc_samples = 2048;
    std::uint64_t seed = 0;
};

struct CoverageReport {
    BoundKind kind = BoundKind::cbb;
    double xi = 0.0;
    double delta = 0.0;
    double tau = 0.0;
    int trials = 0;
    int violations = 0;
    double rate = 0.0;
    double wilson_low = 0.0;
    double wilson_high = 0.0;
    double allowed_rate = 0.0;  // delta + 3 sqrt(delta (1 - delta) / trials)
    double mean_bound = 0.0;
    double mean_true_risk = 0.0;
    std::vector<double> bounds;
    std::vector<double> true_risks;
};

CoverageReport coverage_check(const CoverageConfig& config);
nlohmann::json to_json(const CoverageReport& report);

// Wilson score interval at z standard deviations.
std::pair<double, double> wilson_interval(int successes, int trials, double z = 1.959963984540054);

// Propensities of an LIG policy by adaptive Gauss-Kronrod quadrature of the
// 1-D integral with the full-accuracy normal CDF.
Vector lig_propensities_quadrature(const LigParams& params, const Vector& features);

}  // namespace banditcert
