#include "banditcert/harness.hpp"

#include <bit>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "banditcert/estimators.hpp"
#include "banditcert/normal.hpp"
#include "banditcert/random.hpp"

namespace banditcert {

void validate(const ExperimentConfig& c) {
    if (c.alphas.empty() || c.bounds.empty() || c.xis.empty() || c.ms.empty() || c.seeds.empty())
        throw std::invalid_argument("experiment sweeps must be nonempty");
    if (c.train_file.has_value() != c.test_file.has_value())
        throw std::invalid_argument("give both train and test label files, or neither");
    if (!c.train_file && (c.num_examples == 0 || c.test_examples == 0))
        throw std::invalid_argument("synthetic sizes must be positive");
    for (double a : c.alphas)
        if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("alpha must be finite and >= 0");
    for (int m : c.ms)
        if (m < 1) throw std::invalid_argument("m must be >= 1");
    if (c.mc_eval < 1) throw std::invalid_argument("mc_eval must be >= 1");
    if (!(c.prior_sigma > 0.0)) throw std::invalid_argument("prior sigma must be > 0");
    validate(c.optim);
}

double resolve_tau(const std::optional<double>& tau, int num_actions) {
    if (!tau) return 1.0 / num_actions;
    if (!(*tau > 0.0 && *tau <= 1.0)) throw std::invalid_argument("tau must be in (0, 1]");
    return *tau;
}

std::vector<Cell> enumerate_cells(const ExperimentConfig& c) {
    std::vector<Cell> cells;
    for (std::uint64_t seed : c.seeds)
        for (int m : c.ms)
            for (double alpha : c.alphas)
                for (BoundKind kind : c.bounds) {
                    if (kind != BoundKind::cbb) {
                        if (m == 1) cells.push_back({alpha, kind, 0.0, m, seed});
                        continue;
                    }
                    for (double xi : c.xis) cells.push_back({alpha, kind, xi, m, seed});
                }
    return cells;
}

bool operator==(const ReportRow& a, const ReportRow& b) { return to_csv_line(a) == to_csv_line(b); }

SeedContext prepare_seed(const ExperimentConfig& c, std::uint64_t seed) {
    LabeledDataset train = c.train_file ? read_labeled(*c.train_file)
                                        : make_synthetic(c.num_examples, c.num_actions, c.feature_dim,
                                                         c.label_rule_seed, seed, {c.multilabel, 0.1});
    LabeledDataset test = c.test_file ? read_labeled(*c.test_file)
                                      : make_synthetic(c.test_examples, c.num_actions, c.feature_dim,
                                                       c.label_rule_seed, derive_seed(seed, {stream::evaluation}),
                                                       {c.multilabel, 0.1});
    auto [holdout, rest] = split_holdout(train, c.holdout_fraction, seed);
    LoggerTrainingSettings lt = c.logger;
    lt.seed = derive_seed(seed, {stream::logger_training});
    SoftmaxParams logger = train_logging_policy(holdout, lt);
    return {std::move(rest), std::move(test), std::move(logger)};
}

LoggedDataset cell_dataset(const SeedContext& ctx, const Cell& cell) {
    const std::uint64_t alpha_bits = std::bit_cast<std::uint64_t>(cell.alpha);
    return convert_supervised(ctx.logging_split, ctx.logger, cell.alpha, cell.m,
                              derive_seed(cell.seed, {stream::logging, alpha_bits, static_cast<std::uint64_t>(cell.m)}));
}

McSettings cell_eval_settings(const ExperimentConfig& c, const Cell& cell) {
    return {c.mc_eval, derive_seed(cell.seed, {stream::evaluation}), true};
}

ReportRow run_cell(const ExperimentConfig& c, const SeedContext& ctx, const Cell& cell, MinimizeResult* details) {
    ReportRow row;
    row.cell = cell;
    row.delta = c.delta;
    try {
        const int k = ctx.logging_split.num_actions();
        row.tau = resolve_tau(c.tau, k);
        const std::uint64_t alpha_bits = std::bit_cast<std::uint64_t>(cell.alpha);
        const auto m = static_cast<std::uint64_t>(cell.m);
        const LoggedDataset data = cell_dataset(ctx, cell);
        const GaussianPrior prior{data.logger_params()->weights, c.prior_sigma};

        BoundSettings bs;
        bs.kind = cell.bound;
        bs.tau = row.tau;
        bs.delta = c.delta;
        bs.xi = cell.bound == BoundKind::cbb ? cell.xi : 0.0;
        bs.n_lambda = c.n_lambda;
        OptimSettings os = c.optim;
        os.seed = derive_seed(cell.seed, {stream::optimizer, alpha_bits, m});
        const McSettings eval = cell_eval_settings(c, cell);

        MinimizeResult result = minimize_bound(data, prior, bs, os, eval);
        const Certificate cert = make_certificate(result.report, estimate_logging_risk(data));

        row.n_records = data.size();
        row.n_contexts = data.num_contexts();
        row.guaranteed_risk = cert.guaranteed_risk;
        row.logging_risk = cert.logging_risk;
        row.guaranteed_improvement = cert.guaranteed_improvement;
        row.true_risk_policy = true_risk_labeled(result.policy, ctx.test, eval, os.cls);
        row.true_risk_logger = true_risk_labeled(*data.logger_params(), ctx.test);
        row.initial_bound = result.initial_bound;
        row.kl = result.report.kl;
        row.sigma = result.policy.sigma;
        row.lambda = result.report.chosen_lambda.value_or(0.0);
        row.best_epoch = result.best_epoch;
        row.verdict = to_string(cert.verdict);
        row.policy_ref = policy_ref(result.policy);
        if (result.aborted) row.error = "optimisation stopped early: " + result.abort_reason;
        if (details) *details = std::move(result);
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

ReportRow run_cell(const ExperimentConfig& c, const Cell& cell) {
    validate(c);
    return run_cell(c, prepare_seed(c, cell.seed), cell);
}

ExperimentResult run_experiment(const ExperimentConfig& c, bool write_files) {
    validate(c);
    ExperimentResult out;
    std::map<std::uint64_t, SeedContext> contexts;
    for (const Cell& cell : enumerate_cells(c)) {
        const auto start = std::chrono::steady_clock::now();
        auto it = contexts.find(cell.seed);
        if (it == contexts.end()) {
            try {
                it = contexts.emplace(cell.seed, prepare_seed(c, cell.seed)).first;
            } catch (const std::exception& e) {
                ReportRow row;
                row.cell = cell;
                row.delta = c.delta;
                row.error = std::string("setup failed: ") + e.what();
                out.rows.push_back(row);
                out.timings.push_back({cell, 0.0});
                continue;
            }
        }
        out.rows.push_back(run_cell(c, it->second, cell));
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.timings.push_back({cell, seconds});
    }
    if (write_files) {
        std::filesystem::create_directories(c.out_dir);
        emit_report(out.rows, c.out_dir / "cells.csv", ReportFormat::csv);
        emit_report(out.rows, c.out_dir / "cells.json", ReportFormat::json);
        emit_report(out.rows, c.out_dir / "cells_long.csv", ReportFormat::long_csv);
        write_timings(out.timings, c.out_dir / "timings.csv");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports.

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace {

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
        if (ch == '"') q += '"';
        q += ch;
    }
    return q + "\"";
}

std::string cell_prefix(const Cell& c) {
    return format_double(c.alpha) + "," + to_string(c.bound) + "," + format_double(c.xi) + "," +
           std::to_string(c.m) + "," + std::to_string(c.seed);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

std::string csv_header() {
    return "alpha,bound,xi,m,seed,tau,delta,n_records,n_contexts,guaranteed_risk,logging_risk,"
           "guaranteed_improvement,true_risk_policy,true_risk_logger,initial_bound,kl,sigma,lambda,best_epoch,"
           "verdict,policy_ref,error";
}

std::string to_csv_line(const ReportRow& r) {
    std::ostringstream s;
    s << cell_prefix(r.cell) << ',' << format_double(r.tau) << ',' << format_double(r.delta) << ',' << r.n_records
      << ',' << r.n_contexts << ',' << format_double(r.guaranteed_risk) << ',' << format_double(r.logging_risk)
      << ',' << format_double(r.guaranteed_improvement) << ',' << format_double(r.true_risk_policy) << ','
      << format_double(r.true_risk_logger) << ',' << format_double(r.initial_bound) << ',' << format_double(r.kl)
      << ',' << format_double(r.sigma) << ',' << format_double(r.lambda) << ',' << r.best_epoch << ','
      << r.verdict << ',' << r.policy_ref << ',' << csv_quote(r.error);
    return s.str();
}

nlohmann::json to_json(const ReportRow& r) {
    return {{"alpha", r.cell.alpha},
            {"bound", to_string(r.cell.bound)},
            {"xi", r.cell.xi},
            {"m", r.cell.m},
            {"seed", r.cell.seed},
            {"tau", r.tau},
            {"delta", r.delta},
            {"n_records", r.n_records},
            {"n_contexts", r.n_contexts},
            {"guaranteed_risk", r.guaranteed_risk},
            {"logging_risk", r.logging_risk},
            {"guaranteed_improvement", r.guaranteed_improvement},
            {"true_risk_policy", r.true_risk_policy},
            {"true_risk_logger", r.true_risk_logger},
            {"initial_bound", r.initial_bound},
            {"kl", r.kl},
            {"sigma", r.sigma},
            {"lambda", r.lambda},
            {"best_epoch", r.best_epoch},
            {"verdict", r.verdict},
            {"policy_ref", r.policy_ref},
            {"error", r.error}};
}

ReportRow row_from_json(const nlohmann::json& j) {
    ReportRow r;
    r.cell = {j.at("alpha").get<double>(), bound_kind_from_string(j.at("bound").get<std::string>()),
              j.at("xi").get<double>(), j.at("m").get<int>(), j.at("seed").get<std::uint64_t>()};
    r.tau = j.at("tau").get<double>();
    r.delta = j.at("delta").get<double>();
    r.n_records = j.at("n_records").get<std::size_t>();
    r.n_contexts = j.at("n_contexts").get<std::size_t>();
    r.guaranteed_risk = j.at("guaranteed_risk").get<double>();
    r.logging_risk = j.at("logging_risk").get<double>();
    r.guaranteed_improvement = j.at("guaranteed_improvement").get<double>();
    r.true_risk_policy = j.at("true_risk_policy").get<double>();
    r.true_risk_logger = j.at("true_risk_logger").get<double>();
    r.initial_bound = j.at("initial_bound").get<double>();
    r.kl = j.at("kl").get<double>();
    r.sigma = j.at("sigma").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.verdict = j.at("verdict").get<std::string>();
    r.policy_ref = j.at("policy_ref").get<std::string>();
    r.error = j.at("error").get<std::string>();
    return r;
}

void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& path, ReportFormat format) {
    std::ofstream out = open_out(path);
    switch (format) {
        case ReportFormat::csv:
            out << csv_header() << '\n';
            for (const ReportRow& r : rows) out << to_csv_line(r) << '\n';
            break;
        case ReportFormat::json: {
            nlohmann::json arr = nlohmann::json::array();
            for (const ReportRow& r : rows) arr.push_back(to_json(r));
            out << arr.dump(2) << '\n';
            break;
        }
        case ReportFormat::long_csv:
            out << "alpha,bound,xi,m,seed,metric,value\n";
            for (const ReportRow& r : rows) {
                if (!r.error.empty() && r.verdict.empty()) continue;
                const std::pair<const char*, double> metrics[] = {{"guaranteed_risk", r.guaranteed_risk},
                                                                  {"true_risk_policy", r.true_risk_policy},
                                                                  {"guaranteed_improvement", r.guaranteed_improvement},
                                                                  {"true_risk_logger", r.true_risk_logger},
                                                                  {"logging_risk", r.logging_risk}};
                for (const auto& [name, value] : metrics)
                    out << cell_prefix(r.cell) << ',' << name << ',' << format_double(value) << '\n';
            }
            break;
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<ReportRow> read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const nlohmann::json arr = nlohmann::json::parse(in);
    std::vector<ReportRow> rows;
    for (const auto& j : arr) rows.push_back(row_from_json(j));
    return rows;
}

void write_timings(const std::vector<CellTiming>& timings, const std::filesystem::path& path) {
    std::ofstream out = open_out(path);
    out << "alpha,bound,xi,m,seed,seconds\n";
    for (const CellTiming& t : timings) out << cell_prefix(t.cell) << ',' << format_double(t.seconds) << '\n';
}

// ---------------------------------------------------------------------------
// Coverage.

std::pair<double, double> wilson_interval(int successes, int trials, double z) {
    if (trials <= 0) throw std::invalid_argument("wilson_interval: trials must be positive");
    const double n = trials;
    const double phat = successes / n;
    const double z2 = z * z;
    const double centre = (phat + z2 / (2.0 * n)) / (1.0 + z2 / n);
    const double half = z * std::sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

Vector lig_propensities_quadrature(const LigParams& params, const Vector& features) {
    validate(params);
    const int k = params.num_actions();
    const Vector scores = params.mu * features;
    const double scale = params.sigma * features.norm();
    if (!(scale > 0.0)) throw std::invalid_argument("quadrature propensities need a nonzero feature vector");
    Vector out(k);
    for (int a = 0; a < k; ++a) {
        auto integrand = [&](double eps) {
            double v = normal_pdf(eps);
            for (int b = 0; b < k; ++b)
                if (b != a) v *= normal_cdf(eps + (scores[a] - scores[b]) / scale);
            return v;
        };
        out[a] = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, -12.0, 12.0, 15, 1e-12);
    }
    return out;
}

CoverageReport coverage_check(const CoverageConfig& c) {
    if (c.trials < 1) throw std::invalid_argument("coverage: trials must be >= 1");
    if (c.pool_size == 0 || c.n == 0) throw std::invalid_argument("coverage: empty pool or sample");
    BoundSettings bs = c.bound;
    const int k = c.num_actions;
    if (!(bs.tau > 0.0)) bs.tau = 1.0 / k;
    if (bs.kind != BoundKind::cbb) bs.xi = 0.0;
    validate(bs);

    const LabeledDataset pool = make_synthetic(c.pool_size, k, c.feature_dim, derive_seed(c.seed, {stream::coverage, 0}),
                                               derive_seed(c.seed, {stream::coverage, 1}));
    LoggerTrainingSettings lt;
    lt.seed = derive_seed(c.seed, {stream::coverage, 2});
    const SoftmaxParams logger = train_logging_policy(pool, lt);
    const GaussianPrior prior{logger.weights, 1.0};

    std::vector<std::discrete_distribution<int>> action_dists;
    for (const LabeledExample& ex : pool.examples()) {
        const Vector p = softmax_probabilities(logger, ex.features);
        action_dists.emplace_back(p.data(), p.data() + p.size());
    }

    CoverageReport rep;
    rep.kind = bs.kind;
    rep.xi = bs.xi;
    rep.delta = bs.delta;
    rep.tau = bs.tau;
    rep.trials = c.trials;
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto pool_n = static_cast<Eigen::Index>(pool.size());

    for (int t = 0; t < c.trials; ++t) {
        const auto tt = static_cast<std::uint64_t>(t);
        // The policy is fixed before the trial's data is drawn.
        Rng policy_rng = make_rng(c.seed, {stream::coverage, 3, tt});
        LigParams q{prior.mu0, c.policy_sigma};
        for (Eigen::Index i = 0; i < q.mu.size(); ++i) q.mu.data()[i] += c.policy_spread * normal(policy_rng);

        Matrix pool_probs(pool_n, k);
        double true_risk = 0.0;
        const NormalDraws draws =
            NormalDraws::generate({c.mc_samples, derive_seed(c.seed, {stream::coverage, 4, tt}), true}, 1);
        PropensityKernel kernel(PolicyClass::lig, k);
        Vector scores(k);
        for (Eigen::Index i = 0; i < pool_n; ++i) {
            const LabeledExample& ex = pool[static_cast<std::size_t>(i)];
            const Vector exact = lig_propensities_quadrature(q, ex.features);
            for (int a : ex.labels) true_risk -= exact[a];
            scores.noalias() = q.mu * ex.features;
            kernel.probabilities({scores.data(), static_cast<std::size_t>(k)}, q.sigma * ex.features.norm(), draws,
                                 {pool_probs.data() + i * k, static_cast<std::size_t>(k)});
        }
        true_risk /= static_cast<double>(pool_n);

        Rng data_rng = make_rng(c.seed, {stream::coverage, 5, tt});
        std::uniform_int_distribution<Eigen::Index> pick(0, pool_n - 1);
        std::vector<LoggedRecord> records(c.n);
        Matrix probs(static_cast<Eigen::Index>(c.n), k);
        for (std::size_t r = 0; r < c.n; ++r) {
            const Eigen::Index i = pick(data_rng);
            const LabeledExample& ex = pool[static_cast<std::size_t>(i)];
            const int a = action_dists[static_cast<std::size_t>(i)](data_rng);
            records[r].features = ex.features;
            records[r].action = a;
            records[r].cost = has_label(ex, a) ? -1.0 : 0.0;
            records[r].logging_propensity = softmax_propensity(logger, ex.features, a);
            probs.row(static_cast<Eigen::Index>(r)) = pool_probs.row(i);
        }
        const LoggedDataset data(k, c.feature_dim, std::move(records), logger);
        const ContextTable table(data);
        const BoundReport report = evaluate_bound(probs, table, gaussian_kl(q, prior), bs);
        if (!std::isfinite(report.bound_value)) throw std::domain_error("coverage: non-finite bound");

        rep.bounds.push_back(report.bound_value);
        rep.true_risks.push_back(true_risk);
        if (true_risk > report.bound_value) ++rep.violations;
        rep.mean_bound += report.bound_value / c.trials;
        rep.mean_true_risk += true_risk / c.trials;
    }
    rep.rate = static_cast<double>(rep.violations) / c.trials;
    std::tie(rep.wilson_low, rep.wilson_high) = wilson_interval(rep.violations, c.trials);
    rep.allowed_rate = bs.delta + 3.0 * std::sqrt(bs.delta * (1.0 - bs.delta) / c.trials);
    return rep;
}

nlohmann::json to_json(const CoverageReport& r) {
    return {{"bound", to_string(r.kind)},
            {"xi", r.xi},
            {"delta", r.delta},
            {"tau", r.tau},
            {"trials", r.trials},
            {"violations", r.violations},
            {"rate", r.rate},
            {"wilson_low", r.wilson_low},
            {"wilson_high", r.wilson_high},
            {"allowed_rate", r.allowed_rate},
            {"mean_bound", r.mean_bound},
            {"mean_true_risk", r.mean_true_risk}};
}

}  // namespace banditcert
