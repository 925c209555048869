// bandit-certify: learn LIG policies from logged bandit data by minimising
// PAC-Bayesian bounds, and print certificates.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "banditcert/harness.hpp"
#include "banditcert/learn.hpp"

using namespace banditcert;
namespace fs = std::filesystem;

namespace {

struct Shared {
    std::uint64_t seed = 0;
    double delta = 0.05;
    std::string tau = "auto";
    double xi = 0.0;
    std::string bound = "cbb";
    int epochs = 100;
    double lr = 1e-3;
    int mc_train = 32;
    int mc_eval = 2048;
    std::string out = "out";
    std::string config;
};

void add_shared(CLI::App* app, Shared& s) {
    app->add_option("--config", s.config, "Flat key=value file mirroring the flags; explicit flags win");
    app->add_option("--seed", s.seed, "Master seed")->capture_default_str();
    app->add_option("--delta", s.delta, "Confidence parameter")->capture_default_str();
    app->add_option("--tau", s.tau, "Clipping: auto (1/K) or a number in (0, 1]")->capture_default_str();
    app->add_option("--xi", s.xi, "Control variate for cbb, in [-1, 0]")->capture_default_str();
    app->add_option("--bound", s.bound, "ls | catoni | cbb")
        ->check(CLI::IsMember({"ls", "catoni", "cbb"}))
        ->capture_default_str();
    app->add_option("--epochs", s.epochs, "Optimiser epochs")->capture_default_str();
    app->add_option("--lr", s.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--mc-train", s.mc_train, "Draws per optimisation step")->capture_default_str();
    app->add_option("--mc-eval", s.mc_eval, "Draws for reported numbers")->capture_default_str();
    app->add_option("--out", s.out, "Output directory")->capture_default_str();
}

std::optional<double> parse_tau(const std::string& s) {
    if (s == "auto") return std::nullopt;
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("--tau must be 'auto' or a number");
    return v;
}

BoundSettings bound_settings(const Shared& s, int num_actions) {
    BoundSettings b;
    b.kind = bound_kind_from_string(s.bound);
    b.tau = resolve_tau(parse_tau(s.tau), num_actions);
    b.delta = s.delta;
    b.xi = s.xi;
    validate(b);
    return b;
}

McSettings eval_mc(const Shared& s) { return {s.mc_eval, derive_seed(s.seed, {stream::evaluation}), true}; }

fs::path out_dir(const Shared& s) {
    fs::create_directories(s.out);
    return fs::path(s.out);
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// Expands "--config FILE" into "--key value" tokens for every key not given
// on the command line. Lines are key=value; blank lines and # comments are
// skipped; true/false values become bare flags or are dropped.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string file;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            file = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (file.empty()) return args;
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open config file " + file);
    auto given = [&](const std::string& flag) {
        for (const std::string& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    auto trim = [](std::string x) {
        const auto b = x.find_first_not_of(" \t\r");
        const auto e = x.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
    };
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(file + ":" + std::to_string(line_no) + ": expected key=value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        const std::string flag = "--" + key;
        if (given(flag)) continue;
        if (value == "true") {
            args.push_back(flag);
        } else if (value != "false") {
            args.push_back(flag);
            args.push_back(value);
        }
    }
    return args;
}

GaussianPrior prior_from(const LoggedDataset& data, double sigma0) {
    if (!data.logger_params()) throw std::invalid_argument("the dataset has no logging policy parameters (prior mean)");
    return {data.logger_params()->weights, sigma0};
}

PolicyClass policy_class_from(const std::string& s) {
    if (s == "lig") return PolicyClass::lig;
    if (s == "mixed_logit") return PolicyClass::mixed_logit;
    throw std::invalid_argument("unknown policy class: " + s);
}

void print_certificate(const Certificate& c) {
    std::printf("GR %.6f  logging risk %.6f  GI %.6f  %s\n", c.guaranteed_risk, c.logging_risk,
                c.guaranteed_improvement, to_string(c.verdict).c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Certified off-policy learning for contextual bandits"};
    app.require_subcommand(1);

    // make-synth
    Shared synth_s;
    std::size_t synth_n = 20000, synth_test_n = 10000;
    int synth_k = 10, synth_p = 20;
    std::uint64_t label_seed = 0;
    bool multilabel = false;
    auto* synth = app.add_subcommand("make-synth", "Write synthetic train/test label files");
    add_shared(synth, synth_s);
    synth->add_option("--n", synth_n, "Training examples")->capture_default_str();
    synth->add_option("--test-n", synth_test_n, "Test examples")->capture_default_str();
    synth->add_option("--K", synth_k, "Actions")->capture_default_str();
    synth->add_option("--p", synth_p, "Feature dimension")->capture_default_str();
    synth->add_option("--label-seed", label_seed, "Seed of the hidden labelling rule")->capture_default_str();
    synth->add_flag("--multilabel", multilabel, "Add extra labels with probability 0.1");

    // train-logger
    Shared tl_s;
    std::string tl_input;
    double tl_fraction = 0.05;
    LoggerTrainingSettings tl;
    auto* train_logger = app.add_subcommand("train-logger", "Fit the softmax logging policy on a holdout split");
    add_shared(train_logger, tl_s);
    train_logger->add_option("--input", tl_input, "Labelled file")->required();
    train_logger->add_option("--holdout-fraction", tl_fraction, "Fraction used to fit the logger")
        ->capture_default_str();
    train_logger->add_option("--l2", tl.l2, "L2 penalty")->capture_default_str();
    train_logger->add_option("--logger-lr", tl.lr, "Adam learning rate")->capture_default_str();
    train_logger->add_option("--logger-epochs", tl.epochs, "Epochs")->capture_default_str();

    // convert
    Shared conv_s;
    std::string conv_input, conv_logger;
    double conv_alpha = 1.0;
    int conv_m = 1;
    auto* convert = app.add_subcommand("convert", "Log bandit feedback from labelled data");
    add_shared(convert, conv_s);
    convert->add_option("--input", conv_input, "Labelled file")->required();
    convert->add_option("--logger", conv_logger, "Logging policy file")->required();
    convert->add_option("--alpha", conv_alpha, "Inverse temperature")->capture_default_str();
    convert->add_option("--m", conv_m, "Interactions per context")->capture_default_str();

    // optimize
    Shared opt_s;
    std::string opt_data;
    OptimSettings optim;
    double prior_sigma = 1.0;
    std::string policy_class = "lig";
    auto* optimize = app.add_subcommand("optimize", "Minimise a bound and certify the result");
    add_shared(optimize, opt_s);
    optimize->add_option("--data", opt_data, "Logged dataset")->required();
    optimize->add_option("--batch-size", optim.batch_size, "Contexts per step")->capture_default_str();
    optimize->add_option("--mc-select", optim.mc_select, "Draws for per-epoch selection")->capture_default_str();
    optimize->add_option("--prior-sigma", prior_sigma, "Prior scale")->capture_default_str();
    optimize->add_option("--policy-class", policy_class, "lig | mixed_logit")
        ->check(CLI::IsMember({"lig", "mixed_logit"}))
        ->capture_default_str();

    // certify
    Shared cert_s;
    std::string cert_data, cert_policy;
    double cert_prior_sigma = 1.0;
    auto* certify_cmd = app.add_subcommand("certify", "Certificate for a stored policy");
    add_shared(certify_cmd, cert_s);
    certify_cmd->add_option("--data", cert_data, "Logged dataset")->required();
    certify_cmd->add_option("--policy", cert_policy, "Policy file")->required();
    certify_cmd->add_option("--prior-sigma", cert_prior_sigma, "Prior scale")->capture_default_str();

    // evaluate
    Shared eval_s;
    std::string eval_policy, eval_test;
    auto* evaluate = app.add_subcommand("evaluate", "True risk of a stored policy on labelled data");
    add_shared(evaluate, eval_s);
    evaluate->add_option("--policy", eval_policy, "Policy file")->required();
    evaluate->add_option("--test", eval_test, "Labelled file")->required();

    // coverage
    Shared cov_s;
    CoverageConfig cov;
    auto* coverage = app.add_subcommand("coverage", "Violation rate of a bound on a finite-pool environment");
    add_shared(coverage, cov_s);
    coverage->add_option("--trials", cov.trials, "Independent datasets")->capture_default_str();
    coverage->add_option("--n", cov.n, "Records per dataset")->capture_default_str();
    coverage->add_option("--pool", cov.pool_size, "Context pool size")->capture_default_str();
    coverage->add_option("--K", cov.num_actions, "Actions")->capture_default_str();
    coverage->add_option("--p", cov.feature_dim, "Feature dimension")->capture_default_str();

    // sweep
    Shared sw_s;
    ExperimentConfig sweep_cfg;
    std::vector<std::string> sweep_bounds{"cbb"};
    std::string train_file, test_file;
    auto* sweep = app.add_subcommand("sweep", "Run an experiment grid and write reports");
    add_shared(sweep, sw_s);
    sweep->add_option("--alphas", sweep_cfg.alphas, "Inverse temperatures")->delimiter(',')->capture_default_str();
    sweep->add_option("--bounds", sweep_bounds, "Bound kinds")->delimiter(',')->capture_default_str();
    sweep->add_option("--xis", sweep_cfg.xis, "cbb control variates")->delimiter(',')->capture_default_str();
    sweep->add_option("--ms", sweep_cfg.ms, "Interactions per context")->delimiter(',')->capture_default_str();
    sweep->add_option("--seeds", sweep_cfg.seeds, "Seeds")->delimiter(',')->capture_default_str();
    sweep->add_option("--n", sweep_cfg.num_examples, "Training examples")->capture_default_str();
    sweep->add_option("--test-n", sweep_cfg.test_examples, "Test examples")->capture_default_str();
    sweep->add_option("--K", sweep_cfg.num_actions, "Actions")->capture_default_str();
    sweep->add_option("--p", sweep_cfg.feature_dim, "Feature dimension")->capture_default_str();
    sweep->add_option("--label-seed", sweep_cfg.label_rule_seed, "Seed of the hidden labelling rule")
        ->capture_default_str();
    sweep->add_flag("--multilabel", sweep_cfg.multilabel, "Multilabel synthetic data");
    sweep->add_option("--train-file", train_file, "Labelled training file (instead of synthetic)");
    sweep->add_option("--test-file", test_file, "Labelled test file");
    sweep->add_option("--batch-size", sweep_cfg.optim.batch_size, "Contexts per step")->capture_default_str();
    sweep->add_option("--mc-select", sweep_cfg.optim.mc_select, "Draws for per-epoch selection")
        ->capture_default_str();

    std::vector<std::string> args(argv, argv + argc);
    try {
        args = expand_config(std::move(args));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::vector<char*> cargs;
    for (std::string& a : args) cargs.push_back(a.data());
    CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());

    try {
        if (*synth) {
            const fs::path dir = out_dir(synth_s);
            const SyntheticOptions opts{multilabel, 0.1};
            write_labeled(make_synthetic(synth_n, synth_k, synth_p, label_seed, synth_s.seed, opts), dir / "train.jsonl");
            write_labeled(make_synthetic(synth_test_n, synth_k, synth_p, label_seed,
                                         derive_seed(synth_s.seed, {stream::evaluation}), opts),
                          dir / "test.jsonl");
            std::printf("wrote %s and %s\n", (dir / "train.jsonl").c_str(), (dir / "test.jsonl").c_str());
        } else if (*train_logger) {
            const fs::path dir = out_dir(tl_s);
            const LabeledDataset all = read_labeled(tl_input);
            auto [holdout, rest] = split_holdout(all, tl_fraction, tl_s.seed);
            tl.seed = derive_seed(tl_s.seed, {stream::logger_training});
            write_policy(stored(train_logging_policy(holdout, tl)), dir / "logger.json");
            write_labeled(rest, dir / "logging_split.jsonl");
            std::printf("logger fitted on %zu examples; %zu left for logging\n", holdout.size(), rest.size());
        } else if (*convert) {
            const fs::path dir = out_dir(conv_s);
            const StoredPolicy logger = read_policy(conv_logger);
            const LoggedDataset data = convert_supervised(read_labeled(conv_input), logger.as_softmax(), conv_alpha,
                                                          conv_m, conv_s.seed);
            write_dataset(data, dir / "logged.jsonl");
            std::printf("logged %zu records on %zu contexts; mean cost %.6f\n", data.size(), data.num_contexts(),
                        estimate_logging_risk(data));
        } else if (*optimize) {
            const fs::path dir = out_dir(opt_s);
            const LoggedDataset data = read_dataset(opt_data);
            const GaussianPrior prior = prior_from(data, prior_sigma);
            const BoundSettings bs = bound_settings(opt_s, data.num_actions());
            optim.epochs = opt_s.epochs;
            optim.lr = opt_s.lr;
            optim.mc_train = opt_s.mc_train;
            optim.seed = derive_seed(opt_s.seed, {stream::optimizer});
            optim.cls = policy_class_from(policy_class);
            const McSettings mc = eval_mc(opt_s);
            const MinimizeResult result = minimize_bound(data, prior, bs, optim, mc);

            Certificate cert = make_certificate(result.report, estimate_logging_risk(data));
            cert.policy_ref = policy_ref(result.policy);
            cert.settings = {{"bound", to_json(bs)},
                             {"mc", to_json(mc)},
                             {"optim", to_json(optim)},
                             {"prior_sigma", prior_sigma},
                             {"policy_class", policy_class},
                             {"master_seed", opt_s.seed}};
            cert.run_id = cert.policy_ref;
            write_policy(stored(result.policy, optim.cls), dir / "policy.json");
            write_json(to_json(cert), dir / "certificate.json");
            std::ofstream traj(dir / "trajectory.csv");
            traj << "epoch,bound,kl,sigma,mean_objective\n";
            for (const TrajectoryPoint& t : result.trajectory)
                traj << t.epoch << ',' << format_double(t.bound) << ',' << format_double(t.kl) << ','
                     << format_double(t.sigma) << ',' << format_double(t.mean_objective) << '\n';
            if (result.aborted) std::fprintf(stderr, "warning: stopped early: %s\n", result.abort_reason.c_str());
            std::printf("best epoch %d, initial bound %.6f\n", result.best_epoch, result.initial_bound);
            print_certificate(cert);
        } else if (*certify_cmd) {
            const fs::path dir = out_dir(cert_s);
            const LoggedDataset data = read_dataset(cert_data);
            const StoredPolicy policy = read_policy(cert_policy);
            const PolicyClass cls = policy.kind == PolicyKind::mixed_logit ? PolicyClass::mixed_logit : PolicyClass::lig;
            const Certificate cert = certify(policy.as_lig(), data, prior_from(data, cert_prior_sigma),
                                             bound_settings(cert_s, data.num_actions()), eval_mc(cert_s), cls);
            write_json(to_json(cert), dir / "certificate.json");
            print_certificate(cert);
        } else if (*evaluate) {
            const fs::path dir = out_dir(eval_s);
            const StoredPolicy policy = read_policy(eval_policy);
            const LabeledDataset test = read_labeled(eval_test);
            double risk = 0.0;
            if (policy.kind == PolicyKind::softmax) {
                risk = true_risk_labeled(policy.as_softmax(), test);
            } else {
                const PolicyClass cls =
                    policy.kind == PolicyKind::mixed_logit ? PolicyClass::mixed_logit : PolicyClass::lig;
                risk = true_risk_labeled(policy.as_lig(), test, eval_mc(eval_s), cls);
            }
            write_json({{"true_risk", risk}, {"examples", test.size()}, {"policy", to_string(policy.kind)}},
                       dir / "evaluation.json");
            std::printf("true risk %.6f on %zu examples\n", risk, test.size());
        } else if (*coverage) {
            const fs::path dir = out_dir(cov_s);
            cov.bound.kind = bound_kind_from_string(cov_s.bound);
            cov.bound.delta = cov_s.delta;
            cov.bound.xi = cov_s.xi;
            cov.bound.tau = resolve_tau(parse_tau(cov_s.tau), cov.num_actions);
            cov.mc_samples = cov_s.mc_eval;
            cov.seed = cov_s.seed;
            const CoverageReport rep = coverage_check(cov);
            write_json(to_json(rep), dir / "coverage.json");
            std::printf("%s: %d violations in %d trials (rate %.4f, allowed %.4f)\n", to_string(rep.kind).c_str(),
                        rep.violations, rep.trials, rep.rate, rep.allowed_rate);
        } else if (*sweep) {
            sweep_cfg.bounds.clear();
            for (const std::string& b : sweep_bounds) sweep_cfg.bounds.push_back(bound_kind_from_string(b));
            if (!train_file.empty()) sweep_cfg.train_file = train_file;
            if (!test_file.empty()) sweep_cfg.test_file = test_file;
            sweep_cfg.tau = parse_tau(sw_s.tau);
            sweep_cfg.delta = sw_s.delta;
            sweep_cfg.optim.epochs = sw_s.epochs;
            sweep_cfg.optim.lr = sw_s.lr;
            sweep_cfg.optim.mc_train = sw_s.mc_train;
            sweep_cfg.mc_eval = sw_s.mc_eval;
            sweep_cfg.out_dir = sw_s.out;
            const ExperimentResult res = run_experiment(sweep_cfg);
            int failed = 0;
            for (const ReportRow& r : res.rows) failed += r.error.empty() ? 0 : 1;
            std::printf("%zu cells written to %s (%d with errors)\n", res.rows.size(), sw_s.out.c_str(), failed);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
