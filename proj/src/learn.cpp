#include "banditcert/learn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "banditcert/random.hpp"

namespace banditcert {

void validate(const OptimSettings& s) {
    if (!(s.lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (s.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (s.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(s.beta1 >= 0.0 && s.beta1 < 1.0) || !(s.beta2 >= 0.0 && s.beta2 < 1.0))
        throw std::invalid_argument("Adam betas must be in [0, 1)");
    if (!(s.eps_adam > 0.0)) throw std::invalid_argument("eps_adam must be > 0");
    if (s.mc_train < 1 || s.mc_select < 1) throw std::invalid_argument("sample counts must be >= 1");
    if (!(s.kl_weight > 0.0)) throw std::invalid_argument("kl_weight must be > 0");
}

void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
               const OptimSettings& s) {
    if (grads.size() != params.size()) throw std::invalid_argument("adam_step: size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state size mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = s.beta1 * state.m[i] + (1.0 - s.beta1) * grads[i];
        state.v[i] = s.beta2 * state.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        params[i] -= s.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + s.eps_adam);
    }
}

std::vector<double> flatten(const LigParams& params, std::optional<double> catoni_lambda) {
    validate(params);
    std::vector<double> theta(params.mu.data(), params.mu.data() + params.mu.size());
    theta.push_back(std::log(params.sigma));
    if (catoni_lambda) theta.push_back(std::log(*catoni_lambda));
    return theta;
}

LigParams unflatten(std::span<const double> theta, int k, int p) {
    const auto d = static_cast<std::size_t>(k) * static_cast<std::size_t>(p);
    if (theta.size() < d + 1) throw std::invalid_argument("unflatten: parameter vector too short");
    LigParams out;
    out.mu = Eigen::Map<const Matrix>(theta.data(), k, p);
    out.sigma = std::exp(theta[d]);
    return out;
}

// ---------------------------------------------------------------------------

BoundObjective::BoundObjective(const LoggedDataset& data, const GaussianPrior& prior, const BoundSettings& settings,
                               PolicyClass cls, double kl_weight)
    : table_(data), prior_(prior), settings_(settings), cls_(cls), kl_weight_(kl_weight),
      kernel_(cls, data.num_actions()) {
    validate(settings_);
    validate(prior_);
    if (prior_.mu0.rows() != data.num_actions() || prior_.mu0.cols() != data.feature_dim())
        throw std::invalid_argument("prior dimensions do not match the data");
    const double tau = settings_.tau;
    const double xi = settings_.kind == BoundKind::cbb ? settings_.xi : 0.0;
    const std::size_t nc = table_.num_contexts();
    const int k = table_.num_actions();

    if (settings_.kind == BoundKind::cbb) {
        if (!table_.has_logger()) throw std::invalid_argument("CBB needs the logging policy parameters");
        grid_ = lambda_grid(static_cast<double>(table_.num_records()), settings_);
        bias_coef_.resize(static_cast<Eigen::Index>(nc), k);
        second_coef_.resize(static_cast<Eigen::Index>(nc), k);
        std::map<int, int> classes;
        for (std::size_t i = 0; i < nc; ++i) classes.emplace(table_.multiplicity(i), 0);
        for (auto& [m, idx] : classes) {
            idx = static_cast<int>(class_m_.size());
            class_m_.push_back(m);
        }
        class_of_.resize(nc);
        for (std::size_t i = 0; i < nc; ++i) {
            class_of_[i] = classes.at(table_.multiplicity(i));
            const auto pi0 = table_.logger_probs(i);
            for (int a = 0; a < k; ++a) {
                const double clipped = std::max(pi0[a], tau);
                const auto r = static_cast<Eigen::Index>(i);
                bias_coef_(r, a) = pi0[a] < tau ? 1.0 - pi0[a] / tau : 0.0;
                second_coef_(r, a) = pi0[a] / (clipped * clipped);
            }
        }
    } else {
        for (std::size_t i = 0; i < nc; ++i)
            if (table_.multiplicity(i) != 1)
                throw std::invalid_argument(to_string(settings_.kind) + " bound needs i.i.d. records");
    }
    for (std::size_t i = 0; i < nc; ++i) {
        const double m = table_.multiplicity(i);
        for (const Interaction& it : table_.interactions(i))
            record_coef_.push_back((it.cost - xi) / (m * std::max(it.propensity, tau)));
    }
}

std::size_t BoundObjective::num_params() const {
    return static_cast<std::size_t>(table_.num_actions() * table_.feature_dim()) + 1 +
           (settings_.kind == BoundKind::catoni ? 1 : 0);
}

double BoundObjective::evaluate(std::span<const double> theta, std::span<const std::size_t> contexts,
                                const NormalDraws& draws, std::span<double> grad) {
    if (theta.size() != num_params()) throw std::invalid_argument("objective: wrong parameter count");
    if (contexts.empty()) throw std::invalid_argument("objective: empty batch");
    const bool want_grad = !grad.empty();
    if (want_grad && grad.size() != num_params()) throw std::invalid_argument("objective: wrong gradient size");

    const int k = table_.num_actions();
    const auto ks = static_cast<std::size_t>(k);
    const LigParams policy = unflatten(theta, k, table_.feature_dim());
    const std::size_t nb = contexts.size();
    const double inv_b = 1.0 / static_cast<double>(nb);
    const double nc = static_cast<double>(table_.num_contexts());
    const bool cbb = settings_.kind == BoundKind::cbb;
    const double xi = cbb ? settings_.xi : 0.0;

    std::vector<std::size_t> first_record(nb);
    probs_.resize(static_cast<Eigen::Index>(nb), k);
    raw_.resize(nb);
    Vector scores(k);

    double risk = 0.0;
    double bias = 0.0;
    std::vector<double> class_sums(class_m_.size(), 0.0);
    for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t i = contexts[b];
        if (i >= table_.num_contexts()) throw std::out_of_range("objective: context index");
        scores.noalias() = policy.mu * table_.features(i).transpose();
        double* row = probs_.data() + b * ks;
        raw_[b] = kernel_.probabilities({scores.data(), ks}, policy.sigma * table_.feature_norm(i), draws, {row, ks});
        const auto inter = table_.interactions(i);
        const std::size_t off = static_cast<std::size_t>(inter.data() - table_.interactions(0).data());
        first_record[b] = off;
        for (std::size_t j = 0; j < inter.size(); ++j) risk += row[inter[j].action] * record_coef_[off + j];
        if (cbb) {
            const auto r = static_cast<Eigen::Index>(i);
            double bi = 0.0;
            double vi = 0.0;
            for (int a = 0; a < k; ++a) {
                bi += row[a] * bias_coef_(r, a);
                vi += row[a] * second_coef_(r, a);
            }
            bias += bi;
            class_sums[static_cast<std::size_t>(class_of_[i])] += vi;
        }
    }
    risk = xi + risk * inv_b;
    bias *= inv_b;
    for (double& s : class_sums) s *= nc * inv_b;

    const double kl = kl_weight_ * gaussian_kl(policy, prior_);
    BoundPartials partials;
    if (settings_.kind == BoundKind::ls) {
        partials = ls_partials(risk, kl, static_cast<double>(table_.num_records()), settings_);
    } else if (settings_.kind == BoundKind::catoni) {
        partials = catoni_partials(risk, kl, static_cast<double>(table_.num_records()), settings_,
                                   std::exp(theta.back()));
    } else {
        CbbMultiMoments mm;
        mm.risk = risk;
        mm.bias = bias;
        for (std::size_t c = 0; c < class_m_.size(); ++c) mm.classes.push_back({class_m_[c], class_sums[c]});
        mm.kl = kl;
        mm.n_contexts = nc;
        mm.n_records = static_cast<double>(table_.num_records());
        partials = cbb_multi_partials(mm, settings_, grid_);
    }
    if (!want_grad) return partials.value;

    std::fill(grad.begin(), grad.end(), 0.0);
    Eigen::Map<Matrix> d_mu(grad.data(), k, table_.feature_dim());
    double d_log_sigma = 0.0;
    std::vector<double> adjoint(ks);
    Vector d_scores(k);
    for (std::size_t b = 0; b < nb; ++b) {
        const std::size_t i = contexts[b];
        std::fill(adjoint.begin(), adjoint.end(), 0.0);
        const auto inter = table_.interactions(i);
        for (std::size_t j = 0; j < inter.size(); ++j)
            adjoint[static_cast<std::size_t>(inter[j].action)] +=
                partials.d_risk * inv_b * record_coef_[first_record[b] + j];
        if (cbb) {
            const auto r = static_cast<Eigen::Index>(i);
            const double dv = partials.d_class_sum[static_cast<std::size_t>(class_of_[i])] * nc * inv_b;
            for (int a = 0; a < k; ++a)
                adjoint[static_cast<std::size_t>(a)] +=
                    partials.d_bias * inv_b * bias_coef_(r, a) + dv * second_coef_(r, a);
        }
        scores.noalias() = policy.mu * table_.features(i).transpose();
        d_scores.setZero();
        d_log_sigma += kernel_.backward({scores.data(), ks}, policy.sigma * table_.feature_norm(i), draws,
                                        {probs_.data() + b * ks, ks}, raw_[b], adjoint, {d_scores.data(), ks});
        d_mu.noalias() += d_scores * table_.features(i);
    }
    const KlGradient kg = gaussian_kl_grad(policy, prior_);
    const double dk = partials.d_kl * kl_weight_;
    d_mu += dk * kg.d_mu;
    const std::size_t d = static_cast<std::size_t>(d_mu.size());
    grad[d] = d_log_sigma + dk * kg.d_log_sigma;
    if (settings_.kind == BoundKind::catoni) grad[d + 1] = partials.d_log_lambda;
    return partials.value;
}

// ---------------------------------------------------------------------------

namespace {

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

BoundReport full_report(const LigParams& policy, const ContextTable& table, const GaussianPrior& prior,
                        const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    const Matrix probs = policy_probabilities(policy, table, mc, cls);
    BoundReport r = evaluate_bound(probs, table, gaussian_kl(policy, prior), settings);
    r.mc_samples = mc.num_samples;
    return r;
}

}  // namespace

MinimizeResult minimize_bound(const LoggedDataset& data, const GaussianPrior& prior, const BoundSettings& settings,
                              const OptimSettings& optim, const McSettings& mc) {
    validate(optim);
    validate(mc);
    BoundObjective objective(data, prior, settings, optim.cls, optim.kl_weight);
    const ContextTable& table = objective.table();
    const int k = data.num_actions();
    const int p = data.feature_dim();
    const McSettings select_mc{optim.mc_select, derive_seed(optim.seed, {stream::selection}), true};

    LigParams current{prior.mu0, prior.sigma0};
    MinimizeResult result;
    BoundReport init_select = full_report(current, table, prior, settings, select_mc, optim.cls);
    result.trajectory.push_back({0, init_select.bound_value, init_select.kl, current.sigma,
                                 std::numeric_limits<double>::quiet_NaN()});

    std::optional<double> lambda0;
    if (settings.kind == BoundKind::catoni) lambda0 = init_select.chosen_lambda.value_or(1.0);
    std::vector<double> theta = flatten(current, lambda0);
    if (!optim.trainable.empty() && optim.trainable.size() != theta.size())
        throw std::invalid_argument("trainable mask must have one entry per parameter");

    double best_value = init_select.bound_value;
    LigParams best = current;
    AdamState adam;
    std::vector<double> grad(theta.size());
    std::vector<std::size_t> order(table.num_contexts());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(optim.batch_size);
    long step = 0;

    for (int epoch = 1; epoch <= optim.epochs && !result.aborted; ++epoch) {
        Rng shuffle_rng = make_rng(optim.seed, {stream::optimizer, static_cast<std::uint64_t>(epoch)});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double objective_sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            const McSettings step_mc{optim.mc_train,
                                     derive_seed(optim.seed, {stream::optimizer, 0, static_cast<std::uint64_t>(step)}),
                                     true};
            ++step;
            const NormalDraws draws = NormalDraws::generate(step_mc, draw_dimension(optim.cls, k));
            double value = 0.0;
            try {
                value = objective.evaluate(theta, {order.data() + start, stop - start}, draws, grad);
            } catch (const std::exception& e) {
                result.aborted = true;
                result.abort_reason = e.what();
                break;
            }
            if (!std::isfinite(value) || !all_finite(grad)) {
                result.aborted = true;
                result.abort_reason = "non-finite objective or gradient";
                break;
            }
            if (!optim.trainable.empty())
                for (std::size_t j = 0; j < grad.size(); ++j)
                    if (!optim.trainable[j]) grad[j] = 0.0;
            adam_step(theta, grad, adam, optim);
            objective_sum += value;
            ++steps;
        }
        if (result.aborted) break;
        current = unflatten(theta, k, p);
        BoundReport r;
        try {
            r = full_report(current, table, prior, settings, select_mc, optim.cls);
        } catch (const std::exception& e) {
            result.aborted = true;
            result.abort_reason = e.what();
            break;
        }
        if (!std::isfinite(r.bound_value)) {
            result.aborted = true;
            result.abort_reason = "non-finite full-data bound";
            break;
        }
        result.trajectory.push_back({epoch, r.bound_value, r.kl, current.sigma, objective_sum / std::max(steps, 1)});
        if (r.bound_value < best_value) {
            best_value = r.bound_value;
            best = current;
            result.best_epoch = epoch;
        }
    }

    // Final numbers use the evaluation draws; the prior policy is kept if
    // the selected one does not beat it there.
    const LigParams initial{prior.mu0, prior.sigma0};
    const BoundReport init_eval = full_report(initial, table, prior, settings, mc, optim.cls);
    result.initial_bound = init_eval.bound_value;
    if (result.best_epoch == 0) {
        result.policy = initial;
        result.report = init_eval;
    } else {
        BoundReport best_eval = full_report(best, table, prior, settings, mc, optim.cls);
        if (best_eval.bound_value <= init_eval.bound_value) {
            result.policy = best;
            result.report = best_eval;
        } else {
            result.policy = initial;
            result.report = init_eval;
            result.best_epoch = 0;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

std::string to_string(Verdict v) { return v == Verdict::deploy ? "DEPLOY" : "KEEP_LOGGING"; }

Certificate make_certificate(const BoundReport& report, double logging_risk) {
    Certificate c;
    c.guaranteed_risk = report.bound_value;
    c.logging_risk = logging_risk;
    c.guaranteed_improvement = logging_risk - report.bound_value;
    c.verdict = c.guaranteed_improvement > 0.0 ? Verdict::deploy : Verdict::keep_logging;
    c.bound_report = report;
    return c;
}

namespace {

std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* c = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= c[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace

std::string policy_ref(const LigParams& policy) {
    const int dims[2] = {policy.num_actions(), policy.feature_dim()};
    std::uint64_t h = fnv1a(dims, sizeof dims);
    h = fnv1a(policy.mu.data(), sizeof(double) * static_cast<std::size_t>(policy.mu.size()), h);
    h = fnv1a(&policy.sigma, sizeof(double), h);
    return hex16(h);
}

Certificate certify(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                    const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    if (data.size() == 0) throw std::invalid_argument("certify: empty dataset");
    const BoundReport report = evaluate_bound(policy, data, prior, settings, mc, cls);
    Certificate c = make_certificate(report, estimate_logging_risk(data));
    c.policy_ref = policy_ref(policy);
    c.settings = {{"bound", to_json(settings)},
                  {"mc", to_json(mc)},
                  {"policy_class", cls == PolicyClass::lig ? "lig" : "mixed_logit"}};
    const std::string blob = c.policy_ref + c.settings.dump() + std::to_string(data.size());
    c.run_id = hex16(fnv1a(blob.data(), blob.size()));
    return c;
}

nlohmann::json to_json(const Certificate& c) {
    return {{"guaranteed_risk", c.guaranteed_risk},
            {"logging_risk", c.logging_risk},
            {"guaranteed_improvement", c.guaranteed_improvement},
            {"verdict", to_string(c.verdict)},
            {"bound_report", to_json(c.bound_report)},
            {"policy_ref", c.policy_ref},
            {"run_id", c.run_id},
            {"settings", c.settings}};
}

nlohmann::json to_json(const OptimSettings& s) {
    return {{"lr", s.lr},
            {"epochs", s.epochs},
            {"batch_size", s.batch_size},
            {"beta1", s.beta1},
            {"beta2", s.beta2},
            {"eps_adam", s.eps_adam},
            {"seed", s.seed},
            {"mc_train", s.mc_train},
            {"mc_select", s.mc_select},
            {"kl_weight", s.kl_weight}};
}

nlohmann::json to_json(const BoundSettings& s) {
    return {{"kind", to_string(s.kind)}, {"tau", s.tau}, {"delta", s.delta}, {"xi", s.xi}, {"n_lambda", s.n_lambda}};
}

nlohmann::json to_json(const McSettings& s) {
    return {{"num_samples", s.num_samples}, {"seed", s.seed}, {"antithetic", s.antithetic}};
}

}  // namespace banditcert
