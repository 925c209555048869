#include "banditcert/bounds.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace banditcert {

std::string to_string(BoundKind kind) {
    switch (kind) {
        case BoundKind::ls: return "ls";
        case BoundKind::catoni: return "catoni";
        case BoundKind::cbb: return "cbb";
    }
    return "unknown";
}

BoundKind bound_kind_from_string(const std::string& s) {
    if (s == "ls") return BoundKind::ls;
    if (s == "catoni") return BoundKind::catoni;
    if (s == "cbb") return BoundKind::cbb;
    throw std::invalid_argument("unknown bound kind: " + s);
}

void validate(const BoundSettings& s) {
    if (!(s.tau > 0.0 && s.tau <= 1.0)) throw std::invalid_argument("tau must be in (0, 1]");
    if (!(s.delta > 0.0 && s.delta <= 1.0)) throw std::invalid_argument("delta must be in (0, 1]");
    if (!(s.xi >= -1.0 && s.xi <= 0.0)) throw std::invalid_argument("xi must be in [-1, 0]");
    if (s.n_lambda < 2) throw std::invalid_argument("n_lambda must be >= 2");
}

double g_fn(double u) {
    if (!(u >= 0.0)) throw std::domain_error("g is defined for u >= 0");
    if (u > 1e-6) return (std::expm1(u) - u) / (u * u);
    return 0.5 + u * (1.0 / 6.0 + u * (1.0 / 24.0 + u / 120.0));
}

namespace {

// Any shape: the divergence does not care how the d coordinates are laid out.
void check_kl_dims(const LigParams& q, const GaussianPrior& prior) {
    if (!(q.sigma > 0.0 && std::isfinite(q.sigma)) || !(prior.sigma0 > 0.0 && std::isfinite(prior.sigma0)))
        throw std::invalid_argument("KL: scales must be positive and finite");
    if (!q.mu.allFinite() || !prior.mu0.allFinite()) throw std::invalid_argument("KL: non-finite means");
    if (q.mu.rows() != prior.mu0.rows() || q.mu.cols() != prior.mu0.cols())
        throw std::invalid_argument("KL: posterior and prior dimensions differ");
}

}  // namespace

double gaussian_kl(const LigParams& q, const GaussianPrior& prior) {
    check_kl_dims(q, prior);
    const double d = static_cast<double>(q.mu.size());
    const double s2 = prior.sigma0 * prior.sigma0;
    const double ratio = q.sigma / prior.sigma0;
    return (q.mu - prior.mu0).squaredNorm() / (2.0 * s2) + d * (0.5 * ratio * ratio - std::log(ratio) - 0.5);
}

KlGradient gaussian_kl_grad(const LigParams& q, const GaussianPrior& prior) {
    check_kl_dims(q, prior);
    const double d = static_cast<double>(q.mu.size());
    const double s2 = prior.sigma0 * prior.sigma0;
    return {(q.mu - prior.mu0) / s2, d * (q.sigma * q.sigma / s2 - 1.0)};
}

// ---------------------------------------------------------------------------
// LS and Catoni.

namespace {

void check_inputs(double kl, double n) {
    if (!(kl >= 0.0) || !std::isfinite(kl)) throw std::invalid_argument("KL must be finite and >= 0");
    if (!(n >= 1.0)) throw std::invalid_argument("n must be >= 1");
}

// KL + ln(2 sqrt(n) / delta)
double complexity(double kl, double n, double delta) { return kl + std::log(2.0 * std::sqrt(n) / delta); }

}  // namespace

BoundPartials ls_partials(double r, double kl, double n, const BoundSettings& s) {
    validate(s);
    check_inputs(kl, n);
    const double c = complexity(kl, n, s.delta);
    const double tn = s.tau * n;
    double radicand = 2.0 * (r + 1.0 / s.tau) * c / tn;
    if (radicand < 0.0) {
        if (radicand < -1e-12) throw std::domain_error("LS bound: negative radicand (empirical risk below -1/tau)");
        radicand = 0.0;
    }
    const double root = std::sqrt(radicand);
    BoundPartials out;
    out.value = r + 2.0 * c / tn + root;
    if (root > 0.0) {
        out.d_risk = 1.0 + c / (tn * root);
        out.d_kl = 2.0 / tn + (r + 1.0 / s.tau) / (tn * root);
    } else {
        out.d_risk = 1.0;
        out.d_kl = 2.0 / tn;
    }
    return out;
}

double ls_bound(double empirical_cips, double kl, double n, const BoundSettings& settings) {
    return ls_partials(empirical_cips, kl, n, settings).value;
}

double catoni_objective(double r, double kl, double n, double tau, double delta, double lambda) {
    if (!(lambda > 0.0)) throw std::invalid_argument("Catoni lambda must be > 0");
    const double exponent = -tau * lambda * r - complexity(kl, n, delta) / n;
    const double value = -std::expm1(exponent) / (tau * std::expm1(lambda));
    if (!std::isfinite(value)) throw std::domain_error("Catoni objective is not finite");
    return value;
}

BoundPartials catoni_partials(double r, double kl, double n, const BoundSettings& s, double lambda) {
    validate(s);
    check_inputs(kl, n);
    const double c = complexity(kl, n, s.delta);
    const double e = std::exp(-s.tau * lambda * r - c / n);
    const double num = 1.0 - e;
    const double den = s.tau * std::expm1(lambda);
    BoundPartials out;
    out.lambda = lambda;
    out.value = catoni_objective(r, kl, n, s.tau, s.delta, lambda);
    out.d_risk = lambda * e / std::expm1(lambda);
    out.d_kl = e / (n * den);
    const double d_lambda = (s.tau * r * e * den - num * s.tau * std::exp(lambda)) / (den * den);
    out.d_log_lambda = lambda * d_lambda;
    return out;
}

CatoniResult catoni_bound(double r, double kl, double n, const BoundSettings& s) {
    validate(s);
    check_inputs(kl, n);
    constexpr double lo = 1e-6;
    constexpr double hi = 50.0;
    constexpr int scan = 200;
    auto f = [&](double lambda) { return catoni_objective(r, kl, n, s.tau, s.delta, lambda); };

    std::vector<double> grid(scan);
    const double step = std::log(hi / lo) / (scan - 1);
    int best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (int i = 0; i < scan; ++i) {
        grid[i] = lo * std::exp(step * i);
        const double v = f(grid[i]);
        if (v < best_value) {
            best_value = v;
            best = i;
        }
    }

    double a = grid[std::max(best - 1, 0)];
    double b = grid[std::min(best + 1, scan - 1)];
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - inv_phi * (b - a);
    double x2 = a + inv_phi * (b - a);
    double f1 = f(x1);
    double f2 = f(x2);
    while (b - a > 1e-6) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    CatoniResult out{best_value, grid[best]};
    const double mid = 0.5 * (a + b);
    for (double x : {x1, x2, mid}) {
        const double v = f(x);
        if (v < out.value) out = {v, x};
    }
    return out;
}

// ---------------------------------------------------------------------------
// CBB.

LambdaGrid lambda_grid(double n, const BoundSettings& s) {
    validate(s);
    if (!(n >= 1.0)) throw std::invalid_argument("lambda grid needs n >= 1");
    const double a = std::sqrt(2.0 * n * s.tau * std::log(1.0 / s.delta) / (5.0 * l_xi(s.xi)));
    const double b = 2.0 * n / b_xi(s.xi, s.tau);
    LambdaGrid grid;
    grid.values.resize(static_cast<std::size_t>(s.n_lambda));
    const int last = s.n_lambda - 1;
    if (a > 0.0 && a < b) {
        for (int i = 0; i <= last; ++i) grid.values[i] = a + (b - a) * i / last;
        grid.values[last] = b;
    } else {
        const double lo = 1e-3 * b;
        for (int i = 0; i <= last; ++i) grid.values[i] = lo * std::pow(b / lo, static_cast<double>(i) / last);
        grid.values[last] = b;
    }
    return grid;
}

namespace {

// sqrt((KL + ln(4 sqrt(n_c) / delta)) / (2 n_c))
double confidence_term(double kl, double n_contexts, double delta) {
    return std::sqrt((kl + std::log(4.0 * std::sqrt(n_contexts) / delta)) / (2.0 * n_contexts));
}

double bracket_constant(double kl, int n_lambda, double delta) { return kl + std::log(2.0 * n_lambda / delta); }

double multi_bracket(const CbbMultiMoments& m, const BoundSettings& s, double lambda) {
    const double nc = m.n_contexts;
    const double b = b_xi(s.xi, s.tau);
    double sum = 0.0;
    for (const MultiplicityClass& c : m.classes) {
        const double scale = 1.0 / (c.m * nc);
        sum += scale * g_fn(lambda * b * scale) * c.second_moment_sum;
    }
    return bracket_constant(m.kl, s.n_lambda, s.delta) / lambda + lambda * l_xi(s.xi) / nc * sum;
}

void check_multi(const CbbMultiMoments& m) {
    check_inputs(m.kl, std::max(m.n_contexts, 1.0));
    if (!(m.n_contexts >= 1.0)) throw std::invalid_argument("CBB needs at least one context");
    if (m.classes.empty()) throw std::invalid_argument("CBB needs at least one multiplicity class");
}

}  // namespace

BoundReport cbb_from_moments(const CbbMoments& m, const BoundSettings& s) {
    validate(s);
    check_inputs(m.kl, m.n);
    const LambdaGrid grid = lambda_grid(m.n, s);
    const double lx = l_xi(s.xi);
    const double bx = b_xi(s.xi, s.tau);
    const double c = bracket_constant(m.kl, s.n_lambda, s.delta);
    double best = std::numeric_limits<double>::infinity();
    double best_lambda = 0.0;
    for (double internal : grid.values) {
        const double lambda = internal / m.n;
        const double bracket = c / (lambda * m.n) + lambda * lx * g_fn(lambda * bx) * m.second_moment;
        if (bracket < best) {
            best = bracket;
            best_lambda = lambda;
        }
    }
    if (!std::isfinite(best)) throw std::domain_error("CBB bracket is not finite");

    BoundReport r;
    r.kind = BoundKind::cbb;
    r.empirical_term = m.risk;
    r.kl = m.kl;
    r.bias = m.bias;
    r.bias_term = -s.xi * m.bias;
    r.second_moment = m.second_moment;
    r.confidence_term = confidence_term(m.kl, m.n, s.delta);
    r.variance_term = best;
    r.chosen_lambda = best_lambda;
    r.lambda_grid = grid.values;
    r.bound_value = m.risk + *r.bias_term + *r.confidence_term + best;
    r.n_records = static_cast<std::size_t>(m.n);
    r.n_contexts = static_cast<std::size_t>(m.n);
    r.tau = s.tau;
    r.delta = s.delta;
    r.xi = s.xi;
    return r;
}

BoundPartials cbb_multi_partials(const CbbMultiMoments& m, const BoundSettings& s, const LambdaGrid& grid) {
    validate(s);
    check_multi(m);
    double best = std::numeric_limits<double>::infinity();
    double best_lambda = 0.0;
    for (double lambda : grid.values) {
        const double v = multi_bracket(m, s, lambda);
        if (v < best) {
            best = v;
            best_lambda = lambda;
        }
    }
    if (!std::isfinite(best)) throw std::domain_error("CBB bracket is not finite");

    const double conf = confidence_term(m.kl, m.n_contexts, s.delta);
    BoundPartials out;
    out.lambda = best_lambda;
    out.value = m.risk - s.xi * m.bias + conf + best;
    out.d_risk = 1.0;
    out.d_bias = -s.xi;
    out.d_kl = 1.0 / (4.0 * m.n_contexts * conf) + 1.0 / best_lambda;
    const double b = b_xi(s.xi, s.tau);
    const double lx = l_xi(s.xi);
    for (const MultiplicityClass& c : m.classes) {
        const double scale = 1.0 / (c.m * m.n_contexts);
        out.d_class_sum.push_back(best_lambda * lx / m.n_contexts * scale * g_fn(best_lambda * b * scale));
    }
    return out;
}

BoundReport cbb_multi_from_moments(const CbbMultiMoments& m, const BoundSettings& s) {
    check_multi(m);
    const LambdaGrid grid = lambda_grid(m.n_records, s);
    const BoundPartials p = cbb_multi_partials(m, s, grid);
    double v_sum = 0.0;
    for (const MultiplicityClass& c : m.classes) v_sum += c.second_moment_sum;

    BoundReport r;
    r.kind = BoundKind::cbb;
    r.bound_value = p.value;
    r.empirical_term = m.risk;
    r.kl = m.kl;
    r.bias = m.bias;
    r.bias_term = -s.xi * m.bias;
    r.second_moment = v_sum / m.n_contexts;
    r.confidence_term = confidence_term(m.kl, m.n_contexts, s.delta);
    r.variance_term = multi_bracket(m, s, p.lambda);
    r.chosen_lambda = p.lambda / m.n_records;
    r.lambda_grid = grid.values;
    r.n_records = static_cast<std::size_t>(m.n_records);
    r.n_contexts = static_cast<std::size_t>(m.n_contexts);
    r.tau = s.tau;
    r.delta = s.delta;
    r.xi = s.xi;
    return r;
}

// ---------------------------------------------------------------------------
// Policy-level evaluation.

namespace {

bool all_single(const ContextTable& table) {
    for (std::size_t i = 0; i < table.num_contexts(); ++i)
        if (table.multiplicity(i) != 1) return false;
    return true;
}

double clipped_risk(const Matrix& probs, const ContextTable& table, double tau, double xi) {
    double total = 0.0;
    for (std::size_t i = 0; i < table.num_contexts(); ++i) {
        double inner = 0.0;
        for (const Interaction& it : table.interactions(i))
            inner += probs(static_cast<Eigen::Index>(i), it.action) / std::max(it.propensity, tau) * (it.cost - xi);
        total += inner / table.multiplicity(i);
    }
    return xi + total / static_cast<double>(table.num_contexts());
}

CbbMultiMoments multi_moments(const Matrix& probs, const ContextTable& table, double kl, const BoundSettings& s) {
    CbbMultiMoments m;
    m.risk = clipped_risk(probs, table, s.tau, s.xi);
    m.bias = conditional_bias(probs, table, s.tau);
    const std::vector<double> v = context_second_moments(probs, table, s.tau);
    std::map<int, double> sums;
    for (std::size_t i = 0; i < v.size(); ++i) sums[table.multiplicity(i)] += v[i];
    for (const auto& [mult, sum] : sums) m.classes.push_back({mult, sum});
    m.kl = kl;
    m.n_contexts = static_cast<double>(table.num_contexts());
    m.n_records = static_cast<double>(table.num_records());
    return m;
}

BoundReport iid_report(BoundKind kind, const Matrix& probs, const ContextTable& table, double kl,
                       const BoundSettings& s) {
    if (!all_single(table))
        throw std::invalid_argument(to_string(kind) + " bound needs i.i.d. records (one interaction per context)");
    const double n = static_cast<double>(table.num_records());
    BoundReport r;
    r.kind = kind;
    r.empirical_term = clipped_risk(probs, table, s.tau, 0.0);
    r.kl = kl;
    if (kind == BoundKind::ls) {
        r.bound_value = ls_bound(r.empirical_term, kl, n, s);
    } else {
        const CatoniResult c = catoni_bound(r.empirical_term, kl, n, s);
        r.bound_value = c.value;
        r.chosen_lambda = c.lambda;
    }
    r.confidence_term = r.bound_value - r.empirical_term;
    r.n_records = table.num_records();
    r.n_contexts = table.num_contexts();
    r.tau = s.tau;
    r.delta = s.delta;
    r.xi = 0.0;
    return r;
}

}  // namespace

BoundReport evaluate_bound(const Matrix& probs, const ContextTable& table, double kl, const BoundSettings& s) {
    validate(s);
    switch (s.kind) {
        case BoundKind::ls:
        case BoundKind::catoni: return iid_report(s.kind, probs, table, kl, s);
        case BoundKind::cbb:
            if (!table.has_logger()) throw std::invalid_argument("CBB needs the logging policy parameters");
            if (all_single(table)) {
                const CbbMultiMoments mm = multi_moments(probs, table, kl, s);
                return cbb_from_moments({mm.risk, mm.bias, mm.classes.front().second_moment_sum / mm.n_contexts, kl,
                                         mm.n_records},
                                        s);
            }
            return cbb_multi_from_moments(multi_moments(probs, table, kl, s), s);
    }
    throw std::logic_error("unknown bound kind");
}

namespace {

BoundReport policy_report(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                          const BoundSettings& s, const McSettings& mc, PolicyClass cls, bool force_multi) {
    validate(s);
    const ContextTable table(data);
    const Matrix probs = policy_probabilities(policy, table, mc, cls);
    const double kl = gaussian_kl(policy, prior);
    BoundReport r;
    if (force_multi) {
        if (!table.has_logger()) throw std::invalid_argument("CBB needs the logging policy parameters");
        r = cbb_multi_from_moments(multi_moments(probs, table, kl, s), s);
    } else {
        r = evaluate_bound(probs, table, kl, s);
    }
    r.mc_samples = mc.num_samples;
    return r;
}

BoundSettings with_kind(BoundSettings s, BoundKind kind) {
    s.kind = kind;
    return s;
}

}  // namespace

BoundReport ls_report(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                      const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    return policy_report(policy, data, prior, with_kind(settings, BoundKind::ls), mc, cls, false);
}

BoundReport catoni_report(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                          const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    return policy_report(policy, data, prior, with_kind(settings, BoundKind::catoni), mc, cls, false);
}

BoundReport cbb_bound(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                      const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    for (const ContextGroup& g : data.context_groups())
        if (g.size() != 1) throw std::invalid_argument("cbb_bound needs i.i.d. records; use cbb_bound_multi");
    return policy_report(policy, data, prior, with_kind(settings, BoundKind::cbb), mc, cls, false);
}

BoundReport cbb_bound_multi(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                            const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    if (!data.grouped()) throw std::invalid_argument("cbb_bound_multi needs grouped data");
    return policy_report(policy, data, prior, with_kind(settings, BoundKind::cbb), mc, cls, true);
}

BoundReport evaluate_bound(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                           const BoundSettings& settings, const McSettings& mc, PolicyClass cls) {
    return policy_report(policy, data, prior, settings, mc, cls, false);
}

nlohmann::json to_json(const BoundReport& r) {
    nlohmann::json j{{"kind", to_string(r.kind)},
                     {"bound_value", r.bound_value},
                     {"empirical_term", r.empirical_term},
                     {"kl", r.kl},
                     {"n_records", r.n_records},
                     {"n_contexts", r.n_contexts},
                     {"tau", r.tau},
                     {"delta", r.delta},
                     {"xi", r.xi},
                     {"mc_samples", r.mc_samples},
                     {"lambda_grid", r.lambda_grid}};
    auto opt = [&](const char* key, const std::optional<double>& v) {
        j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    opt("chosen_lambda", r.chosen_lambda);
    opt("bias", r.bias);
    opt("bias_term", r.bias_term);
    opt("second_moment", r.second_moment);
    opt("variance_term", r.variance_term);
    opt("confidence_term", r.confidence_term);
    return j;
}

}  // namespace banditcert
