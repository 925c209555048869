#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "banditcert/bounds.hpp"
#include "oracles.hpp"

using namespace banditcert;

namespace {

BoundSettings settings(double tau, double delta, double xi = 0.0, BoundKind kind = BoundKind::cbb) {
    BoundSettings s;
    s.tau = tau;
    s.delta = delta;
    s.xi = xi;
    s.kind = kind;
    return s;
}

struct Tuple {
    double r, kl, n, tau, delta;
};

Tuple random_tuple(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tuple t;
    t.tau = 0.01 + 0.99 * u(rng);
    t.delta = 0.001 + 0.5 * u(rng);
    t.n = std::floor(std::exp(std::log(10.0) + (std::log(1e6) - std::log(10.0)) * u(rng)));
    t.kl = u(rng) < 0.1 ? 0.0 : 1000.0 * std::pow(u(rng), 3);
    t.r = -u(rng) / t.tau;
    return t;
}

LoggedDataset small_logged(std::size_t n, int k, int p, std::uint64_t seed, int m = 1, double alpha = 1.0) {
    const LabeledDataset d = make_synthetic(n, k, p, seed, seed + 1);
    std::mt19937_64 rng(seed + 2);
    std::normal_distribution<double> n01;
    SoftmaxParams logger{Matrix(k, p)};
    for (Eigen::Index i = 0; i < logger.weights.size(); ++i) logger.weights.data()[i] = n01(rng);
    return convert_supervised(d, logger, alpha, m, seed + 3);
}

LoggedDataset strip_groups(const LoggedDataset& d) {
    std::vector<LoggedRecord> recs(d.records().begin(), d.records().end());
    for (auto& r : recs) r.group_id.reset();
    return LoggedDataset(d.num_actions(), d.feature_dim(), recs, d.logger_params());
}

LoggedDataset singleton_groups(const LoggedDataset& d) {
    std::vector<LoggedRecord> recs(d.records().begin(), d.records().end());
    for (std::size_t i = 0; i < recs.size(); ++i) recs[i].group_id = static_cast<std::int64_t>(i);
    return LoggedDataset(d.num_actions(), d.feature_dim(), recs, d.logger_params());
}

}  // namespace

TEST_CASE("g") {
    CHECK(g_fn(0.0) == 0.5);
    CHECK(g_fn(1.0) == doctest::Approx(std::exp(1.0) - 2.0).epsilon(1e-14));
    CHECK(g_fn(2.0) == doctest::Approx(1.0973).epsilon(1e-4));
    CHECK(g_fn(2.0) <= 1.1);
    CHECK(g_fn(1e-7) == doctest::Approx(0.5 + 1e-7 / 6).epsilon(1e-14));
    // continuous across the series switch
    CHECK(std::abs(g_fn(1e-6) - g_fn(std::nextafter(1e-6, 1.0))) < 1e-9);
    CHECK_THROWS(g_fn(-0.1));

    std::vector<double> mesh;
    for (int i = 0; i <= 1000; ++i) mesh.push_back(g_fn(4.0 * i / 1000));
    for (std::size_t i = 1; i < mesh.size(); ++i) CHECK(mesh[i] > mesh[i - 1]);
    for (std::size_t i = 1; i + 1 < mesh.size(); ++i) CHECK(mesh[i + 1] - 2 * mesh[i] + mesh[i - 1] >= -1e-12);
}

TEST_CASE("gaussian kl") {
    const GaussianPrior prior{Matrix::Zero(1, 2), 1.0};
    CHECK(gaussian_kl(LigParams{Matrix::Zero(1, 2), 1.0}, prior) == 0.0);
    CHECK(gaussian_kl(LigParams{Matrix::Zero(1, 2), 0.5}, prior) == doctest::Approx(0.636294).epsilon(1e-6));
    CHECK(gaussian_kl(LigParams{Matrix::Ones(1, 1), 1.0}, GaussianPrior{Matrix::Zero(1, 1), 1.0}) == 0.5);
    CHECK_THROWS(gaussian_kl(LigParams{Matrix::Zero(1, 2), 0.0}, prior));
    CHECK_THROWS(gaussian_kl(LigParams{Matrix::Zero(2, 2), 1.0}, prior));

    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 20; ++t) {
        LigParams q{Matrix(3, 4), std::exp(0.5 * n01(rng))};
        GaussianPrior p{Matrix(3, 4), std::exp(0.5 * n01(rng))};
        for (Eigen::Index i = 0; i < 12; ++i) {
            q.mu.data()[i] = n01(rng);
            p.mu0.data()[i] = n01(rng);
        }
        const double kl = gaussian_kl(q, p);
        CHECK(kl == doctest::Approx(oracle::kl_isotropic((q.mu - p.mu0).squaredNorm(), 12, q.sigma, p.sigma0)));
        CHECK(kl > 0.0);
        const KlGradient g = gaussian_kl_grad(q, p);
        const double h = 1e-6;
        LigParams up = q, dn = q;
        up.sigma *= std::exp(h);
        dn.sigma *= std::exp(-h);
        CHECK(g.d_log_sigma == doctest::Approx((gaussian_kl(up, p) - gaussian_kl(dn, p)) / (2 * h)).epsilon(1e-6));
        up = q;
        dn = q;
        up.mu(1, 2) += h;
        dn.mu(1, 2) -= h;
        CHECK(g.d_mu(1, 2) == doctest::Approx((gaussian_kl(up, p) - gaussian_kl(dn, p)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("ls bound") {
    const BoundSettings s = settings(0.1, 0.05);
    // ln(2 sqrt(100) / 0.05) = ln 400
    const double v = ls_bound(-0.5, 0.0, 100.0, s);
    CHECK(std::abs(v - 4.07236) < 1e-4);
    CHECK(v == doctest::Approx(-0.5 + 2 * std::log(400.0) / 10 + std::sqrt(2 * 9.5 * std::log(400.0) / 10)));

    // zero radicand
    CHECK(ls_bound(-10.0, 0.0, 100.0, s) == doctest::Approx(-10.0 + 2 * std::log(400.0) / 10).epsilon(1e-14));
    CHECK_THROWS(ls_bound(-10.5, 0.0, 100.0, s));

    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        const Tuple t = random_tuple(rng);
        const BoundSettings st = settings(t.tau, t.delta);
        CHECK(ls_bound(t.r, t.kl, t.n, st) == doctest::Approx(oracle::ls(t.r, t.kl, t.n, t.tau, t.delta)).epsilon(1e-12));
        CHECK(ls_bound(t.r, t.kl + 1.0, t.n, st) > ls_bound(t.r, t.kl, t.n, st));
        CHECK(ls_bound(t.r, t.kl, t.n, settings(t.tau, t.delta / 2)) > ls_bound(t.r, t.kl, t.n, st));
    }
}

TEST_CASE("catoni bound") {
    const BoundSettings s = settings(0.1, 0.05);
    const CatoniResult c = catoni_bound(-0.5, 0.0, 100.0, s);
    CHECK(c.value <= 4.07236);
    CHECK(c.value <= catoni_objective(-0.5, 0.0, 100.0, 0.1, 0.05, 1.0 / 50.0));
    CHECK(c.value == doctest::Approx(oracle::catoni_at(-0.5, 0.0, 100.0, 0.1, 0.05, c.lambda)).epsilon(1e-14));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Tuple t = random_tuple(rng);
        const BoundSettings st = settings(t.tau, t.delta);
        const CatoniResult r = catoni_bound(t.r, t.kl, t.n, st);
        // dense scan can only be lower by the golden-section tolerance
        CHECK(r.value <= oracle::catoni_scan(t.r, t.kl, t.n, t.tau, t.delta, 4000) + 1e-9);
        const double any = std::exp(std::log(1e-6) + (std::log(50.0) - std::log(1e-6)) * u(rng));
        CHECK(r.value <= catoni_objective(t.r, t.kl, t.n, t.tau, t.delta, any) + 1e-15);
        const double more_kl = catoni_bound(t.r, t.kl + 1.0, t.n, st).value;
        const double less_delta = catoni_bound(t.r, t.kl, t.n, settings(t.tau, t.delta / 2)).value;
        CHECK(more_kl >= r.value);
        CHECK(less_delta >= r.value);
        // strict unless 1 - exp(-kappa / n) has saturated to 1 in double
        if ((t.kl + std::log(2 * std::sqrt(t.n) / t.delta)) / t.n < 20.0) {
            CHECK(more_kl > r.value);
            CHECK(less_delta > r.value);
        }
    }
}

TEST_CASE("dominance over random tuples") {
    std::mt19937_64 rng(4);
    int exceptions = 0;
    for (int i = 0; i < 500; ++i) {
        const Tuple t = random_tuple(rng);
        const BoundSettings st = settings(t.tau, t.delta);
        try {
            CHECK(catoni_bound(t.r, t.kl, t.n, st).value <= ls_bound(t.r, t.kl, t.n, st) + 1e-9);
        } catch (const std::exception&) {
            ++exceptions;
        }
    }
    CHECK(exceptions == 0);
}

TEST_CASE("bound partials") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 30; ++i) {
        Tuple t = random_tuple(rng);
        t.r *= 0.9;  // keep away from the zero radicand
        const BoundSettings st = settings(t.tau, t.delta);
        const double h = 1e-6;

        const BoundPartials ls = ls_partials(t.r, t.kl, t.n, st);
        CHECK(ls.value == ls_bound(t.r, t.kl, t.n, st));
        CHECK(ls.d_risk == doctest::Approx((oracle::ls(t.r + h, t.kl, t.n, t.tau, t.delta) -
                                            oracle::ls(t.r - h, t.kl, t.n, t.tau, t.delta)) / (2 * h)).epsilon(1e-5));
        CHECK(ls.d_kl == doctest::Approx((oracle::ls(t.r, t.kl + h, t.n, t.tau, t.delta) -
                                          oracle::ls(t.r, t.kl - h, t.n, t.tau, t.delta)) / (2 * h)).epsilon(1e-5));

        const double lam = catoni_bound(t.r, t.kl, t.n, st).lambda;
        const BoundPartials c = catoni_partials(t.r, t.kl, t.n, st, lam);
        auto f = [&](double r, double kl, double l) { return oracle::catoni_at(r, kl, t.n, t.tau, t.delta, l); };
        CHECK(c.value == doctest::Approx(f(t.r, t.kl, lam)).epsilon(1e-13));
        CHECK(c.d_risk == doctest::Approx((f(t.r + h, t.kl, lam) - f(t.r - h, t.kl, lam)) / (2 * h)).epsilon(1e-5));
        CHECK(c.d_kl == doctest::Approx((f(t.r, t.kl + h, lam) - f(t.r, t.kl - h, lam)) / (2 * h)).epsilon(1e-5));
        const double dl = (f(t.r, t.kl, lam * std::exp(h)) - f(t.r, t.kl, lam * std::exp(-h))) / (2 * h);
        CHECK(std::abs(c.d_log_lambda - dl) <= 1e-5 * std::abs(f(t.r, t.kl, lam)) + 1e-9);
    }

    // CBB with lambda pinned by a one-point grid
    CbbMultiMoments m{-0.4, 0.1, {{1, 30.0}, {3, 12.0}}, 5.0, 50.0, 86.0};
    const BoundSettings s = settings(0.2, 0.05, -0.5);
    const LambdaGrid one{{37.0}};
    const BoundPartials p = cbb_multi_partials(m, s, one);
    const double h = 1e-6;
    auto value = [&](CbbMultiMoments mm) { return cbb_multi_partials(mm, s, one).value; };
    CbbMultiMoments up = m, dn = m;
    up.kl += h;
    dn.kl -= h;
    CHECK(p.d_kl == doctest::Approx((value(up) - value(dn)) / (2 * h)).epsilon(1e-6));
    for (std::size_t c = 0; c < 2; ++c) {
        up = m;
        dn = m;
        up.classes[c].second_moment_sum += h;
        dn.classes[c].second_moment_sum -= h;
        CHECK(p.d_class_sum[c] == doctest::Approx((value(up) - value(dn)) / (2 * h)).epsilon(1e-6));
    }
    CHECK(p.d_bias == 0.5);
    CHECK(p.d_risk == 1.0);
}

TEST_CASE("lambda grid") {
    const LambdaGrid g = lambda_grid(1000.0, settings(0.1, 0.05));
    REQUIRE(g.values.size() == 100);
    CHECK(g.values.back() == doctest::Approx(1000.0 / 5.0).epsilon(1e-15));
    CHECK(g.values.front() == doctest::Approx(std::sqrt(2 * 1000 * 0.1 * std::log(20.0) / 5)).epsilon(1e-15));
    for (std::size_t i = 1; i < g.values.size(); ++i)
        CHECK(g.values[i] - g.values[i - 1] == doctest::Approx((g.values.back() - g.values.front()) / 99).epsilon(1e-9));

    CHECK(l_xi(-0.5) == 0.25);
    CHECK(l_xi(-1.0) == 1.0);
    CHECK(b_xi(-1.0, 0.3) == 1.0);
    CHECK(b_xi(0.0, 0.1) == doctest::Approx(10.0));

    // a >= b: log-spaced fallback
    const LambdaGrid tiny = lambda_grid(1.0, settings(1.0, 1e-6, -1.0));
    CHECK(tiny.values.back() == doctest::Approx(2.0));
    CHECK(tiny.values.front() == doctest::Approx(2e-3));
}

TEST_CASE("cbb from moments") {
    const BoundSettings s0 = settings(0.25, 0.05, 0.0);
    CbbMoments m{-0.3, 0.2, 3.0, 4.0, 500.0};
    const BoundReport r0 = cbb_from_moments(m, s0);
    CHECK(*r0.bias_term == 0.0);

    // independent evaluation of the display, lambda over grid / n
    for (double xi : {0.0, -0.5, -1.0}) {
        const BoundSettings s = settings(0.25, 0.05, xi);
        const BoundReport r = cbb_from_moments(m, s);
        const double lx = std::max(xi * xi, (1 + xi) * (1 + xi));
        const double bx = (1 + xi) / 0.25 - xi;
        const double a = std::sqrt(2 * 500 * 0.25 * std::log(20.0) / (5 * lx));
        const double b = 2 * 500 / bx;
        double best = INFINITY;
        for (int i = 0; i < 100; ++i) {
            const double lam = (a + (b - a) * i / 99) / 500;
            best = std::min(best, (4.0 + std::log(200 / 0.05)) / (lam * 500) + lam * lx * oracle::g(lam * bx) * 3.0);
        }
        const double expect = -0.3 - xi * 0.2 + std::sqrt((4.0 + std::log(4 * std::sqrt(500.0) / 0.05)) / 1000) + best;
        CHECK(r.bound_value == doctest::Approx(expect).epsilon(1e-12));
        // minimality over the grid
        const double lo = r.lambda_grid.front() / 500, hi = r.lambda_grid.back() / 500;
        auto bracket = [&](double lam) {
            return (4.0 + std::log(200 / 0.05)) / (lam * 500) + lam * lx * oracle::g(lam * bx) * 3.0;
        };
        CHECK(*r.variance_term <= bracket(lo) + 1e-12);
        CHECK(*r.variance_term <= bracket(hi) + 1e-12);
    }

    // monotone in KL and delta
    CbbMoments more = m;
    more.kl += 1.0;
    CHECK(cbb_from_moments(more, s0).bound_value > r0.bound_value);
    CHECK(cbb_from_moments(m, settings(0.25, 0.01)).bound_value > r0.bound_value);
}

TEST_CASE("cbb on a small instance matches a component dump") {
    const LoggedDataset d = small_logged(50, 3, 4, 7);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    LigParams q{prior.mu0 * 1.1, 0.9};
    const McSettings mc{512, 7, true};
    for (double xi : {0.0, -0.5}) {
        const BoundSettings s = settings(1.0 / 3.0, 0.05, xi);
        const BoundReport r = cbb_bound(q, d, prior, s, mc);

        // re-derive each component with the estimator functions and the
        // display itself
        const ContextTable table(d);
        const Matrix probs = policy_probabilities(q, table, mc);
        const auto pi = logged_action_propensities(probs, table);
        const double risk = cvcips_risk(pi, d, s.tau, xi);
        const double bias = conditional_bias(probs, table, s.tau);
        const double v = conditional_second_moment(probs, table, s.tau);
        const double kl = gaussian_kl(q, prior);
        CHECK(r.empirical_term == doctest::Approx(risk).epsilon(1e-13));
        CHECK(*r.bias == doctest::Approx(bias).epsilon(1e-13));
        CHECK(*r.second_moment == doctest::Approx(v).epsilon(1e-13));
        CHECK(r.kl == doctest::Approx(kl).epsilon(1e-13));

        const double lx = std::max(xi * xi, (1 + xi) * (1 + xi));
        const double bx = (1 + xi) / s.tau - xi;
        double best = INFINITY;
        for (double internal : r.lambda_grid) {
            const double lam = internal / 50;
            best = std::min(best, (kl + std::log(200 / 0.05)) / (lam * 50) + lam * lx * oracle::g(lam * bx) * v);
        }
        const double expect = risk - xi * bias + std::sqrt((kl + std::log(4 * std::sqrt(50.0) / 0.05)) / 100) + best;
        CHECK(std::abs(r.bound_value - expect) < 1e-9);
        CHECK(r.mc_samples == 512);
    }
}

TEST_CASE("uniform logger puts cbb in the worst regime") {
    const LoggedDataset d = small_logged(80, 4, 3, 3, 1, 0.0);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    LigParams q{Matrix::Constant(4, 3, 0.5), 0.7};
    q.mu(0, 0) = 2.0;
    const BoundReport r = cbb_bound(q, d, prior, settings(0.25, 0.05, -0.5), {256, 1, true});
    CHECK(std::abs(*r.second_moment - 4.0) < 1e-12);
    CHECK(*r.bias == 0.0);
}

TEST_CASE("multi-interaction form") {
    const LoggedDataset d = small_logged(60, 3, 4, 11);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    const LigParams q{prior.mu0 * 0.8, 1.2};
    const McSettings mc{256, 3, true};
    for (double xi : {0.0, -0.5, -1.0}) {
        const BoundSettings s = settings(1.0 / 3.0, 0.05, xi);
        const BoundReport iid = cbb_bound(q, strip_groups(d), prior, s, mc);
        const BoundReport multi = cbb_bound_multi(q, singleton_groups(d), prior, s, mc);
        CHECK(std::abs(iid.bound_value - multi.bound_value) < 1e-9);
        CHECK(std::abs(*iid.chosen_lambda - *multi.chosen_lambda) < 1e-12);
    }
    CHECK_THROWS(cbb_bound_multi(q, strip_groups(d), prior, settings(0.3, 0.05), mc));
    CHECK_THROWS(cbb_bound(q, small_logged(20, 3, 4, 11, 2), prior, settings(0.3, 0.05), mc));
    CHECK_THROWS(ls_report(q, small_logged(20, 3, 4, 11, 2), prior, settings(0.3, 0.05), mc));

    // a single context
    const LoggedDataset single = small_logged(1, 3, 4, 2, 3);
    const BoundReport r = cbb_bound_multi(q, single, prior, settings(1.0 / 3.0, 0.05, -0.5), mc);
    CHECK(std::isfinite(r.bound_value));
    CHECK(r.n_contexts == 1);
    CHECK(r.n_records == 3);

    // m = 1 moments through both displays
    CbbMoments flat{-0.2, 0.1, 2.5, 3.0, 400.0};
    CbbMultiMoments as_multi{-0.2, 0.1, {{1, 2.5 * 400}}, 3.0, 400.0, 400.0};
    const BoundSettings s = settings(0.2, 0.05, -0.5);
    CHECK(std::abs(cbb_from_moments(flat, s).bound_value - cbb_multi_from_moments(as_multi, s).bound_value) < 1e-9);
}

TEST_CASE("policy-level reports") {
    const LoggedDataset d = small_logged(120, 3, 4, 21);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    const LigParams q{prior.mu0 * 1.3, 0.8};
    const McSettings mc{256, 5, true};
    BoundSettings s = settings(1.0 / 3.0, 0.05, 0.0, BoundKind::ls);

    const BoundReport ls = ls_report(q, d, prior, s, mc);
    const ContextTable table(d);
    const Matrix probs = policy_probabilities(q, table, mc);
    const double cips = cips_risk(logged_action_propensities(probs, table), d, s.tau);
    CHECK(ls.bound_value == doctest::Approx(oracle::ls(cips, ls.kl, 120, s.tau, 0.05)).epsilon(1e-12));
    CHECK(*ls.confidence_term == doctest::Approx(ls.bound_value - ls.empirical_term).epsilon(1e-12));

    s.kind = BoundKind::catoni;
    const BoundReport cat = catoni_report(q, d, prior, s, mc);
    CHECK(cat.bound_value <= ls.bound_value + 1e-9);
    REQUIRE(cat.chosen_lambda.has_value());
    CHECK(evaluate_bound(q, d, prior, s, mc).bound_value == cat.bound_value);
    CHECK(evaluate_bound(probs, table, cat.kl, s).bound_value == cat.bound_value);

    s.kind = BoundKind::cbb;
    const auto j = to_json(evaluate_bound(q, d, prior, s, mc));
    for (const char* key : {"bound_value", "empirical_term", "kl", "chosen_lambda", "bias", "second_moment",
                            "variance_term", "confidence_term", "lambda_grid", "mc_samples"})
        CHECK(j.contains(key));
    CHECK(j["lambda_grid"].size() == 100);

    CHECK(bound_kind_from_string("catoni") == BoundKind::catoni);
    CHECK(to_string(BoundKind::ls) == "ls");
    CHECK_THROWS(bound_kind_from_string("mcallester"));
    CHECK_THROWS(validate(settings(0.0, 0.05)));
    CHECK_THROWS(validate(settings(0.1, 0.05, 0.3)));
}
