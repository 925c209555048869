#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "banditcert/learn.hpp"

using namespace banditcert;

namespace {

BoundSettings settings(BoundKind kind, double tau, double xi = 0.0) {
    BoundSettings s;
    s.kind = kind;
    s.tau = tau;
    s.xi = xi;
    return s;
}

LoggedDataset logged(std::size_t n, int k, int p, std::uint64_t seed, int m = 1, double alpha = 1.0) {
    const LabeledDataset d = make_synthetic(n, k, p, seed, seed + 1);
    std::mt19937_64 rng(seed + 2);
    std::normal_distribution<double> n01;
    SoftmaxParams logger{Matrix(k, p)};
    for (Eigen::Index i = 0; i < logger.weights.size(); ++i) logger.weights.data()[i] = n01(rng);
    return convert_supervised(d, logger, alpha, m, seed + 3);
}

OptimSettings quick(int epochs, std::uint64_t seed = 1) {
    OptimSettings o;
    o.epochs = epochs;
    o.batch_size = 64;
    o.lr = 1e-2;
    o.seed = seed;
    o.mc_train = 16;
    o.mc_select = 32;
    return o;
}

}  // namespace

TEST_CASE("adam") {
    OptimSettings s;
    std::vector<double> theta{0.5, -2.0};
    AdamState st;
    const std::vector<double> ones{1.0, 1.0};
    adam_step(theta, ones, st, s);
    CHECK(st.step == 1);
    // m_hat = v_hat = 1
    CHECK(theta[0] == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(theta[1] == doctest::Approx(-2.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));

    const std::vector<double> zeros{0.0, 0.0};
    const double m_before = st.m[0];
    const double v_before = st.v[0];
    std::vector<double> frozen{1.0, 2.0};
    AdamState fresh;
    adam_step(frozen, zeros, fresh, s);
    CHECK(frozen == std::vector<double>{1.0, 2.0});
    const std::vector<double> moved = theta;
    adam_step(theta, zeros, st, s);
    CHECK(st.m[0] == doctest::Approx(0.9 * m_before));
    CHECK(st.v[0] == doctest::Approx(0.999 * v_before));
    CHECK(theta[0] < moved[0]);  // momentum keeps moving

    std::vector<double> wrong{1.0};
    CHECK_THROWS(adam_step(wrong, ones, st, s));
}

TEST_CASE("flat parameter layout") {
    LigParams q{Matrix(2, 3), 0.7};
    q.mu << 1, 2, 3, 4, 5, 6;
    const auto theta = flatten(q, 2.5);
    REQUIRE(theta.size() == 8);
    CHECK(theta[1] == 2.0);
    CHECK(theta[3] == 4.0);
    CHECK(theta[6] == doctest::Approx(std::log(0.7)));
    CHECK(theta[7] == doctest::Approx(std::log(2.5)));
    const LigParams back = unflatten(theta, 2, 3);
    CHECK(back.mu == q.mu);
    CHECK(back.sigma == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("objective gradient matches finite differences") {
    struct Case {
        BoundKind kind;
        double xi;
        int m;
    };
    const Case cases[] = {{BoundKind::cbb, -0.5, 1}, {BoundKind::cbb, 0.0, 2}, {BoundKind::ls, 0.0, 1},
                          {BoundKind::catoni, 0.0, 1}};
    std::mt19937_64 rng(42);
    std::normal_distribution<double> n01;
    for (const Case& c : cases) {
        const LoggedDataset d = logged(5 / c.m, 3, 4, 9, c.m);
        const GaussianPrior prior{d.logger_params()->weights, 1.0};
        BoundObjective obj(d, prior, settings(c.kind, 1.0 / 3.0, c.xi));
        std::vector<std::size_t> all(obj.num_contexts());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        const NormalDraws draws = NormalDraws::generate({32, 5, true}, 1);

        LigParams q{prior.mu0, 0.8};
        for (Eigen::Index i = 0; i < q.mu.size(); ++i) q.mu.data()[i] += 0.3 * n01(rng);
        std::vector<double> theta =
            flatten(q, c.kind == BoundKind::catoni ? std::optional<double>(2.0) : std::nullopt);
        REQUIRE(theta.size() == obj.num_params());
        std::vector<double> grad(theta.size());
        obj.evaluate(theta, all, draws, grad);

        for (int dir = 0; dir < 10; ++dir) {
            std::vector<double> v(theta.size());
            for (double& x : v) x = n01(rng);
            const double h = 1e-5;
            std::vector<double> up = theta, dn = theta;
            for (std::size_t j = 0; j < v.size(); ++j) {
                up[j] += h * v[j];
                dn[j] -= h * v[j];
            }
            const double fd = (obj.evaluate(up, all, draws, {}) - obj.evaluate(dn, all, draws, {})) / (2 * h);
            double analytic = 0.0;
            for (std::size_t j = 0; j < v.size(); ++j) analytic += grad[j] * v[j];
            CHECK(std::abs(analytic - fd) <= 1e-2 * std::abs(fd) + 1e-8);
        }
    }
}

TEST_CASE("objective equals the reported bound at full data") {
    const LoggedDataset d = logged(80, 3, 4, 3);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    const BoundSettings s = settings(BoundKind::cbb, 1.0 / 3.0, -0.5);
    BoundObjective obj(d, prior, s);
    std::vector<std::size_t> all(obj.num_contexts());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const McSettings mc{64, 3, true};
    const LigParams q{prior.mu0 * 1.2, 0.9};
    const double v = obj.evaluate(flatten(q), all, NormalDraws::generate(mc, 1), {});
    CHECK(v == doctest::Approx(evaluate_bound(q, d, prior, s, mc).bound_value).epsilon(1e-12));
}

TEST_CASE("zero epochs returns the prior") {
    const LoggedDataset d = logged(100, 3, 4, 5);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    const MinimizeResult r =
        minimize_bound(d, prior, settings(BoundKind::cbb, 1.0 / 3.0, -0.5), quick(0), {256, 1, true});
    CHECK(r.policy.mu == prior.mu0);
    CHECK(r.policy.sigma == 1.0);
    CHECK(r.best_epoch == 0);
    CHECK(r.trajectory.size() == 1);
    CHECK(std::isfinite(r.report.bound_value));
    CHECK(r.report.kl == 0.0);
    CHECK(r.report.bound_value == r.initial_bound);
}

TEST_CASE("training never ships a worse bound and is repeatable") {
    const LoggedDataset d = logged(400, 3, 4, 7);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    for (BoundKind kind : {BoundKind::cbb, BoundKind::ls, BoundKind::catoni}) {
        const BoundSettings s = settings(kind, 1.0 / 3.0, kind == BoundKind::cbb ? -0.5 : 0.0);
        const MinimizeResult a = minimize_bound(d, prior, s, quick(6), {256, 1, true});
        CHECK(!a.aborted);
        CHECK(a.trajectory.size() == 7);
        CHECK(a.report.bound_value <= a.initial_bound);
        const MinimizeResult b = minimize_bound(d, prior, s, quick(6), {256, 1, true});
        CHECK(a.policy.mu == b.policy.mu);
        CHECK(a.policy.sigma == b.policy.sigma);
        for (std::size_t i = 0; i < a.trajectory.size(); ++i) CHECK(a.trajectory[i].bound == b.trajectory[i].bound);
    }
}

TEST_CASE("heavy KL weight pins the policy to the prior") {
    const LoggedDataset d = logged(400, 3, 4, 8);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    OptimSettings o = quick(5);
    o.lr = 1e-3;
    o.kl_weight = 1e6;
    const MinimizeResult r = minimize_bound(d, prior, settings(BoundKind::cbb, 1.0 / 3.0, -0.5), o, {128, 1, true});
    CHECK((r.policy.mu - prior.mu0).cwiseAbs().maxCoeff() <= 1e-2);
}

TEST_CASE("trainable mask") {
    const LoggedDataset d = logged(200, 3, 4, 2);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    OptimSettings o = quick(4);
    o.trainable.assign(13, false);
    o.trainable[12] = true;  // log sigma only
    const MinimizeResult r = minimize_bound(d, prior, settings(BoundKind::cbb, 1.0 / 3.0, -0.5), o, {128, 1, true});
    CHECK(r.policy.mu == prior.mu0);
    o.trainable.assign(3, true);
    CHECK_THROWS(minimize_bound(d, prior, settings(BoundKind::cbb, 1.0 / 3.0), o, {128, 1, true}));
}

TEST_CASE("certificates") {
    BoundReport r;
    r.bound_value = -0.55;
    const Certificate c = make_certificate(r, -0.4);
    CHECK(c.guaranteed_improvement == doctest::Approx(0.15).epsilon(1e-14));
    CHECK(c.guaranteed_improvement == c.logging_risk - c.guaranteed_risk);
    CHECK(c.verdict == Verdict::deploy);
    CHECK(to_string(c.verdict) == "DEPLOY");

    r.bound_value = -0.4;
    CHECK(make_certificate(r, -0.4).verdict == Verdict::keep_logging);
    r.bound_value = -0.1;
    CHECK(to_string(make_certificate(r, -0.4).verdict) == "KEEP_LOGGING");

    const LoggedDataset d = logged(150, 3, 4, 4);
    const GaussianPrior prior{d.logger_params()->weights, 1.0};
    const LigParams q{prior.mu0 * 1.5, 0.9};
    const BoundSettings s = settings(BoundKind::cbb, 1.0 / 3.0, -0.5);
    const McSettings mc{128, 2, true};
    const Certificate cert = certify(q, d, prior, s, mc);
    CHECK(cert.guaranteed_risk == evaluate_bound(q, d, prior, s, mc).bound_value);
    CHECK(cert.logging_risk == estimate_logging_risk(d));
    CHECK(cert.guaranteed_improvement == cert.logging_risk - cert.guaranteed_risk);
    CHECK(cert.policy_ref.size() == 16);
    CHECK(cert.policy_ref == policy_ref(q));
    CHECK(policy_ref(LigParams{q.mu, 0.91}) != cert.policy_ref);
    CHECK(cert.bound_report.mc_samples == 128);

    const auto j = to_json(cert);
    for (const char* key : {"guaranteed_risk", "logging_risk", "guaranteed_improvement", "verdict", "bound_report",
                            "policy_ref", "run_id", "settings"})
        CHECK(j.contains(key));
    CHECK(to_json(OptimSettings{})["batch_size"] == 256);
}

TEST_CASE("optimiser settings") {
    const OptimSettings d;
    CHECK(d.lr == 1e-3);
    CHECK(d.epochs == 100);
    CHECK(d.batch_size == 256);
    CHECK(d.beta1 == 0.9);
    CHECK(d.beta2 == 0.999);
    CHECK(d.eps_adam == 1e-8);
    OptimSettings bad;
    bad.lr = 0.0;
    CHECK_THROWS(validate(bad));
    bad = OptimSettings{};
    bad.batch_size = 0;
    CHECK_THROWS(validate(bad));
}
