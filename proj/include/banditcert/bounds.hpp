#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "banditcert/data.hpp"
#include "banditcert/estimators.hpp"
#include "banditcert/params.hpp"
#include "banditcert/policies.hpp"
#include "json.hpp"

namespace banditcert {

enum class BoundKind { ls, catoni, cbb };

std::string to_string(BoundKind kind);
BoundKind bound_kind_from_string(const std::string& s);

struct BoundSettings {
    double tau = 0.1;
    double delta = 0.05;
    double xi = 0.0;  // CBB only
    int n_lambda = 100;
    BoundKind kind = BoundKind::cbb;
};

void validate(const BoundSettings& settings);

// (exp(u) - 1 - u) / u^2, continuous at 0.
double g_fn(double u);

// KL(N(mu, sigma^2 I) || N(mu0, sigma0^2 I)).
double gaussian_kl(const LigParams& q, const GaussianPrior& prior);

struct KlGradient {
    Matrix d_mu;
    double d_log_sigma = 0.0;
};
KlGradient gaussian_kl_grad(const LigParams& q, const GaussianPrior& prior);

double ls_bound(double empirical_cips, double kl, double n, const BoundSettings& settings);

// Catoni-type objective at a fixed lambda > 0.
double catoni_objective(double empirical_cips, double kl, double n, double tau, double delta, double lambda);

struct CatoniResult {
    double value = 0.0;
    double lambda = 0.0;
};

// Minimises catoni_objective over lambda in [1e-6, 50].
CatoniResult catoni_bound(double empirical_cips, double kl, double n, const BoundSettings& settings);

inline double l_xi(double xi) { return std::max(xi * xi, (1.0 + xi) * (1.0 + xi)); }
inline double b_xi(double xi, double tau) { return (1.0 + xi) / tau - xi; }

struct LambdaGrid {
    std::vector<double> values;
};

// Evenly spaced grid on [a, b], a = sqrt(2 n tau ln(1/delta) / (5 l_xi)),
// b = 2n / b_xi, in the parametrisation where lambda multiplies the
// per-sample sum (log-spaced on [1e-3 b, b] when a is not below b).
LambdaGrid lambda_grid(double n, const BoundSettings& settings);

struct BoundReport {
    BoundKind kind = BoundKind::cbb;
    double bound_value = 0.0;
    double empirical_term = 0.0;  // cIPS for LS/Catoni, cvcIPS for CBB
    double kl = 0.0;
    std::optional<double> chosen_lambda;  // Catoni lambda; CBB lambda per sample (main-text scale)
    std::optional<double> bias;           // B
    std::optional<double> bias_term;      // -xi * B
    std::optional<double> second_moment;  // V (context average)
    std::optional<double> variance_term;  // minimised lambda bracket
    std::optional<double> confidence_term;
    std::vector<double> lambda_grid;  // internal (summed) parametrisation
    std::size_t n_records = 0;
    std::size_t n_contexts = 0;
    double tau = 0.0;
    double delta = 0.0;
    double xi = 0.0;
    int mc_samples = 0;
};

nlohmann::json to_json(const BoundReport& report);

// Moment-level CBB forms.

struct CbbMoments {
    double risk = 0.0;           // cvcIPS
    double bias = 0.0;           // B, context average
    double second_moment = 0.0;  // V, context average
    double kl = 0.0;
    double n = 0.0;
};

// Main-text display: min over lambda in grid/n of
// (KL + ln(2 n_L / delta)) / (lambda n) + lambda l_xi g(lambda b_xi) V.
BoundReport cbb_from_moments(const CbbMoments& moments, const BoundSettings& settings);

struct MultiplicityClass {
    int m = 1;
    double second_moment_sum = 0.0;  // sum of V^i over contexts logged m times
};

struct CbbMultiMoments {
    double risk = 0.0;
    double bias = 0.0;
    std::vector<MultiplicityClass> classes;
    double kl = 0.0;
    double n_contexts = 0.0;
    double n_records = 0.0;
};

// Multiple-interactions display with lambda in the summed parametrisation.
BoundReport cbb_multi_from_moments(const CbbMultiMoments& moments, const BoundSettings& settings);

// Differentiable pieces for learning. Each returns the bound and its partial
// derivatives with respect to the empirical inputs.
struct BoundPartials {
    double value = 0.0;
    double d_risk = 0.0;
    double d_bias = 0.0;
    double d_kl = 0.0;
    std::vector<double> d_class_sum;  // CBB: per multiplicity class
    double d_log_lambda = 0.0;        // Catoni at a fixed lambda
    double lambda = 0.0;
};

BoundPartials ls_partials(double empirical_cips, double kl, double n, const BoundSettings& settings);
BoundPartials catoni_partials(double empirical_cips, double kl, double n, const BoundSettings& settings,
                              double lambda);
// Lambda chosen on the grid, then held fixed.
BoundPartials cbb_multi_partials(const CbbMultiMoments& moments, const BoundSettings& settings,
                                 const LambdaGrid& grid);

// Policy-level evaluation. LS and Catoni need i.i.d. records; CBB switches to
// the multiple-interactions form for grouped data.
BoundReport ls_report(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                      const BoundSettings& settings, const McSettings& mc, PolicyClass cls = PolicyClass::lig);
BoundReport catoni_report(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                          const BoundSettings& settings, const McSettings& mc, PolicyClass cls = PolicyClass::lig);
BoundReport cbb_bound(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                      const BoundSettings& settings, const McSettings& mc, PolicyClass cls = PolicyClass::lig);
BoundReport cbb_bound_multi(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                            const BoundSettings& settings, const McSettings& mc,
                            PolicyClass cls = PolicyClass::lig);
BoundReport evaluate_bound(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                           const BoundSettings& settings, const McSettings& mc, PolicyClass cls = PolicyClass::lig);

// Same, from precomputed policy probabilities (one row per context).
BoundReport evaluate_bound(const Matrix& probs, const ContextTable& table, double kl, const BoundSettings& settings);

}  // namespace banditcert
