#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "banditcert/bounds.hpp"
#include "banditcert/data.hpp"
#include "banditcert/estimators.hpp"
#include "banditcert/params.hpp"
#include "banditcert/policies.hpp"
#include "json.hpp"

namespace banditcert {

struct OptimSettings {
    double lr = 1e-3;
    int epochs = 100;
    int batch_size = 256;  // contexts per step
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::uint64_t seed = 0;
    int mc_train = 32;    // draws per step, shared by the whole minibatch
    int mc_select = 32;   // draws for the per-epoch full-data bound
    double kl_weight = 1.0;
    PolicyClass cls = PolicyClass::lig;
    // Empty means every parameter is trained. Otherwise one flag per entry
    // of the flat parameter vector.
    std::vector<bool> trainable;
};

void validate(const OptimSettings& settings);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

// One bias-corrected Adam update; increments state.step.
void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state,
               const OptimSettings& settings);

// Flat layout: mu row-major, then log sigma, then log lambda for Catoni.
std::vector<double> flatten(const LigParams& params, std::optional<double> catoni_lambda = std::nullopt);
LigParams unflatten(std::span<const double> theta, int num_actions, int feature_dim);

// Differentiable bound estimate on a subset of contexts. Moment estimates
// from the subset are plugged into the bound with the full-data sizes.
class BoundObjective {
public:
    BoundObjective(const LoggedDataset& data, const GaussianPrior& prior, const BoundSettings& settings,
                   PolicyClass cls = PolicyClass::lig, double kl_weight = 1.0);

    std::size_t num_params() const;
    std::size_t num_contexts() const { return table_.num_contexts(); }
    const ContextTable& table() const { return table_; }
    const LambdaGrid& grid() const { return grid_; }

    // Fills `grad` when non-empty (must have num_params() entries).
    double evaluate(std::span<const double> theta, std::span<const std::size_t> contexts, const NormalDraws& draws,
                    std::span<double> grad);

private:
    ContextTable table_;
    GaussianPrior prior_;
    BoundSettings settings_;
    PolicyClass cls_;
    double kl_weight_;
    LambdaGrid grid_;
    Matrix bias_coef_;
    Matrix second_coef_;
    std::vector<double> record_coef_;
    std::vector<int> class_of_;
    std::vector<int> class_m_;
    PropensityKernel kernel_;
    Matrix probs_;
    std::vector<double> raw_;
};

struct TrajectoryPoint {
    int epoch = 0;
    double bound = 0.0;  // full data, mc_select draws
    double kl = 0.0;
    double sigma = 0.0;
    double mean_objective = 0.0;  // average minibatch objective over the epoch (NaN at epoch 0)
};

struct MinimizeResult {
    LigParams policy;
    BoundReport report;  // best policy, evaluation draws
    std::vector<TrajectoryPoint> trajectory;
    int best_epoch = 0;
    double initial_bound = 0.0;  // prior policy, evaluation draws
    bool aborted = false;
    std::string abort_reason;
};

// Starts at the prior (mu = mu0, sigma = sigma0) and returns the parameters
// with the lowest full-data bound seen. `mc` gives the evaluation draws.
MinimizeResult minimize_bound(const LoggedDataset& data, const GaussianPrior& prior, const BoundSettings& settings,
                              const OptimSettings& optim, const McSettings& mc);

enum class Verdict { deploy, keep_logging };

std::string to_string(Verdict verdict);

struct Certificate {
    double guaranteed_risk = 0.0;
    double logging_risk = 0.0;
    double guaranteed_improvement = 0.0;
    Verdict verdict = Verdict::keep_logging;
    BoundReport bound_report;
    std::string policy_ref;
    std::string run_id;
    nlohmann::json settings;
};

Certificate make_certificate(const BoundReport& report, double logging_risk);

Certificate certify(const LigParams& policy, const LoggedDataset& data, const GaussianPrior& prior,
                    const BoundSettings& settings, const McSettings& mc, PolicyClass cls = PolicyClass::lig);

// 16 hex digits of FNV-1a over the parameters.
std::string policy_ref(const LigParams& policy);

nlohmann::json to_json(const Certificate& certificate);
nlohmann::json to_json(const OptimSettings& settings);
nlohmann::json to_json(const BoundSettings& settings);
nlohmann::json to_json(const McSettings& settings);

}  // namespace banditcert
