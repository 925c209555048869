#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "banditcert/data.hpp"
#include "banditcert/params.hpp"
#include "banditcert/random.hpp"

namespace banditcert {

// ---------------------------------------------------------------------------
// Softmax (logging) policies.

// All-action probabilities, summing to one within rounding.
Vector softmax_probabilities(const SoftmaxParams& params, const Vector& features);
void softmax_probabilities(std::span<const double> scores, std::span<double> out);
double softmax_propensity(const SoftmaxParams& params, const Vector& features, int action);

struct LoggerTrainingSettings {
    double l2 = 1e-6;
    double lr = 1e-1;
    int epochs = 10;
    int batch_size = 32;
    std::uint64_t seed = 0;
};

// Multiclass logistic regression (first label is the target) fitted with Adam.
SoftmaxParams train_logging_policy(const LabeledDataset& train, const LoggerTrainingSettings& settings);

// ---------------------------------------------------------------------------
// Randomised argmax policies over linear scores.

enum class PolicyClass { lig, mixed_logit };

// Standard normal draws shared by every action and every context of one
// evaluation. Each draw is `dim` numbers; paired draws are used together
// with their negation.
class NormalDraws {
public:
    NormalDraws() = default;
    NormalDraws(int dim, std::vector<double> paired, std::vector<double> unpaired);

    static NormalDraws generate(const McSettings& mc, int dim);

    int dim() const { return dim_; }
    std::size_t num_paired() const { return paired_.size() / static_cast<std::size_t>(dim_); }
    std::size_t num_unpaired() const { return unpaired_.size() / static_cast<std::size_t>(dim_); }
    std::span<const double> paired(std::size_t i) const;
    std::span<const double> unpaired(std::size_t i) const;
    // Number of integrand evaluations, counting each pair twice.
    int total() const { return static_cast<int>(2 * num_paired() + num_unpaired()); }

private:
    int dim_ = 1;
    std::vector<double> paired_;
    std::vector<double> unpaired_;
};

int draw_dimension(PolicyClass cls, int num_actions);

// Per-context propensity machinery in score space. `scores` are phi^T mu_a,
// `noise_scale` is sigma * ||phi||. Probabilities are the Monte-Carlo
// average normalised over actions, so every returned vector sums to one.
// Not thread-safe: holds scratch buffers.
class PropensityKernel {
public:
    PropensityKernel(PolicyClass cls, int num_actions);

    // Returns the raw (pre-normalisation) sum of the action averages.
    double probabilities(std::span<const double> scores, double noise_scale, const NormalDraws& draws,
                         std::span<double> probs);

    // Reverse mode: given d(loss)/d(probs), accumulates d(loss)/d(scores)
    // into d_scores and returns d(loss)/d(log sigma).
    double backward(std::span<const double> scores, double noise_scale, const NormalDraws& draws,
                    std::span<const double> probs, double raw_sum, std::span<const double> adjoint,
                    std::span<double> d_scores);

    PolicyClass policy_class() const { return cls_; }

private:
    double lig_forward(std::span<const double> scores, double inv_scale, const NormalDraws& draws,
                       std::span<double> probs);
    double lig_backward(std::span<const double> scores, double inv_scale, const NormalDraws& draws,
                        std::span<const double> raw_adjoint, std::span<double> d_scores);
    double mixed_forward(std::span<const double> scores, double noise_scale, const NormalDraws& draws,
                         std::span<double> probs);
    double mixed_backward(std::span<const double> scores, double noise_scale, const NormalDraws& draws,
                          std::span<const double> raw_adjoint, std::span<double> d_scores);

    PolicyClass cls_;
    int k_;
    std::vector<double> cdf_;
    std::vector<double> pdf_;
    std::vector<double> prefix_;
    std::vector<double> suffix_;
    std::vector<double> pair_adjoint_;
    std::vector<double> work_;
    std::vector<double> raw_adjoint_;
};

// Draws theta ~ N(mu, sigma^2 I) and plays argmax_a phi^T theta_a (lowest
// index on ties).
int lig_sample_action(const LigParams& params, const Vector& features, Rng& rng);
int lig_sample_action(const LigParams& params, const Vector& features, std::uint64_t seed);

// G(eps, a, x) = prod_{a' != a} Phi(eps + phi^T(mu_a - mu_a') / (sigma ||phi||)),
// evaluated with the full-accuracy normal CDF.
double lig_integrand(const LigParams& params, const Vector& features, int action, double eps);

Vector lig_propensities(const LigParams& params, const Vector& features, const McSettings& mc);
double lig_propensity(const LigParams& params, const Vector& features, int action, const McSettings& mc);

struct LigGradient {
    Matrix d_mu;
    double d_sigma = 0.0;
};

// Gradient of lig_propensity under the same draws.
LigGradient lig_propensity_grad(const LigParams& params, const Vector& features, int action,
                                const McSettings& mc);

Vector mixed_logit_propensities(const LigParams& params, const Vector& features, const McSettings& mc);
double mixed_logit_propensity(const LigParams& params, const Vector& features, int action,
                              const McSettings& mc);

// Fraction of S parameter draws whose argmax is `action`.
double naive_mc_propensity(const LigParams& params, const Vector& features, int action, int num_samples,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Policy files: {"kind", "K", "p", "mu", "sigma"}.

enum class PolicyKind { softmax, lig, mixed_logit };

struct StoredPolicy {
    PolicyKind kind = PolicyKind::lig;
    Matrix mu;
    std::optional<double> sigma;

    SoftmaxParams as_softmax() const;
    LigParams as_lig() const;
};

StoredPolicy stored(const SoftmaxParams& params);
StoredPolicy stored(const LigParams& params, PolicyClass cls = PolicyClass::lig);

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

StoredPolicy read_policy(const std::filesystem::path& path);
void write_policy(const StoredPolicy& policy, const std::filesystem::path& path);

}  // namespace banditcert
