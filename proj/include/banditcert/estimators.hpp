#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "banditcert/data.hpp"
#include "banditcert/params.hpp"
#include "banditcert/policies.hpp"

namespace banditcert {

struct Interaction {
    int action = 0;
    double cost = 0.0;
    double propensity = 1.0;
};

// Context-major view of a logged dataset: one row per distinct context,
// with the logging policy's full action distribution when it is known.
class ContextTable {
public:
    explicit ContextTable(const LoggedDataset& data);

    int num_actions() const { return num_actions_; }
    int feature_dim() const { return feature_dim_; }
    std::size_t num_contexts() const { return norms_.size(); }
    std::size_t num_records() const { return interactions_.size(); }
    bool has_logger() const { return logger_probs_.size() > 0; }

    auto features(std::size_t i) const { return features_.row(static_cast<Eigen::Index>(i)); }
    double feature_norm(std::size_t i) const { return norms_[i]; }
    std::span<const double> logger_probs(std::size_t i) const;
    std::span<const Interaction> interactions(std::size_t i) const;
    int multiplicity(std::size_t i) const { return static_cast<int>(offsets_[i + 1] - offsets_[i]); }

private:
    int num_actions_;
    int feature_dim_;
    Matrix features_;
    std::vector<double> norms_;
    Matrix logger_probs_;
    std::vector<std::size_t> offsets_;
    std::vector<Interaction> interactions_;
};

// n_c x K matrix of policy probabilities, one row per context, all contexts
// sharing the same draws.
Matrix policy_probabilities(const LigParams& policy, const ContextTable& table, const McSettings& mc,
                            PolicyClass cls = PolicyClass::lig);

// Per-record propensities pi(a_i | x_i) of the logged actions.
std::vector<double> logged_action_propensities(const Matrix& probs, const ContextTable& table);

// Clipped IPS: mean over contexts of the mean over that context's records of
// pi / max(pi0, tau) * c.
double cips_risk(std::span<const double> policy_propensities, const LoggedDataset& data, double tau);

// Control-variate clipped IPS: xi + mean of pi / max(pi0, tau) * (c - xi).
double cvcips_risk(std::span<const double> policy_propensities, const LoggedDataset& data, double tau, double xi);

// Expectations under the policy of 1[pi0 < tau](1 - pi0/tau) and
// pi0 / max(pi0, tau)^2, averaged over contexts.
double conditional_bias(const Matrix& probs, const ContextTable& table, double tau);
double conditional_second_moment(const Matrix& probs, const ContextTable& table, double tau);
std::vector<double> context_second_moments(const Matrix& probs, const ContextTable& table, double tau);

double conditional_bias(const LigParams& policy, const LoggedDataset& data, double tau, const McSettings& mc);
double conditional_second_moment(const LigParams& policy, const LoggedDataset& data, double tau,
                                 const McSettings& mc);

// Mean logged cost, contexts weighted equally.
double estimate_logging_risk(const LoggedDataset& data);

// -(1/n) sum_i sum_{a in y_i} pi(a | x_i).
double true_risk_labeled(const LigParams& policy, const LabeledDataset& test, const McSettings& mc,
                         PolicyClass cls = PolicyClass::lig);
double true_risk_labeled(const SoftmaxParams& policy, const LabeledDataset& test);

}  // namespace banditcert
