#include "banditcert/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace banditcert {

ContextTable::ContextTable(const LoggedDataset& data)
    : num_actions_(data.num_actions()), feature_dim_(data.feature_dim()) {
    const auto groups = data.context_groups();
    const auto n = static_cast<Eigen::Index>(groups.size());
    features_.resize(n, feature_dim_);
    norms_.resize(groups.size());
    offsets_.reserve(groups.size() + 1);
    offsets_.push_back(0);
    interactions_.reserve(data.size());
    if (data.logger_params()) logger_probs_.resize(n, num_actions_);

    for (std::size_t i = 0; i < groups.size(); ++i) {
        const LoggedRecord& first = data[groups[i].begin];
        const auto row = static_cast<Eigen::Index>(i);
        features_.row(row) = first.features.transpose();
        norms_[i] = first.features.norm();
        if (data.logger_params())
            logger_probs_.row(row) = softmax_probabilities(*data.logger_params(), first.features).transpose();
        for (std::size_t r = groups[i].begin; r < groups[i].end; ++r)
            interactions_.push_back({data[r].action, data[r].cost, data[r].logging_propensity});
        offsets_.push_back(interactions_.size());
    }
}

std::span<const double> ContextTable::logger_probs(std::size_t i) const {
    if (!has_logger()) throw std::logic_error("logging policy parameters are required");
    return {logger_probs_.data() + i * static_cast<std::size_t>(num_actions_), static_cast<std::size_t>(num_actions_)};
}

std::span<const Interaction> ContextTable::interactions(std::size_t i) const {
    return {interactions_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
}

Matrix policy_probabilities(const LigParams& policy, const ContextTable& table, const McSettings& mc,
                            PolicyClass cls) {
    validate(policy);
    if (policy.num_actions() != table.num_actions() || policy.feature_dim() != table.feature_dim())
        throw std::invalid_argument("policy dimensions do not match the data");
    const int k = table.num_actions();
    const auto ks = static_cast<std::size_t>(k);
    const NormalDraws draws = NormalDraws::generate(mc, draw_dimension(cls, k));
    PropensityKernel kernel(cls, k);
    Matrix probs(static_cast<Eigen::Index>(table.num_contexts()), k);
    Vector scores(k);
    for (std::size_t i = 0; i < table.num_contexts(); ++i) {
        scores.noalias() = policy.mu * table.features(i).transpose();
        kernel.probabilities({scores.data(), ks}, policy.sigma * table.feature_norm(i), draws,
                             {probs.data() + i * ks, ks});
    }
    return probs;
}

std::vector<double> logged_action_propensities(const Matrix& probs, const ContextTable& table) {
    std::vector<double> out;
    out.reserve(table.num_records());
    for (std::size_t i = 0; i < table.num_contexts(); ++i)
        for (const Interaction& it : table.interactions(i))
            out.push_back(probs(static_cast<Eigen::Index>(i), it.action));
    return out;
}

namespace {

void check_tau(double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in [0, 1]");
}

void check_xi(double xi) {
    if (!(xi >= -1.0 && xi <= 0.0)) throw std::invalid_argument("xi must be in [-1, 0]");
}

}  // namespace

double cvcips_risk(std::span<const double> policy_propensities, const LoggedDataset& data, double tau, double xi) {
    check_tau(tau);
    check_xi(xi);
    if (policy_propensities.size() != data.size())
        throw std::invalid_argument("one policy propensity per record is required");
    double total = 0.0;
    for (const ContextGroup& g : data.context_groups()) {
        double inner = 0.0;
        for (std::size_t r = g.begin; r < g.end; ++r) {
            const double denom = std::max(data[r].logging_propensity, tau);
            if (!(denom > 0.0)) throw std::domain_error("zero clipped logging propensity");
            inner += policy_propensities[r] / denom * (data[r].cost - xi);
        }
        total += inner / static_cast<double>(g.size());
    }
    return xi + total / static_cast<double>(data.num_contexts());
}

double cips_risk(std::span<const double> policy_propensities, const LoggedDataset& data, double tau) {
    return cvcips_risk(policy_propensities, data, tau, 0.0);
}

namespace {

void check_probs(const Matrix& probs, const ContextTable& table) {
    if (!table.has_logger()) throw std::invalid_argument("conditional moments need the logging policy parameters");
    if (probs.rows() != static_cast<Eigen::Index>(table.num_contexts()) || probs.cols() != table.num_actions())
        throw std::invalid_argument("policy probability matrix must be n_contexts x K");
}

}  // namespace

double conditional_bias(const Matrix& probs, const ContextTable& table, double tau) {
    check_tau(tau);
    check_probs(probs, table);
    if (!(tau > 0.0)) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < table.num_contexts(); ++i) {
        const auto pi0 = table.logger_probs(i);
        double inner = 0.0;
        for (int a = 0; a < table.num_actions(); ++a)
            if (pi0[a] < tau) inner += probs(static_cast<Eigen::Index>(i), a) * (1.0 - pi0[a] / tau);
        total += inner;
    }
    return total / static_cast<double>(table.num_contexts());
}

std::vector<double> context_second_moments(const Matrix& probs, const ContextTable& table, double tau) {
    check_tau(tau);
    check_probs(probs, table);
    std::vector<double> out(table.num_contexts());
    for (std::size_t i = 0; i < table.num_contexts(); ++i) {
        const auto pi0 = table.logger_probs(i);
        double inner = 0.0;
        for (int a = 0; a < table.num_actions(); ++a) {
            const double clipped = std::max(pi0[a], tau);
            inner += probs(static_cast<Eigen::Index>(i), a) * pi0[a] / (clipped * clipped);
        }
        out[i] = inner;
    }
    return out;
}

double conditional_second_moment(const Matrix& probs, const ContextTable& table, double tau) {
    const std::vector<double> v = context_second_moments(probs, table, tau);
    double total = 0.0;
    for (double x : v) total += x;
    return total / static_cast<double>(v.size());
}

double conditional_bias(const LigParams& policy, const LoggedDataset& data, double tau, const McSettings& mc) {
    if (!data.logger_params()) throw std::invalid_argument("conditional bias needs the logging policy parameters");
    const ContextTable table(data);
    return conditional_bias(policy_probabilities(policy, table, mc), table, tau);
}

double conditional_second_moment(const LigParams& policy, const LoggedDataset& data, double tau,
                                 const McSettings& mc) {
    if (!data.logger_params())
        throw std::invalid_argument("conditional second moment needs the logging policy parameters");
    const ContextTable table(data);
    return conditional_second_moment(policy_probabilities(policy, table, mc), table, tau);
}

double estimate_logging_risk(const LoggedDataset& data) {
    double total = 0.0;
    for (const ContextGroup& g : data.context_groups()) {
        double inner = 0.0;
        for (std::size_t r = g.begin; r < g.end; ++r) inner += data[r].cost;
        total += inner / static_cast<double>(g.size());
    }
    return total / static_cast<double>(data.num_contexts());
}

double true_risk_labeled(const LigParams& policy, const LabeledDataset& test, const McSettings& mc,
                         PolicyClass cls) {
    validate(policy);
    if (test.size() == 0) throw std::invalid_argument("true_risk_labeled: empty test set");
    if (policy.num_actions() != test.num_actions() || policy.feature_dim() != test.feature_dim())
        throw std::invalid_argument("true_risk_labeled: dimension mismatch");
    const int k = test.num_actions();
    const auto ks = static_cast<std::size_t>(k);
    const NormalDraws draws = NormalDraws::generate(mc, draw_dimension(cls, k));
    PropensityKernel kernel(cls, k);
    Vector scores(k);
    Vector probs(k);
    double total = 0.0;
    for (const LabeledExample& ex : test.examples()) {
        scores.noalias() = policy.mu * ex.features;
        const double norm = ex.features.norm();
        kernel.probabilities({scores.data(), ks}, policy.sigma * norm, draws, {probs.data(), ks});
        for (int label : ex.labels) total += probs[label];
    }
    return -total / static_cast<double>(test.size());
}

double true_risk_labeled(const SoftmaxParams& policy, const LabeledDataset& test) {
    if (test.size() == 0) throw std::invalid_argument("true_risk_labeled: empty test set");
    double total = 0.0;
    for (const LabeledExample& ex : test.examples()) {
        const Vector probs = softmax_probabilities(policy, ex.features);
        for (int label : ex.labels) total += probs[label];
    }
    return -total / static_cast<double>(test.size());
}

}  // namespace banditcert
