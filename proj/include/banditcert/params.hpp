#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace banditcert {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Linear softmax policy; row a of `weights` scores action a.
struct SoftmaxParams {
    Matrix weights;

    int num_actions() const { return static_cast<int>(weights.rows()); }
    int feature_dim() const { return static_cast<int>(weights.cols()); }
};

// Linear Independent Gaussian policy: theta ~ N(mu, sigma^2 I), act by argmax.
struct LigParams {
    Matrix mu;
    double sigma = 1.0;

    int num_actions() const { return static_cast<int>(mu.rows()); }
    int feature_dim() const { return static_cast<int>(mu.cols()); }
};

struct GaussianPrior {
    Matrix mu0;
    double sigma0 = 1.0;
};

// Monte-Carlo settings for the propensity integrals.
struct McSettings {
    int num_samples = 32;
    std::uint64_t seed = 0;
    bool antithetic = true;
};

void validate(const SoftmaxParams& params);
void validate(const LigParams& params);
void validate(const GaussianPrior& prior);
void validate(const McSettings& mc);

}  // namespace banditcert
