#include "banditcert/policies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "banditcert/normal.hpp"
#include "json_util.hpp"

namespace banditcert {

using detail::json;

void validate(const SoftmaxParams& params) {
    if (params.weights.rows() < 2 || params.weights.cols() < 1)
        throw std::invalid_argument("softmax parameters need K >= 2 and p >= 1");
    if (!params.weights.allFinite()) throw std::invalid_argument("softmax parameters must be finite");
}

void validate(const LigParams& params) {
    if (params.mu.rows() < 2 || params.mu.cols() < 1)
        throw std::invalid_argument("LIG parameters need K >= 2 and p >= 1");
    if (!params.mu.allFinite()) throw std::invalid_argument("LIG mean must be finite");
    if (!(params.sigma > 0.0) || !std::isfinite(params.sigma)) throw std::invalid_argument("sigma must be > 0");
}

void validate(const GaussianPrior& prior) {
    if (!prior.mu0.allFinite()) throw std::invalid_argument("prior mean must be finite");
    if (!(prior.sigma0 > 0.0) || !std::isfinite(prior.sigma0)) throw std::invalid_argument("sigma0 must be > 0");
}

void validate(const McSettings& mc) {
    if (mc.num_samples < 1) throw std::invalid_argument("Monte-Carlo sample count must be >= 1");
}

// ---------------------------------------------------------------------------

void softmax_probabilities(std::span<const double> scores, std::span<double> out) {
    const double top = *std::max_element(scores.begin(), scores.end());
    if (!std::isfinite(top)) throw std::domain_error("non-finite softmax score");
    double total = 0.0;
    for (std::size_t a = 0; a < scores.size(); ++a) {
        out[a] = std::exp(scores[a] - top);
        total += out[a];
    }
    for (double& v : out) v /= total;
}

Vector softmax_probabilities(const SoftmaxParams& params, const Vector& features) {
    if (features.size() != params.feature_dim()) throw std::invalid_argument("softmax: feature dimension mismatch");
    const Vector scores = params.weights * features;
    Vector probs(scores.size());
    softmax_probabilities({scores.data(), static_cast<std::size_t>(scores.size())},
                          {probs.data(), static_cast<std::size_t>(probs.size())});
    return probs;
}

double softmax_propensity(const SoftmaxParams& params, const Vector& features, int action) {
    if (action < 0 || action >= params.num_actions()) throw std::invalid_argument("softmax: action out of range");
    return softmax_probabilities(params, features)[action];
}

SoftmaxParams train_logging_policy(const LabeledDataset& train, const LoggerTrainingSettings& settings) {
    if (train.size() == 0) throw std::invalid_argument("train_logging_policy: empty training split");
    if (settings.epochs < 0 || settings.batch_size < 1 || !(settings.lr > 0.0) || !(settings.l2 >= 0.0))
        throw std::invalid_argument("train_logging_policy: invalid settings");

    const int k = train.num_actions();
    const int p = train.feature_dim();
    const Eigen::Index d = static_cast<Eigen::Index>(k) * p;
    Matrix w = Matrix::Zero(k, p);
    Matrix grad(k, p);
    Vector m = Vector::Zero(d);
    Vector v = Vector::Zero(d);
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    long step = 0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(settings.seed, {stream::logger_training});
    Vector probs(k);

    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(settings.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(settings.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            grad = 2.0 * settings.l2 * w;
            double loss = settings.l2 * w.squaredNorm();
            for (std::size_t idx = start; idx < stop; ++idx) {
                const LabeledExample& ex = train[order[idx]];
                const Vector scores = w * ex.features;
                softmax_probabilities({scores.data(), static_cast<std::size_t>(k)},
                                      {probs.data(), static_cast<std::size_t>(k)});
                const int target = ex.labels.front();
                loss -= inv_batch * std::log(std::max(probs[target], 1e-300));
                probs[target] -= 1.0;
                grad.noalias() += inv_batch * probs * ex.features.transpose();
            }
            if (!std::isfinite(loss) || !grad.allFinite())
                throw std::runtime_error("train_logging_policy: non-finite loss at epoch " + std::to_string(epoch));

            ++step;
            const Eigen::Map<const Vector> g(grad.data(), d);
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            Eigen::Map<Vector> flat(w.data(), d);
            flat.array() -= settings.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        }
    }
    return SoftmaxParams{w};
}

// ---------------------------------------------------------------------------
// Draws.

NormalDraws::NormalDraws(int dim, std::vector<double> paired, std::vector<double> unpaired)
    : dim_(dim), paired_(std::move(paired)), unpaired_(std::move(unpaired)) {
    if (dim_ < 1) throw std::invalid_argument("draw dimension must be >= 1");
    if (paired_.size() % static_cast<std::size_t>(dim_) != 0 || unpaired_.size() % static_cast<std::size_t>(dim_) != 0)
        throw std::invalid_argument("draw buffers must be a multiple of the dimension");
    if (paired_.empty() && unpaired_.empty()) throw std::invalid_argument("at least one draw is required");
}

NormalDraws NormalDraws::generate(const McSettings& mc, int dim) {
    validate(mc);
    Rng rng(mc.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t pairs = mc.antithetic ? static_cast<std::size_t>(mc.num_samples / 2) : 0;
    const std::size_t singles = static_cast<std::size_t>(mc.num_samples) - 2 * pairs;
    std::vector<double> paired(pairs * static_cast<std::size_t>(dim));
    std::vector<double> unpaired(singles * static_cast<std::size_t>(dim));
    for (double& x : paired) x = normal(rng);
    for (double& x : unpaired) x = normal(rng);
    return NormalDraws(dim, std::move(paired), std::move(unpaired));
}

std::span<const double> NormalDraws::paired(std::size_t i) const {
    return {paired_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
}

std::span<const double> NormalDraws::unpaired(std::size_t i) const {
    return {unpaired_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
}

int draw_dimension(PolicyClass cls, int num_actions) { return cls == PolicyClass::lig ? 1 : num_actions; }

// ---------------------------------------------------------------------------
// Propensity kernel.

PropensityKernel::PropensityKernel(PolicyClass cls, int num_actions)
    : cls_(cls), k_(num_actions) {
    if (k_ < 2) throw std::invalid_argument("propensity kernel needs K >= 2");
    const auto kk = static_cast<std::size_t>(k_) * static_cast<std::size_t>(k_);
    cdf_.resize(kk);
    pdf_.resize(kk);
    pair_adjoint_.resize(kk);
    prefix_.resize(static_cast<std::size_t>(k_) + 1);
    suffix_.resize(static_cast<std::size_t>(k_) + 1);
    work_.resize(static_cast<std::size_t>(k_));
    raw_adjoint_.resize(static_cast<std::size_t>(k_));
}

double PropensityKernel::probabilities(std::span<const double> scores, double noise_scale, const NormalDraws& draws,
                                       std::span<double> probs) {
    if (!(noise_scale > 0.0)) throw std::invalid_argument("propensity: zero feature vector or non-positive sigma");
    if (draws.dim() != draw_dimension(cls_, k_)) throw std::invalid_argument("propensity: draw dimension mismatch");
    const double raw = cls_ == PolicyClass::lig ? lig_forward(scores, 1.0 / noise_scale, draws, probs)
                                                : mixed_forward(scores, noise_scale, draws, probs);
    if (!(raw > 0.0) || !std::isfinite(raw)) throw std::domain_error("propensity: degenerate Monte-Carlo average");
    for (double& p : probs) p /= raw;
    return raw;
}

double PropensityKernel::backward(std::span<const double> scores, double noise_scale, const NormalDraws& draws,
                                  std::span<const double> probs, double raw_sum, std::span<const double> adjoint,
                                  std::span<double> d_scores) {
    // p_a = u_a / U  =>  dL/du_a = (w_a - sum_b w_b p_b) / U.
    double mean = 0.0;
    for (int a = 0; a < k_; ++a) mean += adjoint[a] * probs[a];
    for (int a = 0; a < k_; ++a) raw_adjoint_[a] = (adjoint[a] - mean) / raw_sum;
    return cls_ == PolicyClass::lig ? lig_backward(scores, 1.0 / noise_scale, draws, raw_adjoint_, d_scores)
                                    : mixed_backward(scores, noise_scale, draws, raw_adjoint_, d_scores);
}

double PropensityKernel::lig_forward(std::span<const double> s, double inv_scale, const NormalDraws& draws,
                                     std::span<double> u) {
    const int k = k_;
    std::fill(u.begin(), u.end(), 0.0);
    auto fill_cdf = [&](double eps) {
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
                if (a != b) cdf_[a * k + b] = fast_normal_cdf(eps + (s[a] - s[b]) * inv_scale);
    };
    for (std::size_t i = 0; i < draws.num_paired(); ++i) {
        fill_cdf(draws.paired(i)[0]);
        // At -eps: Phi(-eps + d_ab) = 1 - Phi(eps + d_ba).
        for (int a = 0; a < k; ++a) {
            double plus = 1.0;
            double minus = 1.0;
            for (int b = 0; b < k; ++b) {
                if (b == a) continue;
                plus *= cdf_[a * k + b];
                minus *= 1.0 - cdf_[b * k + a];
            }
            u[a] += plus + minus;
        }
    }
    for (std::size_t i = 0; i < draws.num_unpaired(); ++i) {
        fill_cdf(draws.unpaired(i)[0]);
        for (int a = 0; a < k; ++a) {
            double plus = 1.0;
            for (int b = 0; b < k; ++b)
                if (b != a) plus *= cdf_[a * k + b];
            u[a] += plus;
        }
    }
    const double inv_total = 1.0 / draws.total();
    double raw = 0.0;
    for (double& x : u) {
        x *= inv_total;
        raw += x;
    }
    return raw;
}

double PropensityKernel::lig_backward(std::span<const double> s, double inv_scale, const NormalDraws& draws,
                                      std::span<const double> ubar, std::span<double> d_scores) {
    const int k = k_;
    std::fill(pair_adjoint_.begin(), pair_adjoint_.end(), 0.0);
    const double inv_total = 1.0 / draws.total();

    // Adds ubar_a * dG_a/dz_ab to pair_adjoint_[a][b], with factors f_b = Phi(z_ab)
    // and densities n_b = N(z_ab) for one draw.
    auto accumulate_row = [&](int a, auto factor, auto density) {
        prefix_[0] = 1.0;
        for (int b = 0; b < k; ++b) prefix_[b + 1] = prefix_[b] * (b == a ? 1.0 : factor(b));
        suffix_[k] = 1.0;
        for (int b = k; b-- > 0;) suffix_[b] = suffix_[b + 1] * (b == a ? 1.0 : factor(b));
        const double w = ubar[a] * inv_total;
        for (int b = 0; b < k; ++b) {
            if (b == a) continue;
            pair_adjoint_[a * k + b] += w * density(b) * prefix_[b] * suffix_[b + 1];
        }
    };
    auto fill = [&](double eps) {
        for (int a = 0; a < k; ++a)
            for (int b = 0; b < k; ++b)
                if (a != b) fast_normal_cdf_pdf(eps + (s[a] - s[b]) * inv_scale, cdf_[a * k + b], pdf_[a * k + b]);
    };

    for (std::size_t i = 0; i < draws.num_paired(); ++i) {
        fill(draws.paired(i)[0]);
        for (int a = 0; a < k; ++a) {
            if (ubar[a] == 0.0) continue;
            accumulate_row(a, [&](int b) { return cdf_[a * k + b]; }, [&](int b) { return pdf_[a * k + b]; });
            // Antithetic draw: z'_ab = -eps + d_ab, Phi(z') = 1 - Phi(eps + d_ba), N(z') = N(eps + d_ba).
            accumulate_row(a, [&](int b) { return 1.0 - cdf_[b * k + a]; }, [&](int b) { return pdf_[b * k + a]; });
        }
    }
    for (std::size_t i = 0; i < draws.num_unpaired(); ++i) {
        fill(draws.unpaired(i)[0]);
        for (int a = 0; a < k; ++a) {
            if (ubar[a] == 0.0) continue;
            accumulate_row(a, [&](int b) { return cdf_[a * k + b]; }, [&](int b) { return pdf_[a * k + b]; });
        }
    }

    // z_ab = eps + (s_a - s_b) * r, r = 1 / (sigma ||phi||).
    double d_inv_scale = 0.0;
    for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) {
            if (a == b) continue;
            const double t = pair_adjoint_[a * k + b];
            d_scores[a] += t * inv_scale;
            d_scores[b] -= t * inv_scale;
            d_inv_scale += t * (s[a] - s[b]);
        }
    }
    // d r / d log(sigma) = -r.
    return -inv_scale * d_inv_scale;
}

double PropensityKernel::mixed_forward(std::span<const double> s, double scale, const NormalDraws& draws,
                                       std::span<double> u) {
    const int k = k_;
    std::fill(u.begin(), u.end(), 0.0);
    auto add = [&](std::span<const double> z, double sign) {
        for (int a = 0; a < k; ++a) work_[a] = s[a] + sign * scale * z[a];
        softmax_probabilities(work_, work_);
        for (int a = 0; a < k; ++a) u[a] += work_[a];
    };
    for (std::size_t i = 0; i < draws.num_paired(); ++i) {
        add(draws.paired(i), 1.0);
        add(draws.paired(i), -1.0);
    }
    for (std::size_t i = 0; i < draws.num_unpaired(); ++i) add(draws.unpaired(i), 1.0);
    const double inv_total = 1.0 / draws.total();
    double raw = 0.0;
    for (double& x : u) {
        x *= inv_total;
        raw += x;
    }
    return raw;
}

double PropensityKernel::mixed_backward(std::span<const double> s, double scale, const NormalDraws& draws,
                                        std::span<const double> ubar, std::span<double> d_scores) {
    const int k = k_;
    const double inv_total = 1.0 / draws.total();
    double d_scale = 0.0;
    auto add = [&](std::span<const double> z, double sign) {
        for (int a = 0; a < k; ++a) work_[a] = s[a] + sign * scale * z[a];
        softmax_probabilities(work_, work_);
        double mean = 0.0;
        for (int a = 0; a < k; ++a) mean += ubar[a] * work_[a];
        for (int b = 0; b < k; ++b) {
            const double dt = inv_total * work_[b] * (ubar[b] - mean);
            d_scores[b] += dt;
            d_scale += dt * sign * z[b];
        }
    };
    for (std::size_t i = 0; i < draws.num_paired(); ++i) {
        add(draws.paired(i), 1.0);
        add(draws.paired(i), -1.0);
    }
    for (std::size_t i = 0; i < draws.num_unpaired(); ++i) add(draws.unpaired(i), 1.0);
    return d_scale * scale;
}

// ---------------------------------------------------------------------------
// Per-context conveniences.

namespace {

void check_dims(const LigParams& params, const Vector& features, int action) {
    validate(params);
    if (features.size() != params.feature_dim()) throw std::invalid_argument("feature dimension mismatch");
    if (action < 0 || action >= params.num_actions()) throw std::invalid_argument("action out of range");
}

double noise_scale_of(const LigParams& params, const Vector& features) {
    const double norm = features.norm();
    if (!(norm > 0.0)) throw std::invalid_argument("zero feature vector");
    return params.sigma * norm;
}

Vector kernel_probabilities(PolicyClass cls, const LigParams& params, const Vector& features, const McSettings& mc) {
    check_dims(params, features, 0);
    const int k = params.num_actions();
    const Vector scores = params.mu * features;
    const NormalDraws draws = NormalDraws::generate(mc, draw_dimension(cls, k));
    PropensityKernel kernel(cls, k);
    Vector probs(k);
    kernel.probabilities({scores.data(), static_cast<std::size_t>(k)}, noise_scale_of(params, features), draws,
                         {probs.data(), static_cast<std::size_t>(k)});
    return probs;
}

}  // namespace

int lig_sample_action(const LigParams& params, const Vector& features, Rng& rng) {
    check_dims(params, features, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < params.num_actions(); ++a) {
        double score = 0.0;
        for (int j = 0; j < params.feature_dim(); ++j) score += features[j] * (params.mu(a, j) + params.sigma * normal(rng));
        if (score > best_score) {
            best_score = score;
            best = a;
        }
    }
    return best;
}

int lig_sample_action(const LigParams& params, const Vector& features, std::uint64_t seed) {
    Rng rng = make_rng(seed, {stream::sampling});
    return lig_sample_action(params, features, rng);
}

double lig_integrand(const LigParams& params, const Vector& features, int action, double eps) {
    check_dims(params, features, action);
    const double inv_scale = 1.0 / noise_scale_of(params, features);
    const Vector scores = params.mu * features;
    double g = 1.0;
    for (int b = 0; b < params.num_actions(); ++b)
        if (b != action) g *= normal_cdf(eps + (scores[action] - scores[b]) * inv_scale);
    return g;
}

Vector lig_propensities(const LigParams& params, const Vector& features, const McSettings& mc) {
    return kernel_probabilities(PolicyClass::lig, params, features, mc);
}

double lig_propensity(const LigParams& params, const Vector& features, int action, const McSettings& mc) {
    check_dims(params, features, action);
    return lig_propensities(params, features, mc)[action];
}

LigGradient lig_propensity_grad(const LigParams& params, const Vector& features, int action, const McSettings& mc) {
    check_dims(params, features, action);
    const int k = params.num_actions();
    const Vector scores = params.mu * features;
    const double scale = noise_scale_of(params, features);
    const NormalDraws draws = NormalDraws::generate(mc, 1);
    PropensityKernel kernel(PolicyClass::lig, k);
    Vector probs(k);
    const auto ks = static_cast<std::size_t>(k);
    const double raw = kernel.probabilities({scores.data(), ks}, scale, draws, {probs.data(), ks});
    Vector adjoint = Vector::Zero(k);
    adjoint[action] = 1.0;
    Vector d_scores = Vector::Zero(k);
    const double d_log_sigma = kernel.backward({scores.data(), ks}, scale, draws, {probs.data(), ks}, raw,
                                               {adjoint.data(), ks}, {d_scores.data(), ks});
    return {d_scores * features.transpose(), d_log_sigma / params.sigma};
}

Vector mixed_logit_propensities(const LigParams& params, const Vector& features, const McSettings& mc) {
    return kernel_probabilities(PolicyClass::mixed_logit, params, features, mc);
}

double mixed_logit_propensity(const LigParams& params, const Vector& features, int action, const McSettings& mc) {
    check_dims(params, features, action);
    return mixed_logit_propensities(params, features, mc)[action];
}

double naive_mc_propensity(const LigParams& params, const Vector& features, int action, int num_samples,
                           std::uint64_t seed) {
    check_dims(params, features, action);
    if (num_samples < 1) throw std::invalid_argument("naive_mc_propensity: S must be >= 1");
    Rng rng = make_rng(seed, {stream::sampling});
    long hits = 0;
    for (int i = 0; i < num_samples; ++i)
        if (lig_sample_action(params, features, rng) == action) ++hits;
    return static_cast<double>(hits) / num_samples;
}

// ---------------------------------------------------------------------------
// Policy files.

SoftmaxParams StoredPolicy::as_softmax() const {
    if (kind != PolicyKind::softmax) throw std::invalid_argument("policy is not a softmax policy");
    return SoftmaxParams{mu};
}

LigParams StoredPolicy::as_lig() const {
    if (kind == PolicyKind::softmax) throw std::invalid_argument("policy is not a Gaussian (LIG / mixed-logit) policy");
    return LigParams{mu, sigma.value_or(1.0)};
}

StoredPolicy stored(const SoftmaxParams& params) { return {PolicyKind::softmax, params.weights, std::nullopt}; }

StoredPolicy stored(const LigParams& params, PolicyClass cls) {
    return {cls == PolicyClass::lig ? PolicyKind::lig : PolicyKind::mixed_logit, params.mu, params.sigma};
}

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::softmax: return "softmax";
        case PolicyKind::lig: return "lig";
        case PolicyKind::mixed_logit: return "mixed_logit";
    }
    return "unknown";
}

PolicyKind policy_kind_from_string(const std::string& s) {
    if (s == "softmax") return PolicyKind::softmax;
    if (s == "lig") return PolicyKind::lig;
    if (s == "mixed_logit") return PolicyKind::mixed_logit;
    throw std::invalid_argument("unknown policy kind: " + s);
}

StoredPolicy read_policy(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    json j;
    try {
        in >> j;
        StoredPolicy policy;
        policy.kind = policy_kind_from_string(j.at("kind").get<std::string>());
        const int k = j.at("K").get<int>();
        const int p = j.at("p").get<int>();
        policy.mu = detail::matrix_from_json(j.at("mu"), k, p, "mu");
        if (j.contains("sigma") && !j["sigma"].is_null()) policy.sigma = j["sigma"].get<double>();
        if (policy.kind != PolicyKind::softmax && !policy.sigma)
            throw std::runtime_error("Gaussian policies need \"sigma\"");
        return policy;
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void write_policy(const StoredPolicy& policy, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    json j{{"kind", to_string(policy.kind)},
           {"K", policy.mu.rows()},
           {"p", policy.mu.cols()},
           {"mu", detail::matrix_to_json(policy.mu)},
           {"sigma", nullptr}};
    if (policy.sigma) j["sigma"] = *policy.sigma;
    out << j.dump(2) << '\n';
}

}  // namespace banditcert
