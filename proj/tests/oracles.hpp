#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library's numerical code.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

inline double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double phi_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

// Composite Simpson on [lo, hi] with an even number of panels.
inline double simpson(const std::function<double(double)>& f, double lo, double hi, int panels = 4000) {
    const double h = (hi - lo) / panels;
    double s = f(lo) + f(hi);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
    return s * h / 3.0;
}

// P(argmax = a) for independent Gaussian scores s_b + scale * Z_b.
inline std::vector<double> argmax_probs(const std::vector<double>& s, double scale) {
    const std::size_t k = s.size();
    std::vector<double> out(k);
    for (std::size_t a = 0; a < k; ++a) {
        out[a] = simpson(
            [&](double e) {
                double prod = phi_pdf(e);
                for (std::size_t b = 0; b < k; ++b)
                    if (b != a) prod *= phi_cdf(e + (s[a] - s[b]) / scale);
                return prod;
            },
            -12.0, 12.0);
    }
    return out;
}

inline double g(double u) { return u == 0.0 ? 0.5 : (std::exp(u) - 1.0 - u) / (u * u); }

inline double ls(double r, double kl, double n, double tau, double delta) {
    const double kappa = kl + std::log(2.0 * std::sqrt(n) / delta);
    return r + 2.0 * kappa / (tau * n) + std::sqrt(2.0 * (r + 1.0 / tau) * kappa / (tau * n));
}

inline double catoni_at(double r, double kl, double n, double tau, double delta, double lambda) {
    const double kappa = kl + std::log(2.0 * std::sqrt(n) / delta);
    return (1.0 - std::exp(-tau * lambda * r - kappa / n)) / (tau * (std::exp(lambda) - 1.0));
}

// Brute-force minimum over a dense log grid; an upper bound on the true min.
inline double catoni_scan(double r, double kl, double n, double tau, double delta, int points = 20000) {
    double best = INFINITY;
    for (int i = 0; i < points; ++i) {
        const double lam = std::exp(std::log(1e-6) + (std::log(50.0) - std::log(1e-6)) * i / (points - 1));
        best = std::min(best, catoni_at(r, kl, n, tau, delta, lam));
    }
    return best;
}

inline double kl_isotropic(double sq_dist, double d, double sigma, double sigma0) {
    return sq_dist / (2.0 * sigma0 * sigma0) +
           d * (sigma * sigma / (2.0 * sigma0 * sigma0) + std::log(sigma0 / sigma) - 0.5);
}

}  // namespace oracle
