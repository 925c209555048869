#pragma once

#include <cstddef>

namespace banditcert {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Standard normal CDF and density, full libm accuracy.
double normal_cdf(double z);
double normal_pdf(double z);

namespace detail {

inline constexpr double kTableLimit = 9.0;
inline constexpr double kTableStepsPerUnit = 128.0;
inline constexpr double kTableStep = 1.0 / kTableStepsPerUnit;
inline constexpr std::size_t kTableIntervals = static_cast<std::size_t>(2.0 * kTableLimit * kTableStepsPerUnit);

// Cubic Hermite interpolant on each interval, stored as Horner coefficients
// in t = (z - z_i) / step.
struct Cubic {
    double c0, c1, c2, c3;

    double operator()(double t) const { return c0 + t * (c1 + t * (c2 + t * c3)); }
};

// kTableIntervals intervals from -9 to 9. Filled during static
// initialisation of the library; do not call the fast functions from other
// static initialisers.
extern const Cubic* const cdf_table;
extern const Cubic* const pdf_table;

inline bool locate(double z, std::size_t& i, double& t) {
    const double x = (z + kTableLimit) * kTableStepsPerUnit;
    if (!(x >= 0.0 && x < static_cast<double>(kTableIntervals))) return false;
    i = static_cast<std::size_t>(x);  // x >= 0, so truncation is floor
    t = x - static_cast<double>(i);
    return true;
}

}  // namespace detail

// Table-driven CDF/density for the propensity integrals, which evaluate
// K(K-1) of them per Monte-Carlo draw. Piecewise cubic Hermite on a
// 1/128 grid over [-9, 9]; absolute error below 1e-11 for the CDF and
// 2e-11 for the density.
inline double fast_normal_cdf(double z) {
    std::size_t i = 0;
    double t = 0.0;
    if (!detail::locate(z, i, t)) return z > 0.0 ? 1.0 : 0.0;
    return detail::cdf_table[i](t);
}

inline double fast_normal_pdf(double z) {
    std::size_t i = 0;
    double t = 0.0;
    if (!detail::locate(z, i, t)) return 0.0;
    return detail::pdf_table[i](t);
}

inline void fast_normal_cdf_pdf(double z, double& cdf, double& pdf) {
    std::size_t i = 0;
    double t = 0.0;
    if (!detail::locate(z, i, t)) {
        cdf = z > 0.0 ? 1.0 : 0.0;
        pdf = 0.0;
        return;
    }
    cdf = detail::cdf_table[i](t);
    pdf = detail::pdf_table[i](t);
}

}  // namespace banditcert
