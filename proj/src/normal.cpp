#include "banditcert/normal.hpp"

#include <cmath>
#include <vector>

namespace banditcert {

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

namespace detail {
namespace {

Cubic hermite(double f0, double f1, double d0, double d1) {
    const double m0 = kTableStep * d0;
    const double m1 = kTableStep * d1;
    return {f0, m0, -3.0 * f0 + 3.0 * f1 - 2.0 * m0 - m1, 2.0 * f0 - 2.0 * f1 + m0 + m1};
}

struct Tables {
    std::vector<Cubic> cdf;
    std::vector<Cubic> pdf;

    Tables() {
        auto z_at = [](std::size_t i) { return -kTableLimit + static_cast<double>(i) * kTableStep; };
        for (std::size_t i = 0; i < kTableIntervals; ++i) {
            const double z0 = z_at(i);
            const double z1 = z_at(i + 1);
            const double p0 = normal_pdf(z0);
            const double p1 = normal_pdf(z1);
            cdf.push_back(hermite(normal_cdf(z0), normal_cdf(z1), p0, p1));
            pdf.push_back(hermite(p0, p1, -z0 * p0, -z1 * p1));
        }
    }
};

const Tables tables;

}  // namespace

const Cubic* const cdf_table = tables.cdf.data();
const Cubic* const pdf_table = tables.pdf.data();

}  // namespace detail
}  // namespace banditcert
