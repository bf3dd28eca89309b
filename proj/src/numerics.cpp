#include "flashread/numerics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace flashread {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
}  // namespace

double q_func(double x) {
    // erfc keeps full relative accuracy in the upper tail, unlike 1 - Phi(x).
    return 0.5 * std::erfc(x / kSqrt2);
}

double phi(double x) {
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

namespace {

// Rational approximation of the inverse normal cdf (Acklam-style), used only
// as the Newton starting point. Accurate to ~1e-9 on its own.
double inverse_normal_cdf_approx(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double q = p - 0.5;
    double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double q_inv(double y) {
    if (!(y > 0.0 && y < 1.0)) {
        throw DomainError("q_inv: argument " + std::to_string(y) + " outside (0,1)");
    }
    // q_inv(y) = Phi^{-1}(1-y) = -Phi^{-1}(y)
    double x = -inverse_normal_cdf_approx(y);

    // Safeguarded Newton on f(x) = q_func(x) - y, f'(x) = -phi(x).
    // q_func is monotone decreasing, so a bracket is easy to maintain.
    double lo = -40.0, hi = 40.0;
    for (int it = 0; it < 60; ++it) {
        double f = q_func(x) - y;
        if (f == 0.0) break;
        if (f > 0.0) {
            lo = x;  // q(x) too large -> true root is to the right
        } else {
            hi = x;
        }
        double deriv = -phi(x);
        double step = (deriv != 0.0) ? -f / deriv : 0.0;
        double next = x + step;
        if (!(next > lo && next < hi) || step == 0.0) {
            next = 0.5 * (lo + hi);  // bisection fallback
        }
        if (next == x) break;
        x = next;
        if (hi - lo < 1e-15 * (1.0 + std::abs(x))) break;
    }
    return x;
}

QuantizationGrid::QuantizationGrid(double origin_, double step_) : origin(origin_), step(step_) {
    if (!(step > 0.0)) {
        throw PreconditionError("QuantizationGrid: step must be positive");
    }
}

long long QuantizationGrid::index_of(double x) const {
    // floor(u + 1/2) rounds half-way cases toward +infinity.
    return static_cast<long long>(std::floor((x - origin) / step + 0.5));
}

double QuantizationGrid::quantize(double x) const {
    return value_at(index_of(x));
}

}  // namespace flashread
