#pragma once

#include <cmath>
#include <limits>

namespace mixmerge::portable {

// Self-contained exp/log/pow over IEEE-754 binary64. libm implementations of
// the transcendentals are not guaranteed to round identically across platforms,
// which would break bit-reproducible sampling; these versions use only exactly
// rounded primitives (+,-,*,/ and frexp/ldexp) with a fixed evaluation order.
// Accuracy is ~1 ulp of double, far beyond what the samplers need.

inline double exp(double x) {
    if (x != x) return x;
    if (x > 709.78) return HUGE_VAL;
    if (x < -745.2) return 0.0;

    // x = k*ln2 + r with |r| <= ln2/2, using a two-part ln2 for the reduction.
    constexpr double inv_ln2 = 1.4426950408889634074;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    double kd = x * inv_ln2;
    kd = (kd >= 0.0) ? std::floor(kd + 0.5) : std::ceil(kd - 0.5);
    const double r = (x - kd * ln2_hi) - kd * ln2_lo;

    // Taylor series of exp(r), fixed order 17; |r| <= 0.3466 keeps the
    // truncation error below 1e-18.
    double sum = 1.0;
    double term = 1.0;
    for (int i = 1; i <= 17; ++i) {
        term *= r / i;
        sum += term;
    }
    return std::ldexp(sum, static_cast<int>(kd));
}

inline double log(double x) {
    if (x != x) return x;
    if (x < 0.0) return std::numeric_limits<double>::quiet_NaN();
    if (x == 0.0) return -HUGE_VAL;
    if (x == HUGE_VAL) return x;

    int e = 0;
    double m = std::frexp(x, &e);  // m in [0.5, 1)
    if (m < 0.70710678118654752440) {
        m *= 2.0;
        e -= 1;
    }
    // atanh series: log(m) = 2s(1 + s^2/3 + s^4/5 + ...), s = (m-1)/(m+1),
    // |s| <= 0.1716 for m in [sqrt(1/2), sqrt(2)).
    const double s = (m - 1.0) / (m + 1.0);
    const double s2 = s * s;
    double acc = 0.0;
    for (int i = 27; i >= 1; i -= 2) acc = acc * s2 + 1.0 / i;
    const double log_m = 2.0 * s * acc;

    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    return (e * ln2_hi + log_m) + e * ln2_lo;
}

/// pow for strictly positive bases (all this toolkit requires).
inline double pow(double x, double y) {
    return portable::exp(y * portable::log(x));
}

}  // namespace mixmerge::portable
