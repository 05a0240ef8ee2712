#include "mixmerge/sampler.hpp"

#include <cmath>

#include "mixmerge/portable_math.hpp"

namespace mixmerge {

namespace detail {

double standard_normal(CounterRng& rng) {
    for (;;) {
        const double u = 2.0 * rng.next_open01() - 1.0;
        const double v = 2.0 * rng.next_open01() - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * portable::log(s) / s);
        }
    }
}

double gamma_draw(double alpha, CounterRng& rng) {
    if (alpha < 1.0) {
        // Boost: Gamma(a) = Gamma(a+1) * U^(1/a).
        const double g = gamma_draw(alpha + 1.0, rng);
        return g * portable::pow(rng.next_open01(), 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x;
        double v;
        do {
            x = standard_normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.next_open01();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (portable::log(u) < 0.5 * x * x + d * (1.0 - v + portable::log(v))) return d * v;
    }
}

}  // namespace detail

SamplingRecord sample_lambda(const BetaShape& shape, std::uint64_t seed) {
    if (!(shape.alpha > 0.0)) {
        throw Error("sample_lambda: alpha must be positive, got " +
                    std::to_string(shape.alpha));
    }
    // Endpoint draws are possible only through floating-point underflow; they
    // are rejected and the draw restarts on the next substream.
    for (std::uint64_t attempt = 0;; ++attempt) {
        CounterRng rng(substream(seed, attempt));
        const double x = detail::gamma_draw(shape.alpha, rng);
        const double y = detail::gamma_draw(shape.alpha, rng);
        const double lambda = x / (x + y);
        if (lambda > 0.0 && lambda < 1.0) {
            return SamplingRecord{shape.alpha, seed, lambda};
        }
    }
}

double beta_pdf(const BetaShape& shape, double x) {
    if (!(shape.alpha > 0.0)) {
        throw Error("beta_pdf: alpha must be positive, got " + std::to_string(shape.alpha));
    }
    if (!(x > 0.0 && x < 1.0)) {
        throw Error("beta_pdf: x must lie strictly inside (0,1), got " + std::to_string(x));
    }
    const double a = shape.alpha;
    // log B(a,a) = 2 lgamma(a) - lgamma(2a); validation-only, so libm is fine.
    const double log_beta = 2.0 * std::lgamma(a) - std::lgamma(2.0 * a);
    return std::exp((a - 1.0) * (std::log(x) + std::log1p(-x)) - log_beta);
}

std::vector<SamplingRecord> make_sweep(const SweepSchedule& schedule) {
    if (schedule.alphas.empty()) {
        throw Error("make_sweep: schedule has no alphas");
    }
    std::vector<SamplingRecord> records;
    records.reserve(schedule.alphas.size());
    for (std::size_t i = 0; i < schedule.alphas.size(); ++i) {
        records.push_back(sample_lambda(BetaShape{schedule.alphas[i]},
                                        substream(schedule.base_seed, i)));
    }
    return records;
}

}  // namespace mixmerge
