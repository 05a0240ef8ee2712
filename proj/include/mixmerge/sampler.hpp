#pragma once

#include <cstdint>
#include <vector>

#include "mixmerge/errors.hpp"
#include "mixmerge/rng.hpp"

namespace mixmerge {

/// Shared shape parameter of a symmetric Beta(alpha, alpha) distribution.
struct BetaShape {
    double alpha = 1.0;
};

/// Provenance of one interpolation-coefficient draw: (alpha, seed) regenerate
/// lambda_m exactly.
struct SamplingRecord {
    double alpha = 1.0;
    std::uint64_t seed = 0;
    double lambda_m = 0.5;
};

/// One draw per alpha, seeds derived from base_seed and the alpha's position.
struct SweepSchedule {
    std::vector<double> alphas = default_alphas();
    std::uint64_t base_seed = 0;

    static std::vector<double> default_alphas() { return {0.2, 0.4, 0.5, 1.0, 2.0, 3.0, 5.0}; }
};

/// Draws lambda_m ~ Beta(alpha, alpha) as X/(X+Y) with X,Y Gamma(alpha,1) via
/// Marsaglia-Tsang (alpha<1 handled by the standard boost). Draws that round to
/// an exact endpoint are rejected and redrawn on the next substream, so every
/// emitted lambda_m lies strictly inside (0,1). Bit-reproducible given
/// (alpha, seed); the generator is specified in docs/formats.md.
SamplingRecord sample_lambda(const BetaShape& shape, std::uint64_t seed);

/// Density of Beta(alpha, alpha) at x in (0,1). Validation and plotting only;
/// the sampler does not evaluate it.
double beta_pdf(const BetaShape& shape, double x);

/// One SamplingRecord per alpha, in schedule order, with
/// seed_i = substream(base_seed, i).
std::vector<SamplingRecord> make_sweep(const SweepSchedule& schedule);

namespace detail {
/// Standard normal via the Marsaglia polar method (portable log).
double standard_normal(CounterRng& rng);
/// Gamma(alpha, 1) draw, alpha > 0.
double gamma_draw(double alpha, CounterRng& rng);
}  // namespace detail

}  // namespace mixmerge
