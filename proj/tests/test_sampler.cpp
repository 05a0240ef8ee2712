#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "mixmerge/sampler.hpp"

using namespace mixmerge;

TEST_CASE("sample_lambda rejects non-positive alpha") {
    CHECK_THROWS_AS(sample_lambda(BetaShape{0.0}, 1), Error);
    CHECK_THROWS_AS(sample_lambda(BetaShape{-1.0}, 1), Error);
}

TEST_CASE("sample_lambda is reproducible and strictly inside (0,1)") {
    for (double alpha : {0.2, 0.5, 1.0, 2.0, 5.0}) {
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            const SamplingRecord a = sample_lambda(BetaShape{alpha}, seed);
            const SamplingRecord b = sample_lambda(BetaShape{alpha}, seed);
            CHECK(a.lambda_m == b.lambda_m);
            CHECK(a.alpha == alpha);
            CHECK(a.seed == seed);
            CHECK(a.lambda_m > 0.0);
            CHECK(a.lambda_m < 1.0);
        }
    }
}

TEST_CASE("sample_lambda golden value pins the generator") {
    // frozen from the documented generator; a change here means the sampling
    // scheme is no longer the documented one
    const SamplingRecord rec = sample_lambda(BetaShape{2.0}, 7);
    CHECK(rec.lambda_m == doctest::Approx(0.4069298099895109).epsilon(1e-15));
}

TEST_CASE("empirical mean sits near one half") {
    // symmetric Beta has mean 1/2; quick 1e4-draw check, the full-budget
    // moment suite runs in the acceptance binary
    for (double alpha : {0.4, 1.0, 3.0}) {
        const int n = 10000;
        double mean = 0.0;
        for (int i = 0; i < n; ++i) {
            mean += sample_lambda(BetaShape{alpha}, 5000 + i).lambda_m;
        }
        mean /= n;
        const double variance = 1.0 / (4.0 * (2.0 * alpha + 1.0));
        const double se = std::sqrt(variance / n);
        CHECK(std::fabs(mean - 0.5) < 3.0 * se);
    }
}

TEST_CASE("beta_pdf closed forms") {
    CHECK(beta_pdf(BetaShape{1.0}, 0.1) == doctest::Approx(1.0));
    CHECK(beta_pdf(BetaShape{1.0}, 0.9) == doctest::Approx(1.0));
    // Beta(2,2): 6x(1-x) -> 1.5 at the midpoint
    CHECK(beta_pdf(BetaShape{2.0}, 0.5) == doctest::Approx(1.5).epsilon(1e-12));
    // Beta(1/2,1/2) is the arcsine law: 1/(pi*sqrt(x(1-x)))
    CHECK(beta_pdf(BetaShape{0.5}, 0.5) ==
          doctest::Approx(2.0 / M_PI).epsilon(1e-12));
}

TEST_CASE("beta_pdf domain errors") {
    CHECK_THROWS_AS(beta_pdf(BetaShape{2.0}, 0.0), Error);
    CHECK_THROWS_AS(beta_pdf(BetaShape{2.0}, 1.0), Error);
    CHECK_THROWS_AS(beta_pdf(BetaShape{2.0}, -0.5), Error);
    CHECK_THROWS_AS(beta_pdf(BetaShape{0.0}, 0.5), Error);
}

TEST_CASE("beta_pdf integrates to one on a midpoint grid") {
    // quadrature oracle: 1e4-cell midpoint rule; smooth for alpha >= 1
    for (double alpha : {1.0, 2.0, 3.0, 5.0}) {
        const int cells = 10000;
        double integral = 0.0;
        for (int i = 0; i < cells; ++i) {
            const double x = (i + 0.5) / cells;
            integral += beta_pdf(BetaShape{alpha}, x);
        }
        integral /= cells;
        CHECK(std::fabs(integral - 1.0) < 1e-6);
    }
}

TEST_CASE("make_sweep default schedule draws seven records") {
    const SweepSchedule schedule;
    const auto records = make_sweep(schedule);
    REQUIRE(records.size() == 7);
    const std::vector<double> expected{0.2, 0.4, 0.5, 1.0, 2.0, 3.0, 5.0};
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].alpha == expected[i]);
        CHECK(records[i].lambda_m > 0.0);
        CHECK(records[i].lambda_m < 1.0);
    }
    // per-position seeds must be distinct substreams
    std::set<std::uint64_t> seeds;
    for (const auto& r : records) seeds.insert(r.seed);
    CHECK(seeds.size() == records.size());
}

TEST_CASE("make_sweep is deterministic and honors base_seed") {
    SweepSchedule schedule;
    schedule.base_seed = 97;
    const auto a = make_sweep(schedule);
    const auto b = make_sweep(schedule);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].lambda_m == b[i].lambda_m);
        CHECK(a[i].seed == b[i].seed);
    }
    schedule.base_seed = 98;
    const auto c = make_sweep(schedule);
    bool any_different = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].lambda_m != c[i].lambda_m) any_different = true;
    }
    CHECK(any_different);
}

TEST_CASE("make_sweep rejects bad schedules") {
    SweepSchedule empty;
    empty.alphas.clear();
    CHECK_THROWS_AS(make_sweep(empty), Error);
    SweepSchedule bad;
    bad.alphas = {0.5, -1.0};
    CHECK_THROWS_AS(make_sweep(bad), Error);
}

TEST_CASE("sampling record fixture values are representable as-is") {
    // a (lambda_m=0.84, alpha=2) record is representable as-is
    const SamplingRecord rec{2.0, 42, 0.84};
    CHECK(rec.lambda_m > 0.0);
    CHECK(rec.lambda_m < 1.0);
    CHECK(rec.alpha > 0.0);
}

TEST_CASE("sub-one alpha spreads mass away from the center") {
    const int n = 20000;
    int central_02 = 0;
    int central_50 = 0;
    for (int i = 0; i < n; ++i) {
        const double low = sample_lambda(BetaShape{0.2}, 7000 + i).lambda_m;
        const double high = sample_lambda(BetaShape{5.0}, 7000 + i).lambda_m;
        if (low > 0.4 && low < 0.6) ++central_02;
        if (high > 0.4 && high < 0.6) ++central_50;
    }
    CHECK(central_02 < central_50);
}
