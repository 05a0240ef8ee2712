#include <doctest.h>

#include <cmath>
#include <vector>

#include "mixmerge/checkpoint_io.hpp"
#include "mixmerge/lab.hpp"
#include "mixmerge/merge.hpp"

using namespace mixmerge;
using namespace mixmerge::lab;

TEST_CASE("toy pairs are bit-reproducible") {
    const ToyTaskPair a = build_toy_pair(3);
    const ToyTaskPair b = build_toy_pair(3);
    CHECK(a.pretrained.same_contents(b.pretrained));
    CHECK(a.model_t1.same_contents(b.model_t1));
    CHECK(a.model_t2.same_contents(b.model_t2));
    CHECK(checkpoint_digest(a.model_t1) == checkpoint_digest(b.model_t1));
}

TEST_CASE("fine-tuning beats the pretext initialization on its own task") {
    const ToyTaskPair pair = build_toy_pair(5);
    CHECK(toy_loss(pair.model_t1, pair.task1.holdout) <
          toy_loss(pair.pretrained, pair.task1.holdout));
    CHECK(toy_loss(pair.model_t2, pair.task2.holdout) <
          toy_loss(pair.pretrained, pair.task2.holdout));
}

TEST_CASE("toy parameter count matches the declared topology") {
    const ToyTaskPair pair = build_toy_pair(1);
    CHECK(pair.pretrained.total_elements() == kToyParamCount);
    CHECK(flatten_params(pair.pretrained).size() == std::size_t(kToyParamCount));
}

TEST_CASE("flatten and rebuild are inverse") {
    const ToyTaskPair pair = build_toy_pair(2);
    const std::vector<double> flat = flatten_params(pair.model_t1);
    const TensorMap back = params_from_flat(flat, pair.model_t1.identity());
    CHECK(back.same_contents(pair.model_t1));
}

TEST_CASE("analytic gradient matches central finite differences") {
    const ToyTaskPair pair = build_toy_pair(4);
    std::vector<double> w = flatten_params(pair.model_t1);
    const ToyDataset& data = pair.task1.train;
    const std::vector<double> grad = toy_loss_gradient_flat(w, data);

    CounterRng rng(substream(4, 99));
    int checked = 0;
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t i = rng.next_u64() % w.size();
        const double h = 1e-5 * (1.0 + std::fabs(w[i]));
        std::vector<double> wp = w;
        std::vector<double> wm = w;
        wp[i] += h;
        wm[i] -= h;
        const double fd = (toy_loss_flat(wp, data) - toy_loss_flat(wm, data)) / (2.0 * h);
        if (std::fabs(grad[i]) < 1e-10 && std::fabs(fd) < 1e-8) continue;  // both ~zero
        CHECK(std::fabs(fd - grad[i]) <= 1e-4 * std::max(std::fabs(fd), std::fabs(grad[i])));
        ++checked;
    }
    CHECK(checked >= 15);
}

TEST_CASE("scan endpoints evaluate the unmerged models exactly") {
    const ToyTaskPair pair = build_toy_pair(6);
    const PathScan scan = scan_path(pair, 11);
    REQUIRE(scan.points.size() == 11);
    CHECK(scan.points.front().lambda == 0.0);
    CHECK(scan.points.back().lambda == 1.0);
    // lambda=0 is model_t2, lambda=1 is model_t1
    CHECK(scan.points.front().loss_task1 == toy_loss(pair.model_t2, pair.task1.holdout));
    CHECK(scan.points.front().loss_task2 == toy_loss(pair.model_t2, pair.task2.holdout));
    CHECK(scan.points.back().loss_task1 == toy_loss(pair.model_t1, pair.task1.holdout));
    CHECK(scan.points.back().loss_task2 == toy_loss(pair.model_t1, pair.task2.holdout));
}

TEST_CASE("two-point scan is exactly the two fine-tuned models") {
    const ToyTaskPair pair = build_toy_pair(7);
    const PathScan scan = scan_path(pair, 2);
    REQUIRE(scan.points.size() == 2);
    CHECK(scan.points[0].lambda == 0.0);
    CHECK(scan.points[1].lambda == 1.0);
}

TEST_CASE("midpoint scan entry equals evaluating the average merge") {
    const ToyTaskPair pair = build_toy_pair(8);
    const PathScan scan = scan_path(pair, 21);
    const TensorMap mid = average_merge(pair.model_t1, pair.model_t2);
    CHECK(scan.points[10].lambda == 0.5);
    CHECK(scan.points[10].loss_task1 == toy_loss(mid, pair.task1.holdout));
    CHECK(scan.points[10].loss_task2 == toy_loss(mid, pair.task2.holdout));
}

TEST_CASE("scan rejects degenerate grids") {
    const ToyTaskPair pair = build_toy_pair(9);
    CHECK_THROWS_AS(scan_path(pair, 1), Error);
}

TEST_CASE("default sweep evaluates seven merges deterministically") {
    const ToyTaskPair pair = build_toy_pair(10);
    MergeRecipe tmpl;
    tmpl.method = MergeMethod::m3_average;
    const SweepSchedule schedule{SweepSchedule::default_alphas(), 11};
    const SweepResult a = run_sweep(pair, schedule, tmpl);
    const SweepResult b = run_sweep(pair, schedule, tmpl);
    REQUIRE(a.records.size() == 7);
    CHECK(a.selected == b.selected);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(a.records[i].digest == b.records[i].digest);
        CHECK(a.records[i].combined == b.records[i].combined);
        CHECK(a.records[i].rec.alpha == SweepSchedule::default_alphas()[i]);
    }
    // selected really is the argmax
    for (const auto& entry : a.records) {
        CHECK(a.records[a.selected].combined >= entry.combined);
    }
}

TEST_CASE("sweeping a degenerate pair gives identical records and selects the first") {
    ToyTaskPair pair = build_toy_pair(12);
    pair.model_t2 = pair.model_t1;  // interpolation of equal models
    MergeRecipe tmpl;
    tmpl.method = MergeMethod::m3_average;
    const SweepResult result = run_sweep(pair, SweepSchedule{}, tmpl);
    REQUIRE(result.records.size() == 7);
    for (const auto& entry : result.records) {
        CHECK(entry.combined == result.records[0].combined);
        CHECK(entry.digest == result.records[0].digest);
    }
    CHECK(result.selected == 0);
}

TEST_CASE("sweep requires an m3 template") {
    const ToyTaskPair pair = build_toy_pair(13);
    MergeRecipe tmpl;
    tmpl.method = MergeMethod::average;
    CHECK_THROWS_AS(run_sweep(pair, SweepSchedule{}, tmpl), Error);
}

TEST_CASE("sweep works for delta-space m3 methods") {
    const ToyTaskPair pair = build_toy_pair(14);
    MergeRecipe tmpl;
    tmpl.method = MergeMethod::m3_ties;
    tmpl.scaling_term = 1.0;
    tmpl.retain_ratio = 0.7;
    const SweepResult result = run_sweep(pair, SweepSchedule{}, tmpl);
    CHECK(result.records.size() == 7);
}

TEST_CASE("pdr matches hand-checked reference values") {
    CHECK(compute_pdr(57.68, 35.21).pdr == doctest::Approx(38.96).epsilon(0.0005));
    CHECK(compute_pdr(45.54, 0.67).pdr == doctest::Approx(98.53).epsilon(0.0005));
    CHECK(compute_pdr(42.0, 42.0).pdr == 0.0);
}

TEST_CASE("pdr rejects undefined inputs") {
    CHECK_THROWS_AS(compute_pdr(0.0, 1.0), Error);
    CHECK_THROWS_AS(compute_pdr(-5.0, 1.0), Error);
    CHECK_THROWS_AS(compute_pdr(50.0, -1.0), Error);
}

TEST_CASE("pdr may be negative when the attacked metric improves") {
    CHECK(compute_pdr(50.0, 55.0).pdr == doctest::Approx(-10.0));
}

TEST_CASE("csv and json emitters cover every row") {
    const ToyTaskPair pair = build_toy_pair(15);
    const PathScan scan = scan_path(pair, 5);
    const std::string csv = path_scan_csv(scan);
    CHECK(csv.find("lambda,loss_task1,loss_task2,combined") == 0);
    int newlines = 0;
    for (char c : csv) {
        if (c == '\n') ++newlines;
    }
    CHECK(newlines == 6);  // header + 5 rows

    MergeRecipe tmpl;
    tmpl.method = MergeMethod::m3_average;
    const SweepResult sweep = run_sweep(pair, SweepSchedule{}, tmpl);
    const std::string json_text = sweep_result_json(sweep);
    CHECK(json_text.find("\"records\"") != std::string::npos);
    CHECK(json_text.find("\"selected\"") != std::string::npos);
}
