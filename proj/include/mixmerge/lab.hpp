#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixmerge/merge.hpp"
#include "mixmerge/sampler.hpp"
#include "mixmerge/tensor_map.hpp"

namespace mixmerge::lab {

// Desk-scale verification rig: a small fully connected network fine-tuned from
// a shared pretext-trained initialization on two synthetic regression tasks.
// Everything is deterministic given the seed; training runs in double and
// checkpoints are stored at f32.

struct ToyDataset {
    std::vector<double> inputs;   // row-major, input_dim per sample
    std::vector<double> targets;  // one per sample
    int input_dim = 2;

    std::size_t size() const { return targets.size(); }
};

struct ToyTask {
    std::string name;
    ToyDataset train;
    ToyDataset holdout;
};

struct ToyTaskPair {
    std::uint64_t seed = 0;
    TensorMap pretrained;  // theta_PRE after the shared pretext phase
    TensorMap model_t1;    // fine-tuned on task1
    TensorMap model_t2;    // fine-tuned on task2
    ToyTask task1;
    ToyTask task2;
};

/// Network topology constants (2-in, two tanh hidden layers, linear out).
inline constexpr int kToyInputDim = 2;
inline constexpr int kToyHidden = 32;
inline constexpr int kToyParamCount =
    kToyInputDim * kToyHidden + kToyHidden + kToyHidden * kToyHidden + kToyHidden +
    kToyHidden + 1;

/// Builds datasets, pretext-trains a shared initialization, and fine-tunes the
/// two task models. Throws Error (naming the seed) if training diverges.
ToyTaskPair build_toy_pair(std::uint64_t seed);

/// Mean squared error of a parameter map on a dataset, evaluated in double.
double toy_loss(const TensorMap& params, const ToyDataset& data);

/// Analytic gradient of toy_loss, flattened in checkpoint parameter order
/// (lexicographic tensor names, row-major within tensors).
std::vector<double> toy_loss_gradient_flat(std::span<const double> params,
                                           const ToyDataset& data);
double toy_loss_flat(std::span<const double> params, const ToyDataset& data);

/// Flattened view of the toy parameters in the same order as the gradient.
std::vector<double> flatten_params(const TensorMap& params);
TensorMap params_from_flat(std::span<const double> flat, const std::string& identity);

/// Score used by the built-in evaluator: 100 / (1 + loss), monotone in -loss
/// and bounded in (0, 100].
double toy_score(double loss);

struct PathPoint {
    double lambda = 0.0;
    double loss_task1 = 0.0;
    double loss_task2 = 0.0;
    double combined = 0.0;  // mean of the two task losses
};

struct PathScan {
    std::vector<PathPoint> points;  // ascending lambda over [0,1]
};

/// Held-out losses along the segment between model_t1 (lambda=1) and model_t2
/// (lambda=0). The grid endpoints evaluate the unmerged models exactly.
PathScan scan_path(const ToyTaskPair& pair, int grid_size);

/// max combined loss over the grid divided by the larger endpoint combined
/// loss; values near 1 mean the path crosses no barrier.
double barrier_statistic(const PathScan& scan);

struct SweepEntry {
    SamplingRecord rec;
    std::string digest;  // canonical digest of the merged checkpoint
    double score_task1 = 0.0;
    double score_task2 = 0.0;
    double combined = 0.0;
    };

struct SweepResult {
    std::vector<SweepEntry> records;  // one per alpha, in schedule order
    std::size_t selected = 0;         // argmax combined; ties keep the earlier entry
};

/// Runs the alpha sweep with an M3 method template: draw lambda_m per alpha,
/// merge, score both tasks on the held-out splits, select the best combined
/// average.
SweepResult run_sweep(const ToyTaskPair& pair, const SweepSchedule& schedule,
                      const MergeRecipe& method_template);

struct RobustnessReport {
    double metric_no_attack = 0.0;  // percent
    double metric_attack = 0.0;     // percent
    double pdr = 0.0;               // percent
};

/// pdr = (metric_no_attack - metric_attack) / metric_no_attack, in percent.
/// metric_no_attack must be positive and both metrics non-negative.
RobustnessReport compute_pdr(double metric_no_attack, double metric_attack);

std::string path_scan_csv(const PathScan& scan);
std::string path_scan_json(const PathScan& scan);
std::string sweep_result_json(const SweepResult& result);

}  // namespace mixmerge::lab
