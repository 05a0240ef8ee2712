#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixmerge/sampler.hpp"
#include "mixmerge/tensor_map.hpp"

namespace mixmerge {

enum class MergeMethod {
    average,
    task_arithmetic,
    ties,
    m3_average,
    m3_task_arithmetic,
    m3_ties,
};

std::string_view method_name(MergeMethod method);
std::optional<MergeMethod> method_from_name(std::string_view name);
bool is_m3_method(MergeMethod method);
bool is_delta_space_method(MergeMethod method);

/// Drop-and-rescale sparsification parameters: each delta element is zeroed
/// independently with probability drop_rate and survivors are scaled by
/// 1/(1-drop_rate).
struct SparsifyConfig {
    double drop_rate = 0.0;
    std::uint64_t seed = 0;
};

/// Hyperparameter search grids used by the baseline methods.
inline constexpr std::array<double, 6> kScalingTermGrid{0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
inline constexpr std::array<double, 3> kRetainRatioGrid{0.5, 0.7, 0.9};

struct MergeRecipe {
    MergeMethod method = MergeMethod::average;
    std::optional<double> lambda_m;           // required by m3_* methods
    std::optional<double> scaling_term;       // required by task_arithmetic / ties
    std::optional<double> retain_ratio;       // required by ties variants
    std::optional<SparsifyConfig> dare;       // sparsify deltas before merging
    std::optional<SamplingRecord> sampling;   // provenance when lambda_m was drawn
};

/// Provenance block of an M3 merge. alpha/seed are absent when lambda_m was
/// supplied explicitly rather than drawn.
struct ManifestSampling {
    std::optional<double> alpha;
    std::optional<std::uint64_t> seed;
    double lambda_m = 0.5;
};

struct ManifestInput {
    std::string role;  // "base" or "model"
    std::string identity;
    std::string digest;  // sha256 of the canonical checkpoint bytes; may be empty in memory
};

struct ManifestOutput {
    std::string identity;
    std::string digest;
};

/// Durable record of one merge: method, hyperparameters, sampling provenance,
/// and input/output identities. Serialized as JSON by checkpoint-io; the
/// sampling block is present iff the method is an M3 variant.
struct MergeManifest {
    std::string method;
    std::string toolkit_version;
    std::string created_at;  // ISO-8601 UTC; honors SOURCE_DATE_EPOCH
    std::vector<ManifestInput> inputs;
    std::optional<double> scaling_term;
    std::optional<double> retain_ratio;
    std::optional<SparsifyConfig> dare;
    std::optional<ManifestSampling> sampling;
    std::optional<ManifestOutput> output;
};

// ---- merging procedures ----

/// (theta1 + theta2) / 2 elementwise; equal to lerp(theta1, theta2, 0.5).
TensorMap average_merge(const TensorMap& theta1, const TensorMap& theta2);

/// base + scaling * sum_i (model_i - base).
TensorMap task_arithmetic(const TensorMap& base, std::span<const TensorMap> models,
                          double scaling);

/// lambda_m*theta1 + (1-lambda_m)*theta2 with lambda_m from the record,
/// required to lie strictly inside (0,1).
TensorMap m3_average(const TensorMap& theta1, const TensorMap& theta2,
                     const SamplingRecord& rec);

/// base + lambda_m*(theta1-base) + (1-lambda_m)*(theta2-base).
TensorMap m3_task_arithmetic(const TensorMap& base, const TensorMap& theta1,
                             const TensorMap& theta2, const SamplingRecord& rec);

/// Drop-and-rescale over a delta set. Deterministic given cfg.seed; the mask
/// stream is keyed per tensor name, so it is invariant under map ordering.
DeltaSet dare_sparsify(const DeltaSet& d, const SparsifyConfig& cfg);

/// Intermediates of the trim / elect-sign / disjoint-merge pipeline, exposed
/// for inspection and testing.
struct TiesWork {
    std::vector<DeltaSet> trimmed;       // per task, non-top-k entries zeroed
    std::vector<TensorMap> retain_mask;  // per task, 1.0 where the entry survived the trim
    TensorMap elected_sign;              // per parameter, -1 / +1 (ties elect +1)
};

TiesWork ties_prepare(const TensorMap& base, std::span<const TensorMap> models,
                      double retain_ratio);

/// Classic trim / elect / disjoint-mean merge:
/// result = base + scaling * disjoint_mean(trimmed deltas agreeing with the
/// elected sign). Parameters retained by no task pass the base value through.
TensorMap ties_merge(const TensorMap& base, std::span<const TensorMap> models,
                     double retain_ratio, double scaling);

/// Same pipeline for exactly two models, except the disjoint step: parameters
/// retained by both tasks are interpolated at lambda_m; parameters retained by
/// one task keep that task's delta unchanged.
TensorMap ties_m3_merge(const TensorMap& base, const TensorMap& theta1,
                        const TensorMap& theta2, double retain_ratio, double scaling,
                        const SamplingRecord& rec);

struct MergeResult {
    TensorMap merged;
    MergeManifest manifest;
};

/// Dispatches a recipe to the matching procedure. When recipe.dare is set the
/// per-model deltas are sparsified before the method runs (base required).
/// The manifest records the recipe, sampling provenance, and input identities;
/// digests are filled in by callers that know the serialized bytes.
MergeResult merge(const MergeRecipe& recipe, const TensorMap* base,
                  std::span<const TensorMap> models);

}  // namespace mixmerge
