#include "mixmerge/merge.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mixmerge/rng.hpp"
#include "mixmerge/version.hpp"

namespace mixmerge {

std::string_view method_name(MergeMethod method) {
    switch (method) {
        case MergeMethod::average: return "average";
        case MergeMethod::task_arithmetic: return "task_arithmetic";
        case MergeMethod::ties: return "ties";
        case MergeMethod::m3_average: return "m3_average";
        case MergeMethod::m3_task_arithmetic: return "m3_task_arithmetic";
        case MergeMethod::m3_ties: return "m3_ties";
    }
    return "unknown";
}

std::optional<MergeMethod> method_from_name(std::string_view name) {
    std::string canon(name);
    for (char& c : canon) {
        if (c == '-') c = '_';
    }
    if (canon == "average") return MergeMethod::average;
    if (canon == "task_arithmetic") return MergeMethod::task_arithmetic;
    if (canon == "ties") return MergeMethod::ties;
    if (canon == "m3_average") return MergeMethod::m3_average;
    if (canon == "m3_task_arithmetic") return MergeMethod::m3_task_arithmetic;
    if (canon == "m3_ties") return MergeMethod::m3_ties;
    return std::nullopt;
}

bool is_m3_method(MergeMethod method) {
    return method == MergeMethod::m3_average || method == MergeMethod::m3_task_arithmetic ||
           method == MergeMethod::m3_ties;
}

bool is_delta_space_method(MergeMethod method) {
    return method == MergeMethod::task_arithmetic || method == MergeMethod::ties ||
           method == MergeMethod::m3_task_arithmetic || method == MergeMethod::m3_ties;
}

namespace {

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void require_open_unit(double lambda, const char* what) {
    if (!(lambda > 0.0 && lambda < 1.0)) {
        throw Error(std::string(what) + ": lambda_m must lie strictly inside (0,1), got " +
                    std::to_string(lambda));
    }
}

// lambda*d1 + (1-lambda)*d2 in double, with the larger coefficient canonically
// first (same symmetry argument as lerp).
inline double interp_pair(double lambda, double d1, double d2) {
    if (lambda < 0.5) {
        const double w = 1.0 - lambda;
        return w * d2 + (1.0 - w) * d1;
    }
    return lambda * d1 + (1.0 - lambda) * d2;
}

// base + lambda*d1 + (1-lambda)*d2 over precomputed delta tensors.
TensorMap m3_combine_deltas(const TensorMap& base, const TensorMap& d1, const TensorMap& d2,
                            double lambda) {
    TensorMap out;
    out.set_identity(base.identity());
    for (const auto& [name, tb] : base) {
        const Tensor& t1 = d1.at(name);
        const Tensor& t2 = d2.at(name);
        Tensor result;
        result.shape = tb.shape;
        result.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            result.data[i] = static_cast<float>(
                static_cast<double>(tb.data[i]) +
                interp_pair(lambda, static_cast<double>(t1.data[i]),
                            static_cast<double>(t2.data[i])));
        }
        out.insert(name, std::move(result));
    }
    return out;
}

}  // namespace

TensorMap average_merge(const TensorMap& theta1, const TensorMap& theta2) {
    return lerp(theta1, theta2, 0.5);
}

TensorMap task_arithmetic(const TensorMap& base, std::span<const TensorMap> models,
                          double scaling) {
    if (models.empty()) throw Error("task_arithmetic: needs at least one model");
    if (!std::isfinite(scaling)) throw Error("task_arithmetic: scaling must be finite");
    for (const TensorMap& m : models) TensorMap::check_congruent(base, m);

    TensorMap out;
    out.set_identity(base.identity());
    for (const auto& [name, tb] : base) {
        Tensor result;
        result.shape = tb.shape;
        result.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            const double b = static_cast<double>(tb.data[i]);
            double sum = 0.0;
            for (const TensorMap& m : models) {
                sum += static_cast<double>(m.at(name).data[i]) - b;
            }
            result.data[i] = static_cast<float>(b + scaling * sum);
        }
        out.insert(name, std::move(result));
    }
    return out;
}

TensorMap m3_average(const TensorMap& theta1, const TensorMap& theta2,
                     const SamplingRecord& rec) {
    require_open_unit(rec.lambda_m, "m3_average");
    return lerp(theta1, theta2, rec.lambda_m);
}

TensorMap m3_task_arithmetic(const TensorMap& base, const TensorMap& theta1,
                             const TensorMap& theta2, const SamplingRecord& rec) {
    require_open_unit(rec.lambda_m, "m3_task_arithmetic");
    // deltas live at storage precision, so sparsifying them with drop rate 0
    // is exactly the identity
    const DeltaSet d1 = delta(theta1, base);
    const DeltaSet d2 = delta(theta2, base);
    return m3_combine_deltas(base, d1.tensors, d2.tensors, rec.lambda_m);
}

DeltaSet dare_sparsify(const DeltaSet& d, const SparsifyConfig& cfg) {
    if (!(cfg.drop_rate >= 0.0 && cfg.drop_rate < 1.0)) {
        throw Error("dare_sparsify: drop rate must lie in [0,1), got " +
                    std::to_string(cfg.drop_rate));
    }
    const double rescale = 1.0 / (1.0 - cfg.drop_rate);
    DeltaSet out;
    out.base_id = d.base_id;
    out.tensors.set_identity(d.tensors.identity());
    for (const auto& [name, tensor] : d.tensors) {
        // per-tensor mask stream keyed on the name, independent of map order
        CounterRng rng(substream(cfg.seed, fnv1a(name)));
        Tensor result;
        result.shape = tensor.shape;
        result.data.resize(tensor.data.size());
        for (std::size_t i = 0; i < tensor.data.size(); ++i) {
            const double u = rng.next_open01();
            result.data[i] = u < cfg.drop_rate
                                 ? 0.0f
                                 : static_cast<float>(rescale *
                                                      static_cast<double>(tensor.data[i]));
        }
        out.tensors.insert(name, std::move(result));
    }
    return out;
}

namespace {

TiesWork ties_prepare_impl(const TensorMap& base,
                           std::span<const TensorMap* const> models,
                           double retain_ratio) {
    if (models.empty()) throw Error("ties: needs at least one model");
    if (!(retain_ratio > 0.0 && retain_ratio <= 1.0)) {
        throw Error("ties: retain ratio must lie in (0,1], got " +
                    std::to_string(retain_ratio));
    }
    for (const TensorMap* m : models) TensorMap::check_congruent(base, *m);

    TiesWork work;
    work.trimmed.reserve(models.size());
    work.retain_mask.reserve(models.size());

    for (const TensorMap* model : models) {
        const TensorMap& m = *model;
        DeltaSet d = delta(m, base);
        TensorMap mask;
        TensorMap trimmed;
        trimmed.set_identity(d.tensors.identity());
        for (const auto& [name, tensor] : d.tensors) {
            const std::size_t n = tensor.data.size();
            const std::size_t keep =
                n == 0 ? 0
                       : static_cast<std::size_t>(
                             std::ceil(retain_ratio * static_cast<double>(n)));
            // order by magnitude descending, ties by lower flat index
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::nth_element(order.begin(),
                             order.begin() + std::min(keep, n),
                             order.end(), [&](std::size_t a, std::size_t b) {
                                 const float ma = std::fabs(tensor.data[a]);
                                 const float mb = std::fabs(tensor.data[b]);
                                 if (ma != mb) return ma > mb;
                                 return a < b;
                             });
            Tensor tm;
            tm.shape = tensor.shape;
            tm.data.assign(n, 0.0f);
            Tensor tk;
            tk.shape = tensor.shape;
            tk.data.assign(n, 0.0f);
            for (std::size_t r = 0; r < std::min(keep, n); ++r) {
                tm.data[order[r]] = 1.0f;
                tk.data[order[r]] = tensor.data[order[r]];
            }
            mask.insert(name, std::move(tm));
            trimmed.insert(name, std::move(tk));
        }
        work.retain_mask.push_back(std::move(mask));
        DeltaSet trimmed_set;
        trimmed_set.base_id = d.base_id;
        trimmed_set.tensors = std::move(trimmed);
        work.trimmed.push_back(std::move(trimmed_set));
    }

    // elect per-parameter sign by magnitude mass; exact ties elect +1
    for (const auto& [name, tb] : base) {
        Tensor sign;
        sign.shape = tb.shape;
        sign.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            double pos = 0.0;
            double neg = 0.0;
            for (const DeltaSet& t : work.trimmed) {
                const float v = t.tensors.at(name).data[i];
                if (v > 0.0f) pos += static_cast<double>(v);
                if (v < 0.0f) neg -= static_cast<double>(v);
            }
            sign.data[i] = pos >= neg ? 1.0f : -1.0f;
        }
        work.elected_sign.insert(name, std::move(sign));
    }
    return work;
}

}  // namespace

TiesWork ties_prepare(const TensorMap& base, std::span<const TensorMap> models,
                      double retain_ratio) {
    std::vector<const TensorMap*> pointers;
    pointers.reserve(models.size());
    for (const TensorMap& m : models) pointers.push_back(&m);
    return ties_prepare_impl(base, pointers, retain_ratio);
}

namespace {

bool agrees_with_sign(float value, float sign) {
    if (value == 0.0f) return false;
    return (value > 0.0f) == (sign > 0.0f);
}

TensorMap assemble_from_delta(const TensorMap& base, const TensorMap& merged_delta,
                              double scaling) {
    TensorMap out;
    out.set_identity(base.identity());
    for (const auto& [name, tb] : base) {
        const Tensor& td = merged_delta.at(name);
        Tensor result;
        result.shape = tb.shape;
        result.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            result.data[i] = static_cast<float>(static_cast<double>(tb.data[i]) +
                                                scaling * static_cast<double>(td.data[i]));
        }
        out.insert(name, std::move(result));
    }
    return out;
}

}  // namespace

TensorMap ties_merge(const TensorMap& base, std::span<const TensorMap> models,
                     double retain_ratio, double scaling) {
    if (!std::isfinite(scaling)) throw Error("ties: scaling must be finite");
    TiesWork work = ties_prepare(base, models, retain_ratio);

    TensorMap merged_delta;
    for (const auto& [name, tb] : base) {
        const Tensor& sign = work.elected_sign.at(name);
        Tensor result;
        result.shape = tb.shape;
        result.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            // disjoint mean over the retained deltas matching the elected sign
            double sum = 0.0;
            int count = 0;
            for (const DeltaSet& t : work.trimmed) {
                const float v = t.tensors.at(name).data[i];
                if (agrees_with_sign(v, sign.data[i])) {
                    sum += static_cast<double>(v);
                    ++count;
                }
            }
            result.data[i] = count == 0 ? 0.0f : static_cast<float>(sum / count);
        }
        merged_delta.insert(name, std::move(result));
    }
    return assemble_from_delta(base, merged_delta, scaling);
}

TensorMap ties_m3_merge(const TensorMap& base, const TensorMap& theta1,
                        const TensorMap& theta2, double retain_ratio, double scaling,
                        const SamplingRecord& rec) {
    if (!std::isfinite(scaling)) throw Error("ties: scaling must be finite");
    require_open_unit(rec.lambda_m, "ties_m3_merge");
    const TensorMap* models[] = {&theta1, &theta2};
    TiesWork work = ties_prepare_impl(base, models, retain_ratio);
    const double lambda = rec.lambda_m;

    TensorMap merged_delta;
    for (const auto& [name, tb] : base) {
        const Tensor& sign = work.elected_sign.at(name);
        const Tensor& d1 = work.trimmed[0].tensors.at(name);
        const Tensor& d2 = work.trimmed[1].tensors.at(name);
        Tensor result;
        result.shape = tb.shape;
        result.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            const bool keep1 = agrees_with_sign(d1.data[i], sign.data[i]);
            const bool keep2 = agrees_with_sign(d2.data[i], sign.data[i]);
            float v = 0.0f;
            if (keep1 && keep2) {
                v = static_cast<float>(interp_pair(lambda,
                                                   static_cast<double>(d1.data[i]),
                                                   static_cast<double>(d2.data[i])));
            } else if (keep1) {
                v = d1.data[i];  // preserved model passes through unchanged
            } else if (keep2) {
                v = d2.data[i];
            }
            result.data[i] = v;
        }
        merged_delta.insert(name, std::move(result));
    }
    return assemble_from_delta(base, merged_delta, scaling);
}

namespace {

ManifestInput manifest_input(const char* role, const TensorMap& map) {
    return ManifestInput{role, map.identity(), ""};
}

}  // namespace

MergeResult merge(const MergeRecipe& recipe, const TensorMap* base,
                  std::span<const TensorMap> models) {
    const MergeMethod method = recipe.method;
    const bool m3 = is_m3_method(method);

    if (m3 && !recipe.lambda_m) {
        throw RecipeError(std::string(method_name(method)) + " requires lambda_m");
    }
    if (!m3 && recipe.lambda_m) {
        throw RecipeError(std::string(method_name(method)) + " does not take lambda_m");
    }
    if (!m3 && recipe.sampling) {
        throw RecipeError(std::string(method_name(method)) + " does not take a sampling record");
    }
    const bool needs_scaling =
        method == MergeMethod::task_arithmetic || method == MergeMethod::ties ||
        method == MergeMethod::m3_ties;
    if (needs_scaling && !recipe.scaling_term) {
        throw RecipeError(std::string(method_name(method)) + " requires scaling_term");
    }
    if (!needs_scaling && recipe.scaling_term) {
        throw RecipeError(std::string(method_name(method)) + " does not take scaling_term");
    }
    const bool needs_retain = method == MergeMethod::ties || method == MergeMethod::m3_ties;
    if (needs_retain && !recipe.retain_ratio) {
        throw RecipeError(std::string(method_name(method)) + " requires retain_ratio");
    }
    if (!needs_retain && recipe.retain_ratio) {
        throw RecipeError(std::string(method_name(method)) + " does not take retain_ratio");
    }
    if (recipe.sampling && recipe.lambda_m &&
        recipe.sampling->lambda_m != *recipe.lambda_m) {
        throw RecipeError("sampling record and lambda_m disagree");
    }
    const bool needs_base = is_delta_space_method(method) || recipe.dare.has_value();
    if (needs_base && !base) {
        throw RecipeError(std::string(method_name(method)) +
                          (recipe.dare ? " with dare" : "") + " requires a base checkpoint");
    }
    const bool pairwise = method != MergeMethod::task_arithmetic && method != MergeMethod::ties;
    if (pairwise && models.size() != 2) {
        throw RecipeError(std::string(method_name(method)) + " merges exactly two models, got " +
                          std::to_string(models.size()));
    }
    if (!pairwise && models.empty()) {
        throw RecipeError(std::string(method_name(method)) + " needs at least one model");
    }

    // DARE preprocessing: sparsify each model's delta against the base, then
    // run the method on the sparsified deltas (value-space methods see
    // reassembled models).
    std::vector<DeltaSet> sparsified;
    std::vector<TensorMap> rebuilt;
    std::span<const TensorMap> effective_models = models;
    if (recipe.dare) {
        sparsified.reserve(models.size());
        for (const TensorMap& m : models) {
            DeltaSet d = delta(m, *base);
            // per-model substream so the two masks are independent yet
            // invariant under model order
            SparsifyConfig per_model{recipe.dare->drop_rate,
                                     substream(recipe.dare->seed, fnv1a(m.identity()))};
            sparsified.push_back(dare_sparsify(d, per_model));
        }
        if (method == MergeMethod::average || method == MergeMethod::m3_average) {
            rebuilt.reserve(models.size());
            for (std::size_t j = 0; j < models.size(); ++j) {
                WeightedDelta wd{1.0, &sparsified[j]};
                TensorMap m = apply_deltas(*base, std::span<const WeightedDelta>(&wd, 1));
                m.set_identity(models[j].identity());
                rebuilt.push_back(std::move(m));
            }
            effective_models = rebuilt;
        }
    }

    const SamplingRecord record = recipe.sampling.value_or(
        SamplingRecord{1.0, 0, m3 ? *recipe.lambda_m : 0.5});

    TensorMap merged;
    switch (method) {
        case MergeMethod::average:
            merged = average_merge(effective_models[0], effective_models[1]);
            break;
        case MergeMethod::m3_average:
            merged = m3_average(effective_models[0], effective_models[1], record);
            break;
        case MergeMethod::task_arithmetic: {
            if (recipe.dare) {
                std::vector<WeightedDelta> weighted;
                weighted.reserve(sparsified.size());
                for (const DeltaSet& d : sparsified) {
                    weighted.push_back(WeightedDelta{*recipe.scaling_term, &d});
                }
                merged = apply_deltas(*base, weighted);
            } else {
                merged = task_arithmetic(*base, models, *recipe.scaling_term);
            }
            break;
        }
        case MergeMethod::m3_task_arithmetic: {
            if (recipe.dare) {
                merged = m3_combine_deltas(*base, sparsified[0].tensors,
                                           sparsified[1].tensors, *recipe.lambda_m);
            } else {
                merged = m3_task_arithmetic(*base, models[0], models[1], record);
            }
            break;
        }
        case MergeMethod::ties:
        case MergeMethod::m3_ties: {
            std::vector<TensorMap> ties_inputs;
            std::span<const TensorMap> span_models = models;
            if (recipe.dare) {
                ties_inputs.reserve(sparsified.size());
                for (std::size_t j = 0; j < sparsified.size(); ++j) {
                    WeightedDelta wd{1.0, &sparsified[j]};
                    TensorMap m = apply_deltas(*base, std::span<const WeightedDelta>(&wd, 1));
                    m.set_identity(models[j].identity());
                    ties_inputs.push_back(std::move(m));
                }
                span_models = ties_inputs;
            }
            if (method == MergeMethod::ties) {
                merged = ties_merge(*base, span_models, *recipe.retain_ratio,
                                    *recipe.scaling_term);
            } else {
                merged = ties_m3_merge(*base, span_models[0], span_models[1],
                                       *recipe.retain_ratio, *recipe.scaling_term, record);
            }
            break;
        }
    }

    MergeManifest manifest;
    manifest.method = std::string(method_name(method));
    manifest.toolkit_version = kVersion;
    if (base && needs_base) manifest.inputs.push_back(manifest_input("base", *base));
    for (const TensorMap& m : models) manifest.inputs.push_back(manifest_input("model", m));
    manifest.scaling_term = recipe.scaling_term;
    manifest.retain_ratio = recipe.retain_ratio;
    manifest.dare = recipe.dare;
    if (m3) {
        ManifestSampling sampling;
        sampling.lambda_m = *recipe.lambda_m;
        if (recipe.sampling) {
            sampling.alpha = recipe.sampling->alpha;
            sampling.seed = recipe.sampling->seed;
        }
        manifest.sampling = sampling;
    }
    return MergeResult{std::move(merged), std::move(manifest)};
}

}  // namespace mixmerge
