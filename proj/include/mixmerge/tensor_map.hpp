#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixmerge/errors.hpp"

namespace mixmerge {

/// Storage precision of tensor payloads. Only 32-bit floats in v1; the tag is
/// kept so the container format can grow other widths without changing shape.
enum class ElementKind { f32 };

struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (std::int64_t d : shape) n *= d;
        return n;
    }
};

/// An ordered collection of named, shaped f32 tensors. Iteration order over
/// names is always lexicographic. Every stored value is finite; insertion
/// rejects NaN/Inf and shape/length inconsistencies.
class TensorMap {
public:
    using Storage = std::map<std::string, Tensor, std::less<>>;
    using const_iterator = Storage::const_iterator;

    TensorMap() = default;
    explicit TensorMap(std::string identity) : identity_(std::move(identity)) {}

    /// Inserts or replaces a tensor. Throws NonFiniteError / ShapeMismatchError
    /// when the tensor violates the map invariants.
    void insert(std::string name, Tensor tensor);

    bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }
    const Tensor* find(std::string_view name) const;
    const Tensor& at(std::string_view name) const;

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::int64_t total_elements() const;
    std::vector<std::string> names() const;

    const_iterator begin() const { return entries_.begin(); }
    const_iterator end() const { return entries_.end(); }

    const std::string& identity() const { return identity_; }
    void set_identity(std::string identity) { identity_ = std::move(identity); }

    ElementKind element_kind() const { return ElementKind::f32; }

    bool same_contents(const TensorMap& other) const;  // bitwise, ignores identity

    /// Throws NameSetMismatchError (listing the symmetric difference) or
    /// ShapeMismatchError (naming the offending tensor) unless a and b carry
    /// the same names with congruent shapes.
    static void check_congruent(const TensorMap& a, const TensorMap& b);

private:
    Storage entries_;
    std::string identity_;
};

/// Parameter offsets relative to a named base checkpoint.
struct DeltaSet {
    std::string base_id;
    TensorMap tensors;
};

/// One sign-conflicting parameter: delta1 and delta2 have opposite signs, and
/// lambda_star in (0,1) is the interpolation coefficient at which the combined
/// offset lambda*delta1 + (1-lambda)*delta2 crosses zero.
struct ConflictRecord {
    std::string tensor;
    std::int64_t index = 0;
    float delta1 = 0.0f;
    float delta2 = 0.0f;
    double lambda_star = 0.0;
};

struct ConflictProfile {
    std::vector<ConflictRecord> records;
    std::int64_t parameters_scanned = 0;
};

/// Combined offset of one parameter as a function of the interpolation
/// coefficient: f(lambda) = lambda*delta1 + (1-lambda)*delta2.
double combined_offset(const ConflictRecord& record, double lambda);

struct WeightedDelta {
    double coefficient = 0.0;
    const DeltaSet* deltas = nullptr;
};

/// result[i] = lambda*a[i] + (1-lambda)*b[i], accumulated in double and rounded
/// once to storage precision. lambda must lie in [0,1]; the exact endpoints
/// return bit-for-bit copies. Swapping (a,b) while replacing lambda with
/// 1-lambda yields a bit-identical result.
TensorMap lerp(const TensorMap& a, const TensorMap& b, double lambda);

/// tensors[i] = fine[i] - base[i]; base_id is taken from base's identity and
/// the delta inherits fine's identity.
DeltaSet delta(const TensorMap& fine, const TensorMap& base);

/// result = base + sum_j coefficient_j * delta_j, accumulated in double per
/// element. Every delta must be congruent with base and carry base's identity.
TensorMap apply_deltas(const TensorMap& base, std::span<const WeightedDelta> weighted);

/// Scans two congruent delta sets (sharing a base) for sign conflicts and
/// records the cancellation coefficient lambda_star = |d2| / (|d1| + |d2|) for
/// each. Parameters where either delta is zero carry no conflict.
ConflictProfile conflict_profile(const DeltaSet& d1, const DeltaSet& d2);

}  // namespace mixmerge
