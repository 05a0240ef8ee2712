#include "mixmerge/tensor_map.hpp"

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <utility>

namespace mixmerge {

namespace {

std::string shape_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ",";
        out << shape[i];
    }
    out << "]";
    return out.str();
}

void check_finite(const std::string& name, const Tensor& tensor) {
    for (std::size_t i = 0; i < tensor.data.size(); ++i) {
        if (!std::isfinite(tensor.data[i])) {
            throw NonFiniteError("tensor '" + name + "' has a non-finite value at index " +
                                 std::to_string(i));
        }
    }
}

}  // namespace

void TensorMap::insert(std::string name, Tensor tensor) {
    for (std::int64_t d : tensor.shape) {
        if (d < 0) {
            throw ShapeMismatchError("tensor '" + name + "' has negative dimension in shape " +
                                     shape_string(tensor.shape));
        }
    }
    if (static_cast<std::int64_t>(tensor.data.size()) != tensor.numel()) {
        throw ShapeMismatchError("tensor '" + name + "' has " +
                                 std::to_string(tensor.data.size()) + " values but shape " +
                                 shape_string(tensor.shape) + " implies " +
                                 std::to_string(tensor.numel()));
    }
    check_finite(name, tensor);
    entries_.insert_or_assign(std::move(name), std::move(tensor));
}

const Tensor* TensorMap::find(std::string_view name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
}

const Tensor& TensorMap::at(std::string_view name) const {
    const Tensor* t = find(name);
    if (!t) throw NameSetMismatchError("no tensor named '" + std::string(name) + "'");
    return *t;
}

std::int64_t TensorMap::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, tensor] : entries_) n += tensor.numel();
    return n;
}

std::vector<std::string> TensorMap::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, tensor] : entries_) out.push_back(name);
    return out;
}

bool TensorMap::same_contents(const TensorMap& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto it = other.entries_.begin();
    for (const auto& [name, tensor] : entries_) {
        if (name != it->first || tensor.shape != it->second.shape) return false;
        const auto& a = tensor.data;
        const auto& b = it->second.data;
        for (std::size_t i = 0; i < a.size(); ++i) {
            // bitwise comparison; NaN cannot occur but -0.0 vs 0.0 must differ
            if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i]))
                return false;
        }
        ++it;
    }
    return true;
}

void TensorMap::check_congruent(const TensorMap& a, const TensorMap& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    std::vector<std::string> only_a;
    std::vector<std::string> only_b;
    while (ia != a.end() || ib != b.end()) {
        if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
            only_a.push_back(ia->first);
            ++ia;
        } else if (ia == a.end() || ib->first < ia->first) {
            only_b.push_back(ib->first);
            ++ib;
        } else {
            if (ia->second.shape != ib->second.shape) {
                throw ShapeMismatchError("tensor '" + ia->first + "' has shape " +
                                         shape_string(ia->second.shape) + " vs " +
                                         shape_string(ib->second.shape));
            }
            ++ia;
            ++ib;
        }
    }
    if (!only_a.empty() || !only_b.empty()) {
        std::ostringstream msg;
        msg << "tensor name sets differ;";
        if (!only_a.empty()) {
            msg << " only in first:";
            for (const auto& n : only_a) msg << " '" << n << "'";
        }
        if (!only_b.empty()) {
            msg << " only in second:";
            for (const auto& n : only_b) msg << " '" << n << "'";
        }
        throw NameSetMismatchError(msg.str());
    }
}

double combined_offset(const ConflictRecord& record, double lambda) {
    return lambda * static_cast<double>(record.delta1) +
           (1.0 - lambda) * static_cast<double>(record.delta2);
}

namespace {

// Interpolation kernel with the larger coefficient canonically on the first
// operand. 1-w is exact for w in [0.5,1] (Sterbenz), so calling with (b, a,
// 1-lambda) runs the identical float sequence as (a, b, lambda); that makes
// order-swap plus coefficient complement bit-stable.
TensorMap lerp_canonical(const TensorMap& hi, const TensorMap& lo, double w) {
    TensorMap out;
    for (const auto& [name, th] : hi) {
        const Tensor& tl = lo.at(name);
        Tensor result;
        result.shape = th.shape;
        result.data.resize(th.data.size());
        const double cw = 1.0 - w;  // exact: w >= 0.5
        for (std::size_t i = 0; i < th.data.size(); ++i) {
            result.data[i] = static_cast<float>(w * static_cast<double>(th.data[i]) +
                                                cw * static_cast<double>(tl.data[i]));
        }
        out.insert(name, std::move(result));
    }
    return out;
}

TensorMap copy_contents(const TensorMap& src) {
    TensorMap out;
    for (const auto& [name, tensor] : src) out.insert(name, tensor);
    return out;
}

}  // namespace

TensorMap lerp(const TensorMap& a, const TensorMap& b, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw Error("lerp: lambda must lie in [0,1], got " + std::to_string(lambda));
    }
    TensorMap::check_congruent(a, b);
    if (lambda == 1.0) return copy_contents(a);
    if (lambda == 0.0) return copy_contents(b);
    return lambda < 0.5 ? lerp_canonical(b, a, 1.0 - lambda) : lerp_canonical(a, b, lambda);
}

DeltaSet delta(const TensorMap& fine, const TensorMap& base) {
    TensorMap::check_congruent(fine, base);
    DeltaSet out;
    out.base_id = base.identity();
    out.tensors.set_identity(fine.identity());
    for (const auto& [name, tf] : fine) {
        const Tensor& tb = base.at(name);
        Tensor d;
        d.shape = tf.shape;
        d.data.resize(tf.data.size());
        for (std::size_t i = 0; i < tf.data.size(); ++i) {
            d.data[i] = static_cast<float>(static_cast<double>(tf.data[i]) -
                                           static_cast<double>(tb.data[i]));
        }
        out.tensors.insert(name, std::move(d));
    }
    return out;
}

TensorMap apply_deltas(const TensorMap& base, std::span<const WeightedDelta> weighted) {
    for (const auto& w : weighted) {
        if (!w.deltas) throw Error("apply_deltas: null delta entry");
        if (w.deltas->base_id != base.identity()) {
            throw BaseMismatchError("delta set was computed against base '" +
                                    w.deltas->base_id + "', not '" + base.identity() + "'");
        }
        TensorMap::check_congruent(base, w.deltas->tensors);
    }
    TensorMap out;
    out.set_identity(base.identity());
    for (const auto& [name, tb] : base) {
        Tensor result;
        result.shape = tb.shape;
        result.data.resize(tb.data.size());
        for (std::size_t i = 0; i < tb.data.size(); ++i) {
            double acc = static_cast<double>(tb.data[i]);
            for (const auto& w : weighted) {
                acc += w.coefficient *
                       static_cast<double>(w.deltas->tensors.at(name).data[i]);
            }
            result.data[i] = static_cast<float>(acc);
        }
        out.insert(name, std::move(result));
    }
    return out;
}

ConflictProfile conflict_profile(const DeltaSet& d1, const DeltaSet& d2) {
    if (d1.base_id != d2.base_id) {
        throw BaseMismatchError("delta sets have different bases: '" + d1.base_id +
                                "' vs '" + d2.base_id + "'");
    }
    TensorMap::check_congruent(d1.tensors, d2.tensors);
    ConflictProfile profile;
    for (const auto& [name, t1] : d1.tensors) {
        const Tensor& t2 = d2.tensors.at(name);
        for (std::size_t i = 0; i < t1.data.size(); ++i) {
            ++profile.parameters_scanned;
            const float v1 = t1.data[i];
            const float v2 = t2.data[i];
            if (v1 == 0.0f || v2 == 0.0f) continue;
            if ((v1 > 0.0f) == (v2 > 0.0f)) continue;
            const double a1 = std::fabs(static_cast<double>(v1));
            const double a2 = std::fabs(static_cast<double>(v2));
            profile.records.push_back(ConflictRecord{
                name, static_cast<std::int64_t>(i), v1, v2, a2 / (a1 + a2)});
        }
    }
    return profile;
}

}  // namespace mixmerge
