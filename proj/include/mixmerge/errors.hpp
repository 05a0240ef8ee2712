#pragma once

#include <stdexcept>
#include <string>

namespace mixmerge {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two tensor collections disagree on the shape of a same-named tensor.
class ShapeMismatchError : public Error {
public:
    using Error::Error;
};

/// Two tensor collections do not share the same name set.
class NameSetMismatchError : public Error {
public:
    using Error::Error;
};

/// A delta set was computed against a different base checkpoint.
class BaseMismatchError : public Error {
public:
    using Error::Error;
};

/// A tensor contains NaN or infinite values.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

/// A merge recipe is inconsistent with its method (missing or extraneous fields).
class RecipeError : public Error {
public:
    using Error::Error;
};

/// A checkpoint file violates the container contract.
class CheckpointFormatError : public Error {
public:
    enum class Kind {
        bad_header,         // unparsable or structurally invalid header JSON
        bad_offsets,        // overlapping, gapped, or shape-inconsistent data offsets
        truncated_payload,  // file shorter than the header or offsets require
        non_finite,         // payload carries NaN/Inf values
    };

    CheckpointFormatError(Kind kind, const std::string& message)
        : Error(message), kind_(kind) {}

    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// A merge manifest violates the documented JSON schema. The message names the
/// offending field path.
class ManifestSchemaError : public Error {
public:
    using Error::Error;
};

}  // namespace mixmerge
