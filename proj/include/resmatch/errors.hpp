#pragma once

#include <stdexcept>
#include <string>

namespace resmatch {

// Base class for all structured errors raised by the library. CLI entry
// points catch this (and std::exception) and exit nonzero with the message.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/operator dimension mismatch. The message names the offending axis.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Violated operation precondition (backward on non-scalar, label out of
// range, consumed tape, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Invalid DistillConfig / model spec / CLI arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset-level problems (class with too few images, missing split).
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed input file; carries the byte offset of the defect.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// A feature map collapsed (or would collapse) under the requested input
// resolution; names the layer.
class ResolutionError : public Error {
public:
    using Error::Error;
};

// Non-finite value in a loss or gradient. Carries which term went bad and
// the precision mode it was computed under.
class NumericError : public Error {
public:
    NumericError(const std::string& term, const std::string& precision_mode,
                 const std::string& context = "")
        : Error("non-finite value in '" + term + "' (precision " + precision_mode + ")" +
                (context.empty() ? "" : " at " + context)),
          term_(term),
          precision_mode_(precision_mode) {}
    const std::string& term() const { return term_; }
    const std::string& precision_mode() const { return precision_mode_; }

private:
    std::string term_;
    std::string precision_mode_;
};

// Filesystem failures, annotated with the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace resmatch
