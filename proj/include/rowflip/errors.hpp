#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct DegenerateQuantizerError : Error {
    using Error::Error;
};

struct OutOfRangeError : Error {
    using Error::Error;
};

struct TrainingFailure : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

// A flip's recorded direction disagrees with the bit currently stored.
struct StaleModeError : Error {
    using Error::Error;
};

// A hammering action flipped a bit outside the target set, or missed one.
struct PrecisionViolation : Error {
    using Error::Error;
};

// No assignment of physical frames satisfies a target bit.
struct Unsatisfiable : Error {
    Unsatisfiable(const std::string& what, std::size_t failed_index) : Error(what), failed(failed_index) {}
    std::size_t failed;
};

// The page cache handed out a frame other than the planned one.
struct MappingMismatch : Error {
    using Error::Error;
};

// No candidate chain reached its objective.
struct Infeasible : Error {
    using Error::Error;
};

struct ThresholdViolation : Error {
    using Error::Error;
};

}  // namespace rf
