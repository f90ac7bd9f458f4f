#pragma once

#include <stdexcept>
#include <string>

namespace usat {

/// Base for configuration / input validation failures. The CLI maps these
/// to exit code 1.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Base for failures arising mid-run (I/O, numerics). CLI exit code 2.
struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DivisibilityError : ValidationError { using ValidationError::ValidationError; };
struct CoverageError     : ValidationError { using ValidationError::ValidationError; };
struct DuplicateIdError  : ValidationError { using ValidationError::ValidationError; };
struct EmptySubsetError  : ValidationError { using ValidationError::ValidationError; };
struct FootprintError    : ValidationError { using ValidationError::ValidationError; };
struct DimensionError    : ValidationError { using ValidationError::ValidationError; };
struct AllocationError   : ValidationError { using ValidationError::ValidationError; };
struct ShapeError        : ValidationError { using ValidationError::ValidationError; };
struct UnknownBandError  : ValidationError { using ValidationError::ValidationError; };
struct EmptyGroupError   : ValidationError { using ValidationError::ValidationError; };
struct RatioError        : ValidationError { using ValidationError::ValidationError; };
struct RangeError        : ValidationError { using ValidationError::ValidationError; };
struct AllVisibleError   : ValidationError { using ValidationError::ValidationError; };
struct OutOfBoundsError  : ValidationError { using ValidationError::ValidationError; };
struct AlignmentError    : ValidationError { using ValidationError::ValidationError; };
struct UnknownClassError : ValidationError { using ValidationError::ValidationError; };
struct NoPositivesError  : ValidationError { using ValidationError::ValidationError; };
struct GeometryMismatchError : ValidationError { using ValidationError::ValidationError; };
struct ConfigError       : ValidationError { using ValidationError::ValidationError; };

struct NonFiniteError    : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };
struct IoError           : RuntimeFailure { using RuntimeFailure::RuntimeFailure; };

} // namespace usat
