#pragma once

#include <stdexcept>
#include <string>

namespace ncil {

// Base type for all library errors. Catch this to handle anything below.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };     // shapes disagree / d < K
struct DegenerateInput : Error { using Error::Error; };    // zero vectors, dependent columns
struct NotSymmetric : Error { using Error::Error; };
struct NotOrthogonal : Error { using Error::Error; };
struct InvalidExpansion : Error { using Error::Error; };   // K_new <= current K
struct EmptyClass : Error { using Error::Error; };         // declared class with no samples
struct EmptyInput : Error { using Error::Error; };
struct DegenerateGeometry : Error { using Error::Error; }; // all class means identical
struct UnknownClass : Error { using Error::Error; };
struct DuplicateClass : Error { using Error::Error; };
struct OverlapError : Error { using Error::Error; };       // task class sets intersect
struct IoError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

} // namespace ncil
