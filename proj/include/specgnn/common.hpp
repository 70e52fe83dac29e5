#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace specgnn {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or arity mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid parameter or configuration value supplied by the caller.
struct ConfigError : Error {
    using Error::Error;
};

// Missing, malformed, or unusable input data.
struct DataError : Error {
    using Error::Error;
};

// Numeric failure: divergence, degenerate input, non-finite values.
struct NumericError : Error {
    using Error::Error;
};

// 17 significant digits, enough to round-trip any double through text.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline bool all_finite(const double* p, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i)
        if (!std::isfinite(p[i])) return false;
    return true;
}

}  // namespace specgnn
