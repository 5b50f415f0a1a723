#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace smre {

/// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Model or numerical domain failure (CLI exit code 1).
class DomainError : public Error {
  public:
    using Error::Error;
};

/// A characteristic left the admissible u-window.
class DomainEscape : public DomainError {
  public:
    using DomainError::DomainError;
};

/// Malformed input document or usage error (CLI exit code 2).
class ConfigError : public Error {
  public:
    using Error::Error;
};

namespace detail {

inline double factorial(int n) {
    double r = 1.0;
    for (int i = 2; i <= n; ++i) r *= i;
    return r;
}

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return std::round(r);
}

inline double ipow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
}

inline double sign_pow(int n) { return (n % 2 == 0) ? 1.0 : -1.0; }

/// Round-trip decimal representation used in all text outputs.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail
} // namespace smre
