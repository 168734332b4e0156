#pragma once

#include <stdexcept>
#include <string>

namespace colloc {

/// Base class for all numerical failures raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Moment matrix is numerically rank-deficient at the working tolerance.
class SingularMoment : public Error {
public:
    explicit SingularMoment(const std::string& what, int point = -1)
        : Error(what), point_index(point) {}
    int point_index;
};

/// Bordered (constraint-augmented) system is singular.
class SingularBordered : public Error {
public:
    using Error::Error;
};

/// Denominator of a ratio-form stencil vanished.
class ZeroDenominator : public Error {
public:
    using Error::Error;
};

/// Requested derivative order is outside what the operation supports.
class UnsupportedOrder : public Error {
public:
    using Error::Error;
};

/// Method name not in the preset ledger.
class UnknownMethod : public Error {
public:
    using Error::Error;
};

/// Parameter validation failure (bad value, bad combination).
class InvalidParams : public Error {
public:
    using Error::Error;
};

/// Global linear solve did not reach the target residual.
class LinearSolveFailure : public Error {
public:
    using Error::Error;
};

} // namespace colloc
