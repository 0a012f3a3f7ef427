#pragma once

#include <stdexcept>
#include <string>

namespace racestrat {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File missing, unreadable or unwritable.
class IoError : public Error {
public:
    using Error::Error;
};

/// Input data violates a schema or a domain-type invariant.
class DataError : public Error {
public:
    using Error::Error;
};

/// Least-squares data cannot determine a quadratic (rank-deficient design).
class DegenerateDataError : public DataError {
public:
    using DataError::DataError;
};

/// Requested battery output exceeds the deliverable maximum.
class InfeasiblePowerError : public Error {
public:
    InfeasiblePowerError(const std::string& what, double max_power_w)
        : Error(what), max_power_w_(max_power_w) {}
    double max_power_w() const noexcept { return max_power_w_; }

private:
    double max_power_w_;
};

/// Thermal parameters put a coolant relation on its singular point.
class SingularConfigurationError : public Error {
public:
    using Error::Error;
};

/// Vehicle left the corridor geometry or stopped progressing along it.
class KinematicDomainError : public Error {
public:
    using Error::Error;
};

/// NLP solve did not produce a usable point.
class SolverError : public Error {
public:
    using Error::Error;
};

}  // namespace racestrat
