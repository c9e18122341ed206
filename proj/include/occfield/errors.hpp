// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace occ {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller handed in something that violates an operation's contract.
/// The command-line front end maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Something went wrong while doing valid work (I/O, divergence, empty data).
/// The command-line front end maps these to exit code 2.
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class OutOfRangeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DegenerateRayError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class OutOfRoiError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IncompleteTableError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class DivergenceError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class EmptySweepError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class UnsatisfiableSamplingError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

class EmptyMetricError : public RuntimeFailure {
public:
    using RuntimeFailure::RuntimeFailure;
};

} // namespace occ
