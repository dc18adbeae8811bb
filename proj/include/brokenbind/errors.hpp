// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bb {

/// Violated precondition on shapes or argument ranges.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

class ContractError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// NaN/Inf, non-convergence, or a degenerate geometric configuration.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class DegenerateEmbeddingError : public NumericalError {
  public:
    using NumericalError::NumericalError;
};

/// Invalid experiment configuration. The message names the offending field.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed, missing, or inconsistent dataset/checkpoint files.
class DataError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace bb
