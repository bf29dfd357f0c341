// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdlab {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operands whose shapes do not conform. The message names both shapes.
class ShapeError : public Error {
public:
    ShapeError(const std::string& op, const Shape& a, const Shape& b)
        : Error(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)), lhs(a), rhs(b) {}
    ShapeError(const std::string& op, const std::string& what) : Error(op + ": " + what) {}

    Shape lhs;
    Shape rhs;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf surfaced during training or sampling.
class NumericalDivergence : public Error {
public:
    NumericalDivergence(std::int64_t at_step, const std::string& what)
        : Error("numerical divergence at step " + std::to_string(at_step) + ": " + what), step(at_step) {}

    std::int64_t step;
};

}  // namespace sdlab
