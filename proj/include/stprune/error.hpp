#pragma once

#include <stdexcept>
#include <string>

namespace stprune {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/size mismatches and out-of-range arguments.
class DimError : public Error {
public:
    explicit DimError(const std::string& msg) : Error(msg) {}
};

// Malformed or truncated model/calibration files.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// A FLOPs budget below what the minimum-keep floor can reach.
class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& msg) : Error(msg) {}
};

// Numerical failure (singular triangular system, non-finite data).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace stprune
