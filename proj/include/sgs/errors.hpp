#pragma once

#include <stdexcept>
#include <string>

namespace sgs {

// Malformed or inconsistent input data (files, headers, shapes).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or diverged computations.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sgs
