#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace histofuse {

// Shape or extent mismatch between operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A hyper-parameter outside its documented domain.
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Class label or node index out of range.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Caller broke a precondition (non-scalar loss, missing gradient, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// NaN/Inf produced somewhere in a forward or backward pass.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad data: empty regions, inconsistent datasets, missing files.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A metric that is undefined for the given input (e.g. AUC with one class).
struct UndefinedMetricError : std::domain_error {
    using std::domain_error::domain_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace histofuse
