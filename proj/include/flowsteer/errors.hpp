#pragma once

#include <stdexcept>
#include <string>

namespace flowsteer {

/// Shapes or extents that do not fit together.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller violated an operation's precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed input text or bytes. Carries the byte offset (or line) of the fault.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t position)
        : std::runtime_error(what), position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values appeared where training requires finite ones.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A checkpoint was written for a different model configuration.
class CheckpointMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace flowsteer
