#pragma once

#include <stdexcept>
#include <string>

namespace saanet {

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A layer or run configuration cannot produce a valid computation.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

/// A caller violated an operation precondition.
class ContractError : public std::logic_error {
   public:
    using std::logic_error::logic_error;
};

/// Malformed or unreadable file.
class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace saanet
