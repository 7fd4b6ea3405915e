#pragma once

#include <stdexcept>
#include <string>

namespace dbf {

// Incompatible tensor or layer shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Misuse of the gradient tape (empty tape, non-scalar loss, mixed tapes).
class AutodiffError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid configuration value or schedule.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Two ledgers or runs that cannot be compared.
class LedgerError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File system or format failures; the message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dbf
