#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace muse {

// Coarse error categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
    config,     // invalid configuration or arguments
    data,       // malformed or inconsistent input data
    numeric,    // non-finite values during training or evaluation
    contract,   // caller violated an operation precondition
    dimension,  // tensor shape mismatch
    io,         // filesystem failure
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& m) : Error(ErrorKind::contract, m) {}
};

class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& m) : Error(ErrorKind::dimension, m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

// Feature-file parse failure; carries the byte offset where decoding stopped.
class ParseError : public DataError {
public:
    ParseError(const std::string& m, std::size_t offset)
        : DataError(m + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace muse
