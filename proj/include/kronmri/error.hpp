#pragma once

#include <stdexcept>
#include <string>

namespace kronmri {

enum class ErrorKind { shape, config, numeric, io, contract };

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::shape: return "shape_error";
        case ErrorKind::config: return "config_error";
        case ErrorKind::numeric: return "numeric_error";
        case ErrorKind::io: return "io_error";
        case ErrorKind::contract: return "contract_error";
    }
    return "error";
}

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    // CLI exit status: 2 config/shape/contract, 3 numeric, 4 I/O.
    int exit_code() const noexcept {
        switch (kind_) {
            case ErrorKind::numeric: return 3;
            case ErrorKind::io: return 4;
            default: return 2;
        }
    }

   private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};
struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

}  // namespace kronmri
