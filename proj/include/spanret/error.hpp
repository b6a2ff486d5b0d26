#pragma once

#include <stdexcept>
#include <string>

namespace spanret {

enum class ErrorKind {
    invalid_argument,
    malformed_input,
    duplicate_id,
    io,
    version_mismatch,
    numeric,
    not_found,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

/// Process exit status used by the command line tool for each error kind.
[[nodiscard]] inline int exit_code(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::io: return 3;
    case ErrorKind::version_mismatch: return 4;
    case ErrorKind::malformed_input: return 5;
    case ErrorKind::numeric: return 6;
    case ErrorKind::invalid_argument: return 7;
    case ErrorKind::duplicate_id: return 8;
    case ErrorKind::not_found: return 9;
    }
    return 1;
}

} // namespace spanret
