#pragma once

#include <stdexcept>
#include <string>

namespace lumen {

enum class ErrorKind {
    Load,       // missing or unreadable input file
    Format,     // unsupported or malformed file contents
    Dimension,  // shape or size mismatch
    Domain,     // argument outside its mathematical domain
    Corpus,     // empty or entirely unreadable corpus
    Io,         // write failure
    Config,     // invalid configuration value
};

const char* to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool ok, ErrorKind kind, const std::string& what) {
    if (!ok) fail(kind, what);
}

}  // namespace lumen
