#include "lumen/errors.hpp"

namespace lumen {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Load: return "load error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Dimension: return "dimension error";
        case ErrorKind::Domain: return "domain error";
        case ErrorKind::Corpus: return "corpus error";
        case ErrorKind::Io: return "I/O error";
        case ErrorKind::Config: return "config error";
    }
    return "error";
}

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace lumen
