#pragma once

#include <stdexcept>
#include <string>

namespace uqseg {

// Error categories map onto CLI exit codes: usage -> 1, everything else -> 2.
enum class ErrKind {
    usage,       // bad invocation or API misuse
    format,      // malformed file container (magic, kind byte)
    length,      // payload size disagrees with header
    data,        // non-finite or out-of-domain values
    shape,       // dimension mismatch between volumes
    schema,      // unknown label id or group name
    config,      // inconsistent configuration
    io,          // filesystem failure or missing input
    divergence,  // training produced a non-finite loss
};

class Error : public std::runtime_error {
public:
    Error(ErrKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrKind kind() const { return kind_; }

private:
    ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrKind kind, const std::string& what) {
    if (!cond) fail(kind, what);
}

}  // namespace uqseg
