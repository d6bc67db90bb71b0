#pragma once

#include <stdexcept>
#include <string>

namespace tailor {

// Error hierarchy. Every throwing contract in the library uses one of these
// so callers (and tests) can match on the failure kind.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
    explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

struct InvalidAxis : Error {
    explicit InvalidAxis(const std::string& msg) : Error("invalid axis: " + msg) {}
};

struct EmptyReduction : Error {
    explicit EmptyReduction(const std::string& msg) : Error("empty reduction: " + msg) {}
};

struct NotScalar : Error {
    explicit NotScalar(const std::string& msg) : Error("not a scalar: " + msg) {}
};

struct DetachedTensor : Error {
    explicit DetachedTensor(const std::string& msg) : Error("detached tensor: " + msg) {}
};

struct UnknownTarget : Error {
    explicit UnknownTarget(const std::string& msg) : Error("unknown edit target: " + msg) {}
};

struct UnparseablePrompt : Error {
    explicit UnparseablePrompt(const std::string& msg) : Error("unparseable prompt: " + msg) {}
};

struct UnknownLabel : Error {
    explicit UnknownLabel(const std::string& msg) : Error("unknown label: " + msg) {}
};

struct BadImageRange : Error {
    explicit BadImageRange(const std::string& msg) : Error("bad image range: " + msg) {}
};

struct DegenerateVector : Error {
    explicit DegenerateVector(const std::string& msg) : Error("degenerate vector: " + msg) {}
};

struct SourceEqualsTarget : Error {
    explicit SourceEqualsTarget(const std::string& msg) : Error("source equals target: " + msg) {}
};

struct InvalidInjectionStage : Error {
    explicit InvalidInjectionStage(const std::string& msg) : Error("invalid injection stage: " + msg) {}
};

struct EmptyLexicon : Error {
    explicit EmptyLexicon(const std::string& msg) : Error("empty lexicon: " + msg) {}
};

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(const std::string& msg) : Error("non-finite loss: " + msg) {}
};

struct CorruptCheckpoint : Error {
    explicit CorruptCheckpoint(const std::string& msg) : Error("corrupt checkpoint: " + msg) {}
};

struct VersionMismatch : Error {
    explicit VersionMismatch(const std::string& msg) : Error("version mismatch: " + msg) {}
};

struct IOError : Error {
    explicit IOError(const std::string& msg) : Error("i/o error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

}  // namespace tailor
