#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace merge {

// Every failure in the engine is reported through Error. The kind enum keeps
// the categories distinguishable (persistence format vs. version vs. checksum,
// transport vs. provider, ...) without a class per failure.
enum class ErrorKind {
    invalid_argument,    // precondition violation, bad config
    dimension_mismatch,  // embedding dim does not match the store/gateway dim
    zero_norm,           // cosine over a zero vector
    io,                  // unreadable/unwritable file or directory
    format,              // corrupted header magic, unparseable record
    version,             // persisted format version newer than supported
    checksum,            // MANIFEST checksum mismatch
    truncated,           // file shorter than its header promises
    transport,           // network-level failure (retryable)
    provider,            // provider-reported error with status
    budget_exceeded,     // token budget exhausted
    structured_output,   // model output stayed malformed past the retry limit
    stage,               // labeled pipeline/HCMA stage failure
    data,                // invalid input record / corpus content
    usage,               // CLI misuse
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    Error(ErrorKind kind, std::string stage, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind), stage_(std::move(stage)) {}

    ErrorKind kind() const noexcept { return kind_; }

    // Stage label such as "hcma/stage 1" or "rmki/kg"; empty when the failure
    // is not tied to a pipeline stage.
    const std::string& stage() const noexcept { return stage_; }

    // Raw provider/model text attached to structured-output errors so callers
    // can log what the model actually said.
    const std::string& raw() const noexcept { return raw_; }
    void set_raw(std::string raw) { raw_ = std::move(raw); }

    // Provider HTTP status, 0 when not applicable.
    int status() const noexcept { return status_; }
    void set_status(int status) { status_ = status; }

private:
    ErrorKind kind_;
    std::string stage_;
    std::string raw_;
    int status_ = 0;
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::dimension_mismatch: return "dimension_mismatch";
        case ErrorKind::zero_norm: return "zero_norm";
        case ErrorKind::io: return "io";
        case ErrorKind::format: return "format";
        case ErrorKind::version: return "version";
        case ErrorKind::checksum: return "checksum";
        case ErrorKind::truncated: return "truncated";
        case ErrorKind::transport: return "transport";
        case ErrorKind::provider: return "provider";
        case ErrorKind::budget_exceeded: return "budget_exceeded";
        case ErrorKind::structured_output: return "structured_output";
        case ErrorKind::stage: return "stage";
        case ErrorKind::data: return "data";
        case ErrorKind::usage: return "usage";
    }
    return "unknown";
}

}  // namespace merge
