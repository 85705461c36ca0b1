#pragma once

#include <stdexcept>
#include <string>

namespace bcq {

// Base for everything thrown by this library so callers can catch one type.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration; message names the offending field.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// Tensor archive file is malformed, truncated, or has the wrong magic/version.
struct ArchiveError : Error {
    explicit ArchiveError(const std::string& msg) : Error("archive: " + msg) {}
};

// Shape mismatch between tensors fed into an op.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

// Tokenizer / vocabulary problems (e.g. empty corpus).
struct VocabError : Error {
    explicit VocabError(const std::string& msg) : Error("vocab: " + msg) {}
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error("divergence: " + msg) {}
};

// Input data is degenerate for the requested analysis (e.g. zero-variance PCA input).
struct DegenerateDataError : Error {
    explicit DegenerateDataError(const std::string& msg) : Error("degenerate data: " + msg) {}
};

// Checkpoint or tensor lookup failed.
struct LookupError : Error {
    explicit LookupError(const std::string& msg) : Error("lookup: " + msg) {}
};

} // namespace bcq
