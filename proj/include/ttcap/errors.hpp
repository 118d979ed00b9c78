#pragma once

#include <stdexcept>
#include <string>

namespace ttcap {

// Bad shapes, bad enum values, structurally mismatched adapters, bad config files.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unknown image id, missing annotation, missing file.
struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite loss/gradient, zero-norm embedding.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caption empty or whitespace-only, empty candidate list.
struct EmptyCaptionError : std::runtime_error {
    explicit EmptyCaptionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ttcap
