#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace tractscope {

/// Raised for malformed inputs and violated preconditions.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical procedure cannot produce a valid answer
/// (rank deficiency, degenerate variance, optimizer pinned at a bound).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Wraps a failure with the name of the pipeline stage that produced it.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& cause)
        : std::runtime_error("[" + stage + "] " + cause), stage_(std::move(stage)) {}

    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace tractscope
