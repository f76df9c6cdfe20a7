#pragma once

#include <stdexcept>
#include <string>

namespace cosplat {

enum class ErrorCode {
    InvalidArgument,
    BehindCamera,
    EmptyTrajectory,
    UnknownPreset,
    NoValidPixels,
    ShapeMismatch,
    TimestepOutOfRange,
    ImageTooSmall,
    LengthMismatch,
    IoError,
    NumericalError,
};

const char *to_string(ErrorCode code);

// All library failures are reported as Error; `code()` carries the category.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string &what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace cosplat
