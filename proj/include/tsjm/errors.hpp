#pragma once

#include <stdexcept>
#include <string>

namespace tsjm {

/// Failure to open, read or write a file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FormatErrc {
    BadMagic,
    VersionMismatch,
    Truncated,
    TrailingData,
    ChecksumMismatch,
    NonFinite,
    InvariantViolation,
};

const char* to_string(FormatErrc code) noexcept;

/// Malformed FSET / ADPT payload. `code()` distinguishes the failure kind.
class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrc code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)),
          code_(code) {}
    FormatErrc code() const noexcept { return code_; }

private:
    FormatErrc code_;
};

/// A well-formed request the data cannot satisfy (not enough classes for an
/// N-way episode, unknown video id, ...).
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, const std::string& what)
        : std::runtime_error(what), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace tsjm
