#ifndef LORTSAR_ERRORS_HPP
#define LORTSAR_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lortsar {

/// Operand shapes do not agree (matmul, layer forward, dataset/model mismatch).
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative method hit its iteration cap before reaching tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// A compression plan string could not be parsed. `position` is the byte
/// offset of the offending token.
class ParseError : public std::invalid_argument {
public:
    ParseError(const std::string& what, std::size_t position)
        : std::invalid_argument(what + " (at position " + std::to_string(position) + ")"),
          position_(position) {}
    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// backward() was called on a tape that was never recorded or was already consumed.
class TapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class ContainerErrorKind { Io, BadMagic, VersionMismatch, Corrupt };

inline const char* to_string(ContainerErrorKind kind) {
    switch (kind) {
    case ContainerErrorKind::Io: return "i/o failure";
    case ContainerErrorKind::BadMagic: return "bad magic";
    case ContainerErrorKind::VersionMismatch: return "version mismatch";
    case ContainerErrorKind::Corrupt: return "corrupt container";
    }
    return "unknown";
}

/// Failure reading or writing one of the LRTS/LRSK binary containers.
class ContainerError : public std::runtime_error {
public:
    ContainerError(ContainerErrorKind kind, const std::string& detail)
        : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}
    ContainerErrorKind kind() const noexcept { return kind_; }

private:
    ContainerErrorKind kind_;
};

} // namespace lortsar

#endif // LORTSAR_ERRORS_HPP
