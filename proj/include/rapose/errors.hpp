#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace rapose {

/// Raised when tensor operands disagree on one or more axes.
class DimensionError : public std::invalid_argument {
public:
    DimensionError(std::string op, std::vector<std::string> axes, const std::string& detail)
        : std::invalid_argument(format(op, axes, detail)), op_(std::move(op)), axes_(std::move(axes)) {}

    const std::string& op() const noexcept { return op_; }
    const std::vector<std::string>& axes() const noexcept { return axes_; }

private:
    static std::string format(const std::string& op, const std::vector<std::string>& axes,
                              const std::string& detail) {
        std::string msg = op + ": dimension mismatch on axis";
        msg += axes.size() == 1 ? " " : "es ";
        for (std::size_t i = 0; i < axes.size(); ++i) {
            if (i) msg += ",";
            msg += axes[i];
        }
        if (!detail.empty()) msg += " (" + detail + ")";
        return msg;
    }

    std::string op_;
    std::vector<std::string> axes_;
};

/// Raised for invalid argument values that are not shape problems.
class ValueError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration failed validation. Every violated invariant is listed.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : std::invalid_argument(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string msg = "invalid configuration:";
        for (const auto& s : v) msg += "\n  - " + s;
        return msg;
    }

    std::vector<std::string> violations_;
};

/// Malformed input text; `position` is a byte offset into the document.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t position, const std::string& what)
        : std::runtime_error("parse error at byte " + std::to_string(position) + ": " + what),
          position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

/// A required field was absent or had the wrong type.
class FieldError : public std::runtime_error {
public:
    FieldError(std::string field, const std::string& what)
        : std::runtime_error("field '" + field + "': " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace rapose
