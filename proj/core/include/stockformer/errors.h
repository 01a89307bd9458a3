#pragma once

#include <stdexcept>
#include <string>

namespace stockformer {

// All library errors derive from Error and carry a short machine-parsable
// code (E_PARSE, E_CONFIG, ...) next to the human-readable detail. The CLI
// prints "error: <code>: <detail>" and exits nonzero.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& detail)
        : std::runtime_error(detail), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

struct ParseError : Error {
    explicit ParseError(const std::string& d) : Error("E_PARSE", d) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& d) : Error("E_VALIDATION", d) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& d) : Error("E_CONFIG", d) {}
};
struct RangeError : Error {
    explicit RangeError(const std::string& d) : Error("E_RANGE", d) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& d) : Error("E_SHAPE", d) {}
};
struct ArgumentError : Error {
    explicit ArgumentError(const std::string& d) : Error("E_ARGUMENT", d) {}
};
struct ArtifactError : Error {
    explicit ArtifactError(const std::string& d) : Error("E_ARTIFACT", d) {}
};
struct CompatibilityError : Error {
    explicit CompatibilityError(const std::string& d) : Error("E_COMPAT", d) {}
};
struct AlignmentError : Error {
    explicit AlignmentError(const std::string& d) : Error("E_ALIGN", d) {}
};

}  // namespace stockformer
