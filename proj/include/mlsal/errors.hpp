#pragma once

#include <stdexcept>
#include <string>

namespace mlsal {

/// Root of every error the library throws. `category()` names the failure
/// family so command-line tools can map it to an exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* category() const noexcept = 0;
};

#define MLSAL_DEFINE_ERROR(Name, tag)                                       \
    class Name : public Error {                                             \
    public:                                                                 \
        explicit Name(const std::string& what) : Error(what) {}             \
        const char* category() const noexcept override { return tag; }      \
    }

MLSAL_DEFINE_ERROR(ConfigError, "configuration");
MLSAL_DEFINE_ERROR(ShapeError, "shape");
MLSAL_DEFINE_ERROR(ValidationError, "validation");
MLSAL_DEFINE_ERROR(LoadError, "load");
MLSAL_DEFINE_ERROR(IngestionError, "ingestion");
MLSAL_DEFINE_ERROR(StorageError, "storage");
MLSAL_DEFINE_ERROR(ParseError, "parse");

#undef MLSAL_DEFINE_ERROR

/// Raised when a training step produces a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(long step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
    const char* category() const noexcept override { return "divergence"; }
    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace mlsal
