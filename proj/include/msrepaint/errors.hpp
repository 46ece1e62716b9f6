#pragma once

#include <stdexcept>
#include <string>

namespace msrepaint {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents (NIfTI header, checkpoint, dictionary file).
class FormatError : public Error {
public:
    FormatError(const std::string& field, const std::string& what)
        : Error("format error [" + field + "]: " + what), field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class UnsupportedTypeError : public Error {
public:
    using Error::Error;
};

/// Invalid numeric parameter (schedule length, stride, probability, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite value appeared during sampling or training.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Inputs that are individually well formed but inconsistent (e.g. a repaint
/// mask that does not contain the target mask).
class ValidationError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

class IngestionError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

}  // namespace msrepaint
