#pragma once

#include <stdexcept>
#include <string>

namespace gnnrec {

/// Base class for every error raised by the library. The CLI maps any
/// `gnnrec::Error` to a nonzero exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class EmptyInputError : public Error { using Error::Error; };
class DegenerateError : public Error { using Error::Error; };
class BoundsError : public Error { using Error::Error; };
class DimensionError : public Error { using Error::Error; };
class SamplingError : public Error { using Error::Error; };
class DivergedError : public Error { using Error::Error; };
class UndefinedMetricError : public Error { using Error::Error; };
class EvaluationError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class SchemaError : public Error { using Error::Error; };
class CompatibilityError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };

} // namespace gnnrec
