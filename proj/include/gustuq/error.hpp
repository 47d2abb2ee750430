#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gustuq {

/// Base of every error raised by the library. `kind()` is a stable,
/// machine-parsable class name that the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  Error(std::string_view kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  std::string_view kind() const noexcept { return kind_; }

 private:
  std::string_view kind_;
};

#define GUSTUQ_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(#Name, what) {}        \
  };

/// Matrix/vector shapes that do not chain.
GUSTUQ_DEFINE_ERROR(DimensionError)
/// API misuse: bad arguments, stale state, empty inputs.
GUSTUQ_DEFINE_ERROR(UsageError)
/// Non-finite values where finite ones are required.
GUSTUQ_DEFINE_ERROR(NumericError)
/// Argument outside the mathematical domain of a function.
GUSTUQ_DEFINE_ERROR(DomainError)
/// Malformed input files.
GUSTUQ_DEFINE_ERROR(IngestError)
/// Inconsistent run configuration.
GUSTUQ_DEFINE_ERROR(ConfigError)
/// Query point outside the grid hull.
GUSTUQ_DEFINE_ERROR(OutOfDomainError)
/// Every tuning trial failed.
GUSTUQ_DEFINE_ERROR(SearchFailure)
/// Model artifact or feature schema mismatch.
GUSTUQ_DEFINE_ERROR(SchemaError)

#undef GUSTUQ_DEFINE_ERROR

}  // namespace gustuq
