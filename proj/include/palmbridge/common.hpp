#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace palmbridge {

using Vector = std::vector<double>;

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct IndexError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};
struct LabelError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct CompatibilityError : Error {
  using Error::Error;
};
struct DegenerateCodebookError : Error {
  using Error::Error;
};
struct OracleError : Error {
  using Error::Error;
};

inline bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace palmbridge
