#ifndef HETMOGP_ERRORS_HPP
#define HETMOGP_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetmogp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (nonpositive
/// lengthscale, observation outside a likelihood's support, ...).
struct DomainError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

/// Cholesky failed even at the largest jitter level.
struct IllConditionedError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Row-level data validation failure. `rows` holds zero-based data row
/// indices (header excluded).
struct DataError : Error {
  DataError(const std::string& what, std::vector<std::size_t> bad_rows)
      : Error(what), rows(std::move(bad_rows)) {}
  std::vector<std::size_t> rows;
};

}  // namespace hetmogp

#endif
