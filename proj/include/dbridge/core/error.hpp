#pragma once

#include <stdexcept>
#include <string>

namespace dbridge {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatches, invalid options, bad config files.
struct ConfigError : Error {
  using Error::Error;
};

// Inputs outside the domain of a function (log of a negative number, p = 0 on the support of q).
struct DomainError : Error {
  using Error::Error;
};

// API misuse, e.g. backward() from a non-scalar root.
struct UsageError : Error {
  using Error::Error;
};

// An estimator has nothing to work with (empty valid batch, degenerate weights).
struct EstimationError : Error {
  using Error::Error;
};

// Construction of a target or run failed (quadrature did not converge, ...).
struct SetupError : Error {
  using Error::Error;
};

}  // namespace dbridge
