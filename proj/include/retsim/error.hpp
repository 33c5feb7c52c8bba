#pragma once

#include <stdexcept>
#include <string>

namespace retsim {

// Raised for invalid inputs and violated preconditions across the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The mid-level optimizer could not find a feasible joint-velocity box.
class LimitError : public Error {
 public:
  using Error::Error;
};

}  // namespace retsim
