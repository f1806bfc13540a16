#pragma once

#include <stdexcept>
#include <string>

namespace fuselab {

// Bad configuration, shape mismatch or violated precondition.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf produced during model math.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace fuselab
