#pragma once

#include <stdexcept>
#include <string>

namespace seqmenu {

/// A caller broke a documented precondition (bad subset, missing empty option, ...).
class ContractViolation : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

/// Malformed configuration, unknown key, or invalid method/family combination.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or incompatible file on disk.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace seqmenu
