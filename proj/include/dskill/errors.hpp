#pragma once

#include <stdexcept>
#include <string>

namespace dskill {

// Caller broke a documented precondition (wrong vector length, bad option).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed chain file, config file or checkpoint.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment configuration breaks an invariant (overlapping splits, bad sizes).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// KKT system stayed singular after regularizing the Hessian.
class QpSolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Whole-body controller could not produce a command (relaxed QP failed too).
class ControllerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Robot environment could not be aligned with the floating-hand environment.
class SyncError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dskill
