#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mnf {

// Caller broke a precondition: shapes, probabilities, empty inputs.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value went non-finite (or a log/sqrt saw a non-positive argument).
// `op()` names the primitive or layer that produced it.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(std::string op, const std::string& detail)
      : std::runtime_error("numeric fault in " + op + ": " + detail), op_(std::move(op)) {}

  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// Malformed on-disk input (IDX, checkpoint, CSV).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Experiment configuration failed validation; carries every offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> fields)
      : std::runtime_error(join(fields)), fields_(std::move(fields)) {}

  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  static std::string join(const std::vector<std::string>& fields) {
    std::string out = "invalid configuration:";
    for (const auto& f : fields) out += "\n  " + f;
    return out;
  }

  std::vector<std::string> fields_;
};

}  // namespace mnf
