#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aquatwin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  enum class Kind {
    MalformedSection,
    DuplicateLabel,
    DanglingPipeEndpoint,
    NoSource,
    UnsupportedElement,
    InvalidAttribute,
  };

  ParseError(Kind kind, std::string section, std::size_t line, std::string label,
             const std::string& message)
      : Error(message),
        kind_(kind),
        section_(std::move(section)),
        line_(line),
        label_(std::move(label)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& section() const noexcept { return section_; }
  /// 1-based line number, 0 when the error is not tied to a line.
  std::size_t line() const noexcept { return line_; }
  const std::string& label() const noexcept { return label_; }

 private:
  Kind kind_;
  std::string section_;
  std::size_t line_;
  std::string label_;
};

class NonConvergence : public Error {
 public:
  NonConvergence(int iterations, double flow_change, double mass_residual)
      : Error("hydraulic solver did not converge after " + std::to_string(iterations) +
              " iterations (relative flow change " + std::to_string(flow_change) +
              ", mass residual " + std::to_string(mass_residual) + " L/s)"),
        iterations_(iterations),
        flow_change_(flow_change),
        mass_residual_(mass_residual) {}

  int iterations() const noexcept { return iterations_; }
  double flow_change() const noexcept { return flow_change_; }
  double mass_residual() const noexcept { return mass_residual_; }

 private:
  int iterations_;
  double flow_change_;
  double mass_residual_;
};

class InvalidConfig : public Error {
 public:
  InvalidConfig(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  /// Dotted path of the offending field, e.g. "generator.noise_cv".
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

class TooFewScenarios : public Error {
 public:
  using Error::Error;
};

class TooFewResiduals : public Error {
 public:
  using Error::Error;
};

class UncalibratedNode : public Error {
 public:
  using Error::Error;
};

class BudgetExceedsNetwork : public Error {
 public:
  using Error::Error;
};

class MissingModel : public Error {
 public:
  using Error::Error;
};

class RolloutFailure : public Error {
 public:
  RolloutFailure(std::size_t scenario, std::size_t step, const std::string& cause)
      : Error("rollout failed in scenario " + std::to_string(scenario) + " at step " +
              std::to_string(step) + ": " + cause),
        scenario_(scenario),
        step_(step) {}
  std::size_t scenario() const noexcept { return scenario_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t scenario_;
  std::size_t step_;
};

class EmptyEvaluation : public Error {
 public:
  using Error::Error;
};

class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace aquatwin
