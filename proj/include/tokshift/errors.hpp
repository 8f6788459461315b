// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tokshift {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class AllZeroMass : public Error {
 public:
  AllZeroMass() : Error("all entries have zero mass") {}
};

class AbsoluteContinuityViolation : public Error {
 public:
  using Error::Error;
};

class SpecInvalid : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// Errors tied to a line of an input file; `line()` is 1-based.
class InputError : public Error {
 public:
  InputError(const std::string& kind, std::size_t line, const std::string& what)
      : Error(kind + " at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ParseError : public InputError {
 public:
  ParseError(std::size_t line, const std::string& what) : InputError("parse error", line, what) {}
};

class SchemaError : public InputError {
 public:
  SchemaError(std::size_t line, const std::string& what) : InputError("schema error", line, what) {}
};

class PrefixNotRecorded : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  EmptyInput() : Error("empty input") {}
};

class NoQualifyingPositions : public Error {
 public:
  NoQualifyingPositions() : Error("no positions exceed the divergence threshold") {}
};

class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class InstanceTooLarge : public Error {
 public:
  using Error::Error;
};

class GroupDegenerate : public Error {
 public:
  GroupDegenerate() : Error("reward group has zero standard deviation") {}
};

class NonPositiveRatio : public Error {
 public:
  NonPositiveRatio() : Error("probability ratio must be positive") {}
};

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t a, std::size_t b)
      : Error("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class ScheduleInvalid : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// Raised by the skew-JS bound check; carries every offending history.
class HypothesisViolated : public Error {
 public:
  struct Violation {
    std::size_t step;                  // 1-based t
    std::vector<std::uint32_t> history;
    double alpha;
    double skew_js;
  };

  HypothesisViolated(std::vector<Violation> v, double epsilon)
      : Error(describe(v, epsilon)), violations_(std::move(v)) {}

  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  static std::string describe(const std::vector<Violation>& v, double epsilon) {
    std::string s = std::to_string(v.size()) +
                    " non-switch histories exceed epsilon=" + std::to_string(epsilon);
    if (!v.empty()) {
      s += "; first: t=" + std::to_string(v.front().step) + " h=[";
      for (std::size_t i = 0; i < v.front().history.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v.front().history[i]);
      }
      s += "]";
    }
    return s;
  }

  std::vector<Violation> violations_;
};

}  // namespace tokshift
