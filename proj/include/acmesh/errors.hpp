#pragma once

#include <stdexcept>
#include <string>

namespace acmesh {

// Base class for every error raised by the stack. Callers that only care
// about "something in acmesh failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class PayloadTooLong : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class AddressError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class NoPreamble : public Error {
 public:
  using Error::Error;
};

class Unrecoverable : public Error {
 public:
  using Error::Error;
};

class WavError : public Error {
 public:
  using Error::Error;
};

// Scenario validation failure. `field` names the offending JSON path.
class ScenarioError : public Error {
 public:
  ScenarioError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace acmesh
