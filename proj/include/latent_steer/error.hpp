#pragma once

#include <stdexcept>
#include <string>

namespace latent_steer {

// Base of every library error. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class InterfaceError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset file; offset is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Checkpoint manifest and blob disagree.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace latent_steer
