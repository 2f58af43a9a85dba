#pragma once

#include <stdexcept>
#include <string>

namespace subspace_probe {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PlsError : public Error {
 public:
  using Error::Error;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Raised when a model answer contains nothing parsable; keeps the raw text.
class ParseError : public DatasetError {
 public:
  ParseError(const std::string& what, std::string raw_text)
      : DatasetError(what), raw_text_(std::move(raw_text)) {}

  const std::string& raw_text() const noexcept { return raw_text_; }

 private:
  std::string raw_text_;
};

class ProbeError : public Error {
 public:
  using Error::Error;
};

class InterventionError : public Error {
 public:
  using Error::Error;
};

}  // namespace subspace_probe
