#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hymem {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Base for failures to get a well-formed payload out of a model response.
/// Keeps the raw response around for the trace.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::string raw)
      : Error(what), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class JsonProtocolError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class SummaryProtocolError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class DeepProtocolError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class JudgeProtocolError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

/// Transport or HTTP failure talking to a chat endpoint. status is 0 for
/// transport-level failures.
class ChatBackendError : public Error {
 public:
  ChatBackendError(const std::string& what, int status)
      : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class EmbeddingBackendError : public Error {
 public:
  EmbeddingBackendError(const std::string& what, int status = 0)
      : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class IndexFormatError : public Error {
 public:
  IndexFormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class StoreFormatError : public Error {
 public:
  StoreFormatError(const std::string& file, std::size_t line,
                   const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class StoreIOError : public Error {
 public:
  using Error::Error;
};

class LinkIntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace hymem
