#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mmgmrf {

/// Broad failure classes. The CLI maps them onto process exit codes.
enum class ErrorCategory : int { config = 1, io = 2, numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string code, const std::string& what)
      : std::runtime_error(what), category_(category), code_(std::move(code)) {}

  ErrorCategory category() const noexcept { return category_; }
  /// Short machine-readable tag, e.g. "NotPositiveDefinite".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorCategory category_;
  std::string code_;
};

class InvalidNetwork : public Error {
 public:
  explicit InvalidNetwork(const std::string& what)
      : Error(ErrorCategory::config, "InvalidNetwork", what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorCategory::config, "InvalidArgument", what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what)
      : Error(ErrorCategory::io, "ParseError", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(ErrorCategory::io, "IoError", what) {}
};

class NonMonotonicTimestamps : public Error {
 public:
  explicit NonMonotonicTimestamps(const std::string& what)
      : Error(ErrorCategory::config, "NonMonotonicTimestamps", what) {}
};

class TooFewSamples : public Error {
 public:
  explicit TooFewSamples(const std::string& what)
      : Error(ErrorCategory::config, "TooFewSamples", what) {}
};

class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::size_t pivot, const std::string& what)
      : Error(ErrorCategory::numeric, "NotPositiveDefinite", what), pivot_(pivot) {}

  /// Elimination step (in factor order) at which a non-positive pivot appeared.
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class PathTooLong : public Error {
 public:
  explicit PathTooLong(const std::string& what)
      : Error(ErrorCategory::numeric, "PathTooLong", what) {}
};

class UncoveredLink : public Error {
 public:
  UncoveredLink(std::uint32_t link, const std::string& what)
      : Error(ErrorCategory::config, "UncoveredLink", what), link_(link) {}

  std::uint32_t link() const noexcept { return link_; }

 private:
  std::uint32_t link_;
};

}  // namespace mmgmrf
