#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace matchq {

// Numeric values double as CLI exit codes.
enum class ErrorKind : int { infeasible = 2, input = 3, numerical = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what) : Error(ErrorKind::infeasible, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

namespace detail {
inline LogLevel parse_log_level(const char* s) {
  if (s == nullptr) return LogLevel::warn;
  std::string_view v(s);
  if (v == "error") return LogLevel::error;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  return LogLevel::warn;
}
}  // namespace detail

// Threshold read once from MATCHQ_LOG (error|warn|info|debug).
inline LogLevel log_level() {
  static const LogLevel level = detail::parse_log_level(std::getenv("MATCHQ_LOG"));
  return level;
}

inline void log(LogLevel level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) return;
  static std::mutex mu;
  static constexpr const char* tags[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "[matchq " << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

}  // namespace matchq
