#pragma once

#include <stdexcept>
#include <string>

namespace metricord {

// Failure categories. The CLI maps these onto process exit codes:
// user-fixable problems (bad input files, label mismatches, bad flag
// combinations) exit 2, numerical breakdowns (non-PD metric, solver
// failure, non-finite values) exit 3.
enum class errc {
  invalid_argument,
  io,
  numeric,
};

class Error : public std::runtime_error {
 public:
  Error(errc kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  errc kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return kind_ == errc::numeric ? 3 : 2; }

 private:
  errc kind_;
};

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw Error(errc::invalid_argument, msg);
}

[[noreturn]] inline void fail_io(const std::string& msg) {
  throw Error(errc::io, msg);
}

[[noreturn]] inline void fail_numeric(const std::string& msg) {
  throw Error(errc::numeric, msg);
}

}  // namespace metricord
