#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lidiff {

enum class Errc {
  io,
  format,
  insufficient_points,
  shape,
  degenerate_point,
  empty_input,
  kind_mismatch,
  unknown_schedule,
  param,
  step,
  numerical,
  insufficient_samples,
  config,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::io: return "IoError";
    case Errc::format: return "FormatError";
    case Errc::insufficient_points: return "InsufficientPoints";
    case Errc::shape: return "ShapeError";
    case Errc::degenerate_point: return "DegeneratePoint";
    case Errc::empty_input: return "EmptyInput";
    case Errc::kind_mismatch: return "KindMismatch";
    case Errc::unknown_schedule: return "UnknownSchedule";
    case Errc::param: return "ParamError";
    case Errc::step: return "StepError";
    case Errc::numerical: return "NumericalError";
    case Errc::insufficient_samples: return "InsufficientSamples";
    case Errc::config: return "ConfigError";
  }
  return "Error";
}

/// Single exception type for the library; the category lives in code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace lidiff
