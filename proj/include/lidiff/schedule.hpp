#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "lidiff/error.hpp"

namespace lidiff {

enum class ScheduleKind {
  constant,
  linear,
  quadratic,
  cosine,
  sigmoid,
  hyperbolic,
  time_dependent,
  ramp,
};

inline constexpr std::array<ScheduleKind, 8> kAllScheduleKinds = {
    ScheduleKind::constant, ScheduleKind::linear,     ScheduleKind::quadratic,
    ScheduleKind::cosine,   ScheduleKind::sigmoid,    ScheduleKind::hyperbolic,
    ScheduleKind::time_dependent, ScheduleKind::ramp};

inline std::string_view schedule_name(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::quadratic: return "quadratic";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::sigmoid: return "sigmoid";
    case ScheduleKind::hyperbolic: return "hyperbolic";
    case ScheduleKind::time_dependent: return "time-dependent";
    case ScheduleKind::ramp: return "ramp";
  }
  return "?";
}

inline ScheduleKind schedule_kind_from_string(std::string_view name) {
  for (ScheduleKind k : kAllScheduleKinds)
    if (schedule_name(k) == name) return k;
  fail(Errc::unknown_schedule, "unknown schedule kind '" + std::string(name) + "'");
}

struct ScheduleParams {
  ScheduleKind kind = ScheduleKind::time_dependent;
  std::size_t steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t ramp_segment = 10;
  double cosine_offset = 0.008;
  double sigmoid_low = -6.0;
  double sigmoid_high = 6.0;

  bool operator==(const ScheduleParams&) const = default;
};

/// Upper clamp for back-solved betas (cosine, hyperbolic).
inline constexpr double kMaxBeta = 0.999;

/// Per-step tables, index 0 holds step t = 1.
struct Schedule {
  ScheduleParams params;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  std::size_t steps() const { return betas.size(); }
  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha(std::size_t t) const { return alphas.at(t - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars.at(t - 1); }
};

namespace detail {

inline void check_endpoints(std::size_t steps, double beta_start, double beta_end) {
  require(steps >= 2, Errc::param, "schedule needs at least 2 steps");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, Errc::param,
          "betas must satisfy 0 < beta_start <= beta_end < 1");
}

inline double lerp_step(double a, double b, std::size_t t, std::size_t steps) {
  return a + (b - a) / static_cast<double>(steps - 1) * static_cast<double>(t);
}

/// Betas that realise a target alpha-bar curve, clamped into (0, kMaxBeta].
template <typename AlphaBarFn>
std::vector<double> betas_from_alpha_bar(std::size_t steps, AlphaBarFn&& alpha_bar) {
  std::vector<double> betas(steps);
  double prev = 1.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double cur = alpha_bar(t);
    double b = prev > 0.0 ? 1.0 - cur / prev : kMaxBeta;
    betas[t - 1] = std::clamp(b, std::numeric_limits<double>::min(), kMaxBeta);
    prev = cur;
  }
  return betas;
}

}  // namespace detail

inline std::vector<double> linear_betas(std::size_t steps, double beta_start, double beta_end) {
  detail::check_endpoints(steps, beta_start, beta_end);
  std::vector<double> b(steps);
  for (std::size_t t = 0; t < steps; ++t) b[t] = detail::lerp_step(beta_start, beta_end, t, steps);
  b.back() = beta_end;
  return b;
}

/// Geometric interpolation: beta_t = beta_start * (beta_end / beta_start)^(t / (T - 1)).
inline std::vector<double> time_dependent_betas(std::size_t steps, double beta_start,
                                                double beta_end) {
  detail::check_endpoints(steps, beta_start, beta_end);
  require(beta_start < beta_end, Errc::param,
          "time-dependent schedule needs beta_start < beta_end (use constant instead)");
  const double ratio = beta_end / beta_start;
  std::vector<double> b(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const double timing = static_cast<double>(t) / static_cast<double>(steps - 1);
    b[t] = beta_start * std::pow(ratio, timing);
  }
  b.front() = beta_start;
  b.back() = beta_end;
  return b;
}

/// Hold-then-ramp sequence over the linear base trajectory. Shape k spans
/// [2nk, 2n(k+1)): n copies of base[2nk], then base[2nk .. 2nk+n-1].
inline std::vector<double> ramp_betas(std::size_t steps, double beta_start, double beta_end,
                                      std::size_t segment) {
  require(segment >= 1, Errc::param, "ramp segment length must be at least 1");
  require(steps % (2 * segment) == 0, Errc::param,
          "ramp needs steps divisible by 2 * segment (" + std::to_string(steps) + " vs " +
              std::to_string(2 * segment) + ")");
  const std::vector<double> base = linear_betas(steps, beta_start, beta_end);
  const std::size_t shapes = steps / (2 * segment);
  std::vector<double> out;
  out.reserve(steps);
  for (std::size_t k = 0; k < shapes; ++k) {
    const std::size_t start = 2 * segment * k;
    out.insert(out.end(), segment, base[start]);
    for (std::size_t j = 0; j < segment; ++j) out.push_back(base[start + j]);
  }
  return out;
}

inline std::vector<double> make_betas(const ScheduleParams& p) {
  detail::check_endpoints(p.steps, p.beta_start, p.beta_end);
  const std::size_t T = p.steps;
  switch (p.kind) {
    case ScheduleKind::constant:
      return std::vector<double>(T, p.beta_end);
    case ScheduleKind::linear:
      return linear_betas(T, p.beta_start, p.beta_end);
    case ScheduleKind::quadratic: {
      auto b = linear_betas(T, std::sqrt(p.beta_start), std::sqrt(p.beta_end));
      for (double& v : b) v *= v;
      return b;
    }
    case ScheduleKind::cosine: {
      require(p.cosine_offset >= 0.0, Errc::param, "cosine offset must be non-negative");
      const double s = p.cosine_offset;
      auto f = [&](double t) {
        const double c = std::cos((t / static_cast<double>(T) + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
      };
      const double f0 = f(0.0);
      return detail::betas_from_alpha_bar(T, [&](std::size_t t) {
        return f(static_cast<double>(t)) / f0;
      });
    }
    case ScheduleKind::sigmoid: {
      require(p.sigmoid_low < p.sigmoid_high, Errc::param, "sigmoid range is empty");
      std::vector<double> b(T);
      for (std::size_t t = 0; t < T; ++t) {
        const double x = detail::lerp_step(p.sigmoid_low, p.sigmoid_high, t, T);
        b[t] = p.beta_start + (p.beta_end - p.beta_start) / (1.0 + std::exp(-x));
      }
      return b;
    }
    case ScheduleKind::hyperbolic:
      return detail::betas_from_alpha_bar(T, [&](std::size_t t) {
        return 1.0 - static_cast<double>(t) / static_cast<double>(T);
      });
    case ScheduleKind::time_dependent:
      return time_dependent_betas(T, p.beta_start, p.beta_end);
    case ScheduleKind::ramp:
      return ramp_betas(T, p.beta_start, p.beta_end, p.ramp_segment);
  }
  fail(Errc::unknown_schedule, "unhandled schedule kind");
}

/// Builds the alpha and running-product alpha-bar tables for explicit betas.
inline Schedule schedule_from_betas(std::vector<double> betas, ScheduleParams params = {}) {
  require(betas.size() >= 1, Errc::param, "empty beta sequence");
  Schedule s;
  s.params = params;
  s.params.steps = betas.size();
  s.betas = std::move(betas);
  s.alphas.resize(s.betas.size());
  s.alpha_bars.resize(s.betas.size());
  double running = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i) {
    const double b = s.betas[i];
    require(b > 0.0 && b < 1.0, Errc::param,
            "beta at step " + std::to_string(i + 1) + " is outside (0, 1)");
    s.alphas[i] = 1.0 - b;
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

inline Schedule make_schedule(const ScheduleParams& params) {
  return schedule_from_betas(make_betas(params), params);
}

inline Schedule make_schedule(ScheduleKind kind, std::size_t steps, double beta_start = 1e-4,
                              double beta_end = 0.02) {
  ScheduleParams p;
  p.kind = kind;
  p.steps = steps;
  p.beta_start = beta_start;
  p.beta_end = beta_end;
  return make_schedule(p);
}

/// SNR_t = alpha_bar_t / (1 - alpha_bar_t); index 0 holds step 1.
inline std::vector<double> snr(const Schedule& s) {
  std::vector<double> out(s.steps());
  for (std::size_t i = 0; i < s.steps(); ++i) out[i] = s.alpha_bars[i] / (1.0 - s.alpha_bars[i]);
  return out;
}

/// Zero-based index of the first SNR below `threshold`, or curve.size() if none.
inline std::size_t snr_crossing_step(const std::vector<double>& curve, double threshold) {
  require(threshold > 0.0, Errc::param, "SNR threshold must be positive");
  const auto it = std::find_if(curve.begin(), curve.end(), [&](double v) { return v < threshold; });
  return static_cast<std::size_t>(it - curve.begin());
}

inline void write_schedule_csv(std::ostream& out, const Schedule& s) {
  const auto curve = snr(s);
  out << "step,beta,alpha,alpha_bar,snr\n";
  char line[160];
  for (std::size_t i = 0; i < s.steps(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", i + 1, s.betas[i],
                  s.alphas[i], s.alpha_bars[i], curve[i]);
    out << line;
  }
}

}  // namespace lidiff
