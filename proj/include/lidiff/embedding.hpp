#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lidiff/error.hpp"

namespace lidiff {

enum class EmbeddingKind { sinusoidal, fourier };

inline std::string to_string(EmbeddingKind kind) {
  return kind == EmbeddingKind::sinusoidal ? "sinusoidal" : "fourier";
}

inline EmbeddingKind embedding_kind_from_string(const std::string& s) {
  if (s == "sinusoidal") return EmbeddingKind::sinusoidal;
  if (s == "fourier") return EmbeddingKind::fourier;
  fail(Errc::param, "unknown embedding kind '" + s + "'");
}

struct EmbeddingSpec {
  EmbeddingKind kind = EmbeddingKind::fourier;
  std::size_t dim = 128;      // total width d, even
  std::size_t harmonics = 4;  // N, fourier only

  void validate() const {
    require(dim >= 2 && dim % 2 == 0, Errc::param,
            "embedding dimension must be even and >= 2, got " + std::to_string(dim));
    require(kind != EmbeddingKind::fourier || harmonics >= 1, Errc::param,
            "fourier embedding needs at least one harmonic");
  }

  bool operator==(const EmbeddingSpec&) const = default;
};

using TimeEmbedding = std::vector<double>;

/// Angular frequency of pair i: 1 / 10000^(2i/d).
inline double embedding_frequency(std::size_t i, std::size_t dim) {
  return 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
}

inline TimeEmbedding sinusoidal_embed(double t, const EmbeddingSpec& spec) {
  require(spec.dim >= 2 && spec.dim % 2 == 0, Errc::param,
          "embedding dimension must be even and >= 2, got " + std::to_string(spec.dim));
  require(t >= 0.0, Errc::param, "time-step must be non-negative");
  TimeEmbedding e(spec.dim);
  for (std::size_t i = 0; i < spec.dim / 2; ++i) {
    const double x = t * embedding_frequency(i, spec.dim);
    e[2 * i] = std::sin(x);
    e[2 * i + 1] = std::cos(x);
  }
  return e;
}

/// Truncated Fourier series over the sinusoidal frequencies. Slot 2i holds
/// sum_n (1/n)(sin(n x) + cos(n x)); slot 2i+1 holds the same series shifted a
/// quarter period, sum_n (1/n)(cos(n x) - sin(n x)).
inline TimeEmbedding fourier_embed(double t, const EmbeddingSpec& spec) {
  require(spec.harmonics >= 1, Errc::param, "fourier embedding needs at least one harmonic");
  require(spec.dim >= 2 && spec.dim % 2 == 0, Errc::param,
          "embedding dimension must be even and >= 2, got " + std::to_string(spec.dim));
  require(t >= 0.0, Errc::param, "time-step must be non-negative");
  TimeEmbedding e(spec.dim);
  for (std::size_t i = 0; i < spec.dim / 2; ++i) {
    const double x = t * embedding_frequency(i, spec.dim);
    double first = 0.0;
    double second = 0.0;
    for (std::size_t n = 1; n <= spec.harmonics; ++n) {
      const double nx = static_cast<double>(n) * x;
      const double s = std::sin(nx);
      const double c = std::cos(nx);
      first += (s + c) / static_cast<double>(n);
      second += (c - s) / static_cast<double>(n);
    }
    e[2 * i] = first;
    e[2 * i + 1] = second;
  }
  return e;
}

inline TimeEmbedding embed(double t, const EmbeddingSpec& spec) {
  return spec.kind == EmbeddingKind::sinusoidal ? sinusoidal_embed(t, spec)
                                                : fourier_embed(t, spec);
}

inline std::vector<TimeEmbedding> embed_batch(const std::vector<std::size_t>& ts,
                                              const EmbeddingSpec& spec) {
  std::vector<TimeEmbedding> out;
  out.reserve(ts.size());
  for (std::size_t t : ts) out.push_back(embed(static_cast<double>(t), spec));
  return out;
}

inline double harmonic_number(std::size_t n) {
  double h = 0.0;
  for (std::size_t k = 1; k <= n; ++k) h += 1.0 / static_cast<double>(k);
  return h;
}

}  // namespace lidiff
