#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "lidiff/pointcloud.hpp"
#include "lidiff/projection.hpp"

namespace lidiff {

/// Procedural street-like scenes: a ground plane below the sensor plus a few
/// axis-aligned boxes standing on it.
struct ToySceneConfig {
  double sensor_height = 1.73;
  double sensor_height_jitter = 0.1;
  std::size_t min_boxes = 2;
  std::size_t max_boxes = 6;
  double min_distance = 4.0;
  double max_distance = 30.0;
  double min_size = 1.0;
  double max_size = 4.0;
  double min_box_height = 1.0;
  double max_box_height = 3.5;
};

struct Box3 {
  std::array<double, 3> lo;
  std::array<double, 3> hi;
};

struct ToyScene {
  double ground_z;
  std::vector<Box3> boxes;
};

inline ToyScene random_toy_scene(std::mt19937_64& rng, const ToySceneConfig& cfg = {}) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto between = [&](double a, double b) { return a + (b - a) * u(rng); };
  ToyScene s;
  s.ground_z = -(cfg.sensor_height + between(-cfg.sensor_height_jitter, cfg.sensor_height_jitter));
  std::uniform_int_distribution<std::size_t> count(cfg.min_boxes, cfg.max_boxes);
  const std::size_t n = count(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double dist = between(cfg.min_distance, cfg.max_distance);
    const double ang = between(-kPi, kPi);
    const double sx = between(cfg.min_size, cfg.max_size);
    const double sy = between(cfg.min_size, cfg.max_size);
    const double sz = between(cfg.min_box_height, cfg.max_box_height);
    const double cx = dist * std::cos(ang);
    const double cy = dist * std::sin(ang);
    s.boxes.push_back({{cx - sx / 2, cy - sy / 2, s.ground_z}, {cx + sx / 2, cy + sy / 2, s.ground_z + sz}});
  }
  return s;
}

/// Distance along unit direction `d` from the origin to the box, or +inf.
inline double ray_box(const std::array<double, 3>& d, const Box3& b) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (0.0 < b.lo[a] || 0.0 > b.hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = b.lo[a] / d[a];
    double tb = b.hi[a] / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

/// One return per pixel-centre ray that hits something within d_max.
inline PointCloud render_toy_scene(const ToyScene& scene, const ProjectionMeta& meta) {
  PointCloud cloud;
  for (std::size_t r = 0; r < meta.height; ++r) {
    const double theta = meta.theta_min + (static_cast<double>(r) + 0.5) /
                                              static_cast<double>(meta.height) *
                                              (meta.theta_max - meta.theta_min);
    for (std::size_t c = 0; c < meta.width; ++c) {
      const double phi =
          (static_cast<double>(c) + 0.5) / static_cast<double>(meta.width) * 2.0 * kPi - kPi;
      const std::array<double, 3> d{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                                    std::cos(theta)};
      double best = std::numeric_limits<double>::infinity();
      if (d[2] < -1e-12) best = scene.ground_z / d[2];
      for (const Box3& b : scene.boxes) best = std::min(best, ray_box(d, b));
      if (best < meta.d_max) cloud.points.push_back(spherical_to_cartesian({theta, phi, best}, 1.0));
    }
  }
  return cloud;
}

inline ProjectionMeta toy_meta(std::size_t height = 32, std::size_t width = 128) {
  ProjectionMeta m = ProjectionMeta::equirect_default();
  m.height = height;
  m.width = width;
  return m;
}

inline RangeImage toy_range_image(std::mt19937_64& rng, const ProjectionMeta& meta,
                                  const ToySceneConfig& cfg = {}) {
  const PointCloud cloud = render_toy_scene(random_toy_scene(rng, cfg), meta);
  if (cloud.empty()) return RangeImage(ImageKind::equirect, meta);
  return project_equirect(cloud, meta);
}

inline std::vector<RangeImage> toy_dataset(std::size_t count, std::uint64_t seed,
                                           const ProjectionMeta& meta = toy_meta(),
                                           const ToySceneConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  std::vector<RangeImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(toy_range_image(rng, meta, cfg));
  return out;
}

}  // namespace lidiff
