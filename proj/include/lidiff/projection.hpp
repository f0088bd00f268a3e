#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "lidiff/error.hpp"
#include "lidiff/lpci.hpp"
#include "lidiff/pointcloud.hpp"

namespace lidiff {

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }

/// theta: inclination from +z in [0, pi]; phi: azimuth in (-pi, pi]; d: range.
struct SphericalCoord {
  double theta = 0.0;
  double phi = 0.0;
  double d = 0.0;
};

inline SphericalCoord cartesian_to_spherical(const Point& p) {
  const double d = p.range();
  require(d > 0.0, Errc::degenerate_point, "point at the sensor origin has no direction");
  return {std::acos(std::clamp(p.z / d, -1.0, 1.0)), std::atan2(p.y, p.x), d};
}

inline Point spherical_to_cartesian(const SphericalCoord& s, double intensity = 0.0) {
  require(s.d > 0.0, Errc::degenerate_point, "range must be positive");
  const double st = std::sin(s.theta);
  return {s.d * st * std::cos(s.phi), s.d * st * std::sin(s.phi), s.d * std::cos(s.theta),
          intensity};
}

enum class ImageKind { equirect, bev };

inline std::string to_string(ImageKind kind) {
  return kind == ImageKind::equirect ? "equirect" : "bev";
}

inline ImageKind image_kind_from_string(const std::string& s) {
  if (s == "equirect") return ImageKind::equirect;
  if (s == "bev") return ImageKind::bev;
  fail(Errc::format, "unknown image kind '" + s + "'");
}

/// Normalisation constants and grid geometry travelling with every image.
struct ProjectionMeta {
  double d_max = 80.0;
  double theta_min = kPi / 2 - deg2rad(2.0);
  double theta_max = kPi / 2 + deg2rad(24.8);
  double bev_extent = 120.0;
  std::size_t height = 64;
  std::size_t width = 1024;

  static ProjectionMeta equirect_default() { return {}; }
  static ProjectionMeta bev_default() {
    ProjectionMeta m;
    m.height = 1024;
    m.width = 1024;
    return m;
  }

  void validate() const {
    require(d_max > 0, Errc::param, "d_max must be positive");
    require(theta_min < theta_max, Errc::param, "theta_min must be below theta_max");
    require(bev_extent > 0, Errc::param, "bev_extent must be positive");
    require(height > 0 && width > 0, Errc::param, "image resolution must be non-zero");
  }

  bool operator==(const ProjectionMeta&) const = default;
};

/// Row-major H x W float grid. Zero means "no return".
struct RangeImage {
  ImageKind kind = ImageKind::equirect;
  ProjectionMeta meta;
  std::vector<float> data;

  RangeImage() = default;
  RangeImage(ImageKind k, const ProjectionMeta& m)
      : kind(k), meta(m), data(m.height * m.width, 0.0f) {}

  std::size_t height() const { return meta.height; }
  std::size_t width() const { return meta.width; }
  float& at(std::size_t r, std::size_t c) { return data[r * meta.width + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * meta.width + c]; }

  std::size_t nonzero_count() const {
    return static_cast<std::size_t>(
        std::count_if(data.begin(), data.end(), [](float v) { return v != 0.0f; }));
  }
};

struct PixelIndex {
  std::size_t row;
  std::size_t col;
};

namespace detail {

inline std::size_t clamp_bin(double scaled, std::size_t n) {
  if (!(scaled >= 0.0)) return 0;
  const double f = std::floor(scaled);
  return f >= static_cast<double>(n) ? n - 1 : static_cast<std::size_t>(f);
}

}  // namespace detail

inline PixelIndex equirect_pixel(const SphericalCoord& s, const ProjectionMeta& meta) {
  const double rows = (s.theta - meta.theta_min) / (meta.theta_max - meta.theta_min) *
                      static_cast<double>(meta.height);
  const double cols = (s.phi + kPi) / (2.0 * kPi) * static_cast<double>(meta.width);
  return {detail::clamp_bin(rows, meta.height), detail::clamp_bin(cols, meta.width)};
}

/// Equirectangular range image; colliding points keep the nearest return.
inline RangeImage project_equirect(const PointCloud& cloud, const ProjectionMeta& meta) {
  require(!cloud.empty(), Errc::empty_input, "cannot project an empty cloud");
  meta.validate();
  RangeImage img(ImageKind::equirect, meta);
  for (const Point& p : cloud.points) {
    if (p.range() <= 0.0) continue;
    const SphericalCoord s = cartesian_to_spherical(p);
    const PixelIndex px = equirect_pixel(s, meta);
    const float v = std::max(static_cast<float>(std::min(s.d / meta.d_max, 1.0)),
                             std::numeric_limits<float>::min());
    float& cell = img.at(px.row, px.col);
    if (cell == 0.0f || v < cell) cell = v;
  }
  return img;
}

/// Inverse of project_equirect using pixel centres. Intensity is set to `intensity`.
inline PointCloud backproject_equirect(const RangeImage& img, double intensity = 1.0) {
  require(img.kind == ImageKind::equirect, Errc::kind_mismatch,
          "back-projection needs an equirect image, got " + to_string(img.kind));
  const ProjectionMeta& m = img.meta;
  require(img.data.size() == m.height * m.width, Errc::shape, "image data does not match meta");
  PointCloud cloud;
  const double dtheta = (m.theta_max - m.theta_min) / static_cast<double>(m.height);
  const double dphi = 2.0 * kPi / static_cast<double>(m.width);
  for (std::size_t r = 0; r < m.height; ++r) {
    for (std::size_t c = 0; c < m.width; ++c) {
      const float v = img.at(r, c);
      if (v == 0.0f) continue;
      const SphericalCoord s{m.theta_min + (static_cast<double>(r) + 0.5) * dtheta,
                             -kPi + (static_cast<double>(c) + 0.5) * dphi,
                             static_cast<double>(v) * m.d_max};
      cloud.points.push_back(spherical_to_cartesian(s, intensity));
    }
  }
  return cloud;
}

/// Top-down orthographic raster; pixel value is the max intensity of its points.
inline RangeImage project_bev(const PointCloud& cloud, const ProjectionMeta& meta) {
  require(!cloud.empty(), Errc::empty_input, "cannot project an empty cloud");
  meta.validate();
  RangeImage img(ImageKind::bev, meta);
  const double e = meta.bev_extent;
  for (const Point& p : cloud.points) {
    if (!(std::abs(p.x) < e && std::abs(p.y) < e)) continue;
    const std::size_t r = detail::clamp_bin((p.x + e) / (2 * e) * static_cast<double>(meta.height),
                                            meta.height);
    const std::size_t c = detail::clamp_bin((p.y + e) / (2 * e) * static_cast<double>(meta.width),
                                            meta.width);
    float& cell = img.at(r, c);
    cell = std::max(cell, static_cast<float>(std::clamp(p.intensity, 0.0, 1.0)));
  }
  return img;
}

inline nlohmann::json meta_to_json(const ProjectionMeta& m, ImageKind kind) {
  return {{"kind", to_string(kind)},     {"d_max", m.d_max},
          {"theta_min", m.theta_min},    {"theta_max", m.theta_max},
          {"bev_extent", m.bev_extent},  {"height", m.height},
          {"width", m.width}};
}

inline LpciTensor to_lpci(const RangeImage& img) {
  LpciTensor t;
  t.shape = {img.height(), img.width()};
  t.data = img.data;
  t.meta = meta_to_json(img.meta, img.kind);
  return t;
}

inline RangeImage range_image_from_lpci(const LpciTensor& t) {
  require(t.shape.size() == 2, Errc::format, "range image must be a 2-D tensor");
  for (const char* key : {"kind", "d_max", "theta_min", "theta_max", "bev_extent"}) {
    require(t.meta.contains(key), Errc::format,
            std::string("range image header lacks projection meta key '") + key + "'");
  }
  RangeImage img;
  img.kind = image_kind_from_string(t.meta.at("kind").get<std::string>());
  img.meta.d_max = t.meta.at("d_max").get<double>();
  img.meta.theta_min = t.meta.at("theta_min").get<double>();
  img.meta.theta_max = t.meta.at("theta_max").get<double>();
  img.meta.bev_extent = t.meta.at("bev_extent").get<double>();
  img.meta.height = t.shape[0];
  img.meta.width = t.shape[1];
  img.meta.validate();
  img.data = t.data;
  return img;
}

}  // namespace lidiff
