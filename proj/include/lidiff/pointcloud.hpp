#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "lidiff/error.hpp"
#include "lidiff/kdtree.hpp"
#include "lidiff/lpci.hpp"

namespace lidiff {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  double range() const { return std::sqrt(x * x + y * y + z * z); }
};

struct PointCloud {
  std::vector<Point> points;
  std::string frame_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Per-point mean distance to the k nearest other points.
struct DensityEstimate {
  std::vector<double> mean_knn_distance;
  std::size_t k = 0;
};

enum class ScanFormat { kitti_bin, lpci };

inline ScanFormat scan_format_for(const std::filesystem::path& path) {
  return path.extension() == ".lpci" ? ScanFormat::lpci : ScanFormat::kitti_bin;
}

namespace detail {

inline Point point_from_record(const float* rec, std::size_t index) {
  for (int c = 0; c < 4; ++c) {
    if (!std::isfinite(rec[c]))
      fail(Errc::format, "non-finite value in record " + std::to_string(index));
  }
  // intensity outliers are clamped, not rejected
  return Point{rec[0], rec[1], rec[2], std::clamp(static_cast<double>(rec[3]), 0.0, 1.0)};
}

}  // namespace detail

inline PointCloud decode_kitti_bin(const std::string& bytes, std::string frame_id = {}) {
  constexpr std::size_t kRecord = 4 * sizeof(float);
  require(!bytes.empty(), Errc::format, "empty scan");
  require(bytes.size() % kRecord == 0, Errc::format,
          "truncated record: " + std::to_string(bytes.size()) + " bytes is not a multiple of 16");
  PointCloud cloud;
  cloud.frame_id = std::move(frame_id);
  const std::size_t n = bytes.size() / kRecord;
  cloud.points.reserve(n);
  float rec[4];
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(rec, bytes.data() + i * kRecord, kRecord);
    cloud.points.push_back(detail::point_from_record(rec, i));
  }
  return cloud;
}

inline PointCloud load_scan(const std::filesystem::path& path, ScanFormat format) {
  const std::string frame = path.stem().string();
  if (format == ScanFormat::kitti_bin) return decode_kitti_bin(read_file_bytes(path), frame);

  const LpciTensor t = read_lpci(path);
  require(t.shape.size() == 2 && t.shape[1] == 4, Errc::format,
          "lpci scan must be an N x 4 matrix");
  require(t.shape[0] > 0, Errc::format, "empty scan");
  PointCloud cloud;
  cloud.frame_id = frame;
  cloud.points.reserve(t.shape[0]);
  for (std::size_t i = 0; i < t.shape[0]; ++i)
    cloud.points.push_back(detail::point_from_record(t.data.data() + 4 * i, i));
  return cloud;
}

inline PointCloud load_scan(const std::filesystem::path& path) {
  return load_scan(path, scan_format_for(path));
}

inline std::vector<float> pack_points(const PointCloud& cloud) {
  std::vector<float> out;
  out.reserve(cloud.size() * 4);
  for (const Point& p : cloud.points) {
    out.push_back(static_cast<float>(p.x));
    out.push_back(static_cast<float>(p.y));
    out.push_back(static_cast<float>(p.z));
    out.push_back(static_cast<float>(p.intensity));
  }
  return out;
}

/// Writes a cloud; an empty cloud produces an empty kitti-bin file or a 0 x 4 lpci.
inline void save_scan(const PointCloud& cloud, const std::filesystem::path& path,
                      ScanFormat format) {
  const std::vector<float> packed = pack_points(cloud);
  if (format == ScanFormat::kitti_bin) {
    write_file_bytes(path, std::string(reinterpret_cast<const char*>(packed.data()),
                                       packed.size() * sizeof(float)));
    return;
  }
  LpciTensor t;
  t.shape = {cloud.size(), 4};
  t.data = packed;
  t.meta["kind"] = "points";
  t.meta["frame_id"] = cloud.frame_id;
  write_lpci(path, t);
}

namespace detail {

inline std::vector<KdTree3::Vec3> coordinates(const PointCloud& cloud) {
  std::vector<KdTree3::Vec3> xyz;
  xyz.reserve(cloud.size());
  for (const Point& p : cloud.points) xyz.push_back({p.x, p.y, p.z});
  return xyz;
}

}  // namespace detail

/// Smallest value a density may take; coincident neighbours would otherwise give 0.
inline constexpr double kMinDensity = 1e-9;

inline DensityEstimate knn_density(const PointCloud& cloud, std::size_t k) {
  require(k >= 1, Errc::param, "k must be at least 1");
  require(cloud.size() > k, Errc::insufficient_points,
          "cloud has " + std::to_string(cloud.size()) + " points, need more than k=" +
              std::to_string(k));
  const auto xyz = detail::coordinates(cloud);
  const KdTree3 tree(xyz);

  DensityEstimate est;
  est.k = k;
  est.mean_knn_distance.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nn = tree.knn(xyz[i], k, i);
    double sum = 0.0;
    for (const auto& n : nn) sum += std::sqrt(n.dist2);
    est.mean_knn_distance[i] = std::max(sum / static_cast<double>(k), kMinDensity);
  }
  return est;
}

struct SmoothingConfig {
  bool enabled = false;
  std::size_t k = 10;
  double sigma_scale = 1.0;
  double radius_scale = 3.0;
  bool include_center = true;
};

/// Density-adaptive Gaussian smoothing of radial depth. Each point keeps its
/// direction; its range becomes the Gaussian-weighted mean of the ranges of
/// neighbours within radius_scale * density, with sigma = sigma_scale * density.
inline PointCloud smooth_depths(const PointCloud& cloud, const DensityEstimate& density,
                                double sigma_scale, double radius_scale,
                                bool include_center = true) {
  require(density.mean_knn_distance.size() == cloud.size(), Errc::shape,
          "density estimate length does not match cloud size");
  require(sigma_scale > 0 && radius_scale > 0, Errc::param, "smoothing scales must be positive");

  const auto xyz = detail::coordinates(cloud);
  const KdTree3 tree(xyz);
  std::vector<double> depth(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) depth[i] = cloud.points[i].range();

  PointCloud out = cloud;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (depth[i] <= 0.0) continue;
    const double sigma = sigma_scale * density.mean_knn_distance[i];
    const double radius = radius_scale * density.mean_knn_distance[i];
    double wsum = 0.0;
    double acc = 0.0;
    for (const auto& n : tree.radius_search(xyz[i], radius)) {
      if (n.index == i && !include_center) continue;
      const double w = std::exp(-n.dist2 / (2.0 * sigma * sigma));
      wsum += w;
      acc += w * depth[n.index];
    }
    if (wsum <= 0.0) continue;
    const double scale = (acc / wsum) / depth[i];
    Point& p = out.points[i];
    p.x *= scale;
    p.y *= scale;
    p.z *= scale;
  }
  return out;
}

inline PointCloud smooth_depths(const PointCloud& cloud, const SmoothingConfig& cfg) {
  return smooth_depths(cloud, knn_density(cloud, cfg.k), cfg.sigma_scale, cfg.radius_scale,
                       cfg.include_center);
}

}  // namespace lidiff
