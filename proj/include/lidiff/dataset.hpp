#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "lidiff/error.hpp"
#include "lidiff/projection.hpp"
#include "lidiff/tensor.hpp"

namespace lidiff {

template <typename S>
Tensor<S> image_tensor(const RangeImage& img) {
  Tensor<S> t(1, 1, img.height(), img.width());
  std::transform(img.data.begin(), img.data.end(), t.data.begin(), [](float v) { return static_cast<S>(v); });
  return t;
}

/// Splits a (B, 1, H, W) batch into images carrying `meta`.
template <typename S>
std::vector<RangeImage> tensor_images(const Tensor<S>& t, const ProjectionMeta& meta,
                                      ImageKind kind = ImageKind::equirect) {
  require(t.c() == 1 && t.h() == meta.height && t.w() == meta.width, Errc::shape,
          "tensor " + shape_string(t) + " does not match the image meta");
  std::vector<RangeImage> out;
  for (std::size_t b = 0; b < t.n(); ++b) {
    RangeImage img(kind, meta);
    std::transform(t.item(b), t.item(b) + t.per_item(), img.data.begin(),
                   [](S v) { return static_cast<float>(v); });
    out.push_back(std::move(img));
  }
  return out;
}

struct SplitCounts {
  std::size_t train;
  std::size_t val;
  std::size_t test;
};

/// 80/10/10 partition sizes: val and test get floor(n/10) each, the rest trains.
inline SplitCounts split_counts(std::size_t n) {
  const std::size_t tenth = n / 10;
  return {n - 2 * tenth, tenth, tenth};
}

struct DatasetSplit {
  std::vector<std::filesystem::path> train, val, test;
};

/// Deterministic split of the sorted file names: first 80% train, next 10%
/// validation, last 10% test.
inline DatasetSplit split_sorted(std::vector<std::filesystem::path> files) {
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  const SplitCounts c = split_counts(files.size());
  DatasetSplit s;
  s.train.assign(files.begin(), files.begin() + static_cast<std::ptrdiff_t>(c.train));
  s.val.assign(files.begin() + static_cast<std::ptrdiff_t>(c.train),
               files.begin() + static_cast<std::ptrdiff_t>(c.train + c.val));
  s.test.assign(files.begin() + static_cast<std::ptrdiff_t>(c.train + c.val), files.end());
  return s;
}

/// Regular files with the given extension directly inside `dir`, sorted by name.
inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir,
                                                     const std::string& extension) {
  std::error_code ec;
  require(std::filesystem::is_directory(dir, ec), Errc::io, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  return out;
}

}  // namespace lidiff
