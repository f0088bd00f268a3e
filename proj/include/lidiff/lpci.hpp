#pragma once

/// LPCI tensor container.
///
/// Layout (all integers little-endian):
///   "LPCI" | u32 version (=1) | u32 header_length | UTF-8 JSON header | float32 payload
///
/// The JSON header carries `dtype` ("float32"), `shape` (row-major extents) and
/// `meta`, a free-form object of named key-values. Payload length is always
/// product(shape) * 4 bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidiff/error.hpp"

namespace lidiff {

static_assert(std::endian::native == std::endian::little,
              "lpci and kitti-bin I/O assume a little-endian host");

inline constexpr char kLpciMagic[4] = {'L', 'P', 'C', 'I'};
inline constexpr std::uint32_t kLpciVersion = 1;

struct LpciTensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }
};

inline std::string encode_lpci(const LpciTensor& tensor) {
  require(tensor.element_count() == tensor.data.size(), Errc::shape,
          "lpci payload size does not match shape");
  nlohmann::json header;
  header["dtype"] = "float32";
  header["shape"] = tensor.shape;
  header["meta"] = tensor.meta.is_null() ? nlohmann::json::object() : tensor.meta;
  const std::string text = header.dump();

  std::string out;
  out.reserve(12 + text.size() + tensor.data.size() * 4);
  out.append(kLpciMagic, 4);
  auto put_u32 = [&out](std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
  };
  put_u32(kLpciVersion);
  put_u32(static_cast<std::uint32_t>(text.size()));
  out += text;
  out.append(reinterpret_cast<const char*>(tensor.data.data()), tensor.data.size() * sizeof(float));
  return out;
}

inline LpciTensor decode_lpci(const std::string& bytes) {
  require(bytes.size() >= 12, Errc::format, "lpci file shorter than its fixed header");
  require(std::memcmp(bytes.data(), kLpciMagic, 4) == 0, Errc::format, "bad lpci magic");
  std::uint32_t version = 0;
  std::uint32_t header_len = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&header_len, bytes.data() + 8, 4);
  require(version == kLpciVersion, Errc::format,
          "unsupported lpci version " + std::to_string(version));
  require(bytes.size() >= 12 + std::size_t{header_len}, Errc::format, "truncated lpci header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, std::string("lpci header is not valid JSON: ") + e.what());
  }
  require(header.value("dtype", "") == "float32", Errc::format, "lpci dtype must be float32");
  require(header.contains("shape") && header["shape"].is_array(), Errc::format,
          "lpci header lacks shape");

  LpciTensor tensor;
  tensor.shape = header["shape"].get<std::vector<std::size_t>>();
  if (header.contains("meta")) tensor.meta = header["meta"];
  const std::size_t count = tensor.element_count();
  const std::size_t payload = bytes.size() - 12 - header_len;
  require(payload == count * sizeof(float), Errc::format,
          "lpci payload is " + std::to_string(payload) + " bytes, shape requires " +
              std::to_string(count * sizeof(float)));
  tensor.data.resize(count);
  std::memcpy(tensor.data.data(), bytes.data() + 12 + header_len, payload);
  return tensor;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(Errc::io, "read failed for " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::io, "write failed for " + path.string());
}

inline LpciTensor read_lpci(const std::filesystem::path& path) {
  return decode_lpci(read_file_bytes(path));
}

inline void write_lpci(const std::filesystem::path& path, const LpciTensor& tensor) {
  write_file_bytes(path, encode_lpci(tensor));
}

}  // namespace lidiff
