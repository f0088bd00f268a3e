#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidiff/adamw.hpp"
#include "lidiff/denoiser.hpp"
#include "lidiff/diffusion.hpp"
#include "lidiff/embedding.hpp"
#include "lidiff/error.hpp"
#include "lidiff/lpci.hpp"
#include "lidiff/metrics.hpp"
#include "lidiff/pointcloud.hpp"
#include "lidiff/projection.hpp"
#include "lidiff/schedule.hpp"

namespace lidiff {

using nlohmann::json;

/// Everything a command needs, as one JSON document.
struct RunConfig {
  std::uint64_t seed = 0;
  ProjectionMeta equirect = ProjectionMeta::equirect_default();
  std::size_t bev_height = 1024;
  std::size_t bev_width = 1024;
  std::vector<std::string> views{"equirect"};
  bool png = false;
  SmoothingConfig smoothing;
  ScheduleParams schedule;
  EmbeddingSpec embedding;
  UNetConfig denoiser;
  TrainConfig training;
  std::size_t sample_steps = 0;  // 0: use every training step
  EvalConfig metrics;

  ProjectionMeta bev() const {
    ProjectionMeta m = equirect;
    m.height = bev_height;
    m.width = bev_width;
    return m;
  }

  /// Model config with the embedding width wired through.
  UNetConfig unet() const {
    UNetConfig u = denoiser;
    u.embed_dim = embedding.dim;
    u.in_channels = 1;
    return u;
  }

  DiffusionConfig diffusion() const {
    DiffusionConfig d;
    d.schedule = make_schedule(schedule);
    d.sample_steps = sample_steps;
    d.embedding = embedding;
    d.seed = seed;
    return d;
  }
};

// ------------------------------------------------------------ json mapping

inline json schedule_to_json(const ScheduleParams& p) {
  return {{"kind", std::string(schedule_name(p.kind))},
          {"steps", p.steps},
          {"beta_start", p.beta_start},
          {"beta_end", p.beta_end},
          {"ramp_segment", p.ramp_segment},
          {"cosine_offset", p.cosine_offset},
          {"sigmoid_low", p.sigmoid_low},
          {"sigmoid_high", p.sigmoid_high}};
}

inline ScheduleParams schedule_from_json(const json& j) {
  ScheduleParams p;
  p.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
  p.steps = j.at("steps").get<std::size_t>();
  p.beta_start = j.at("beta_start").get<double>();
  p.beta_end = j.at("beta_end").get<double>();
  p.ramp_segment = j.at("ramp_segment").get<std::size_t>();
  p.cosine_offset = j.at("cosine_offset").get<double>();
  p.sigmoid_low = j.at("sigmoid_low").get<double>();
  p.sigmoid_high = j.at("sigmoid_high").get<double>();
  return p;
}

inline json embedding_to_json(const EmbeddingSpec& e) {
  return {{"kind", to_string(e.kind)}, {"dim", e.dim}, {"harmonics", e.harmonics}};
}

inline EmbeddingSpec embedding_from_json(const json& j) {
  EmbeddingSpec e;
  e.kind = embedding_kind_from_string(j.at("kind").get<std::string>());
  e.dim = j.at("dim").get<std::size_t>();
  e.harmonics = j.at("harmonics").get<std::size_t>();
  return e;
}

inline json unet_to_json(const UNetConfig& u) {
  return {{"in_channels", u.in_channels}, {"base_channels", u.base_channels},
          {"depth", u.depth},             {"dropout", u.dropout_rate},
          {"embed_dim", u.embed_dim},     {"max_groups", u.max_groups},
          {"seed", u.seed}};
}

inline UNetConfig unet_from_json(const json& j) {
  UNetConfig u;
  u.in_channels = j.at("in_channels").get<std::size_t>();
  u.base_channels = j.at("base_channels").get<std::size_t>();
  u.depth = j.at("depth").get<std::size_t>();
  u.dropout_rate = j.at("dropout").get<double>();
  u.embed_dim = j.at("embed_dim").get<std::size_t>();
  u.max_groups = j.at("max_groups").get<std::size_t>();
  u.seed = j.at("seed").get<std::uint64_t>();
  return u;
}

inline json to_json(const RunConfig& c) {
  const auto& e = c.equirect;
  json denoiser = unet_to_json(c.denoiser);
  denoiser.erase("in_channels");
  denoiser.erase("embed_dim");
  return {
      {"seed", c.seed},
      {"projection",
       {{"d_max", e.d_max},
        {"theta_min", e.theta_min},
        {"theta_max", e.theta_max},
        {"bev_extent", e.bev_extent},
        {"height", e.height},
        {"width", e.width},
        {"bev_height", c.bev_height},
        {"bev_width", c.bev_width},
        {"views", c.views},
        {"png", c.png}}},
      {"smoothing",
       {{"enabled", c.smoothing.enabled},
        {"k", c.smoothing.k},
        {"sigma_scale", c.smoothing.sigma_scale},
        {"radius_scale", c.smoothing.radius_scale},
        {"include_center", c.smoothing.include_center}}},
      {"schedule", schedule_to_json(c.schedule)},
      {"embedding", embedding_to_json(c.embedding)},
      {"denoiser", denoiser},
      {"training",
       {{"epochs", c.training.epochs},
        {"batch_size", c.training.batch_size},
        {"lr", c.training.optimizer.learning_rate},
        {"weight_decay", c.training.optimizer.weight_decay},
        {"beta1", c.training.optimizer.beta1},
        {"beta2", c.training.optimizer.beta2},
        {"eps", c.training.optimizer.eps},
        {"patience", c.training.patience},
        {"max_steps", c.training.max_steps},
        {"time_budget_seconds", c.training.time_budget_seconds}}},
      {"sampling", {{"sample_steps", c.sample_steps}}},
      {"metrics", c.metrics.to_json()},
  };
}

namespace detail {

/// Every key of `doc` must exist in `schema`, recursively through objects.
inline void check_known_keys(const json& doc, const json& schema, const std::string& prefix) {
  require(doc.is_object(), Errc::config, "'" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    require(schema.contains(key), Errc::config, "unknown config key '" + path + "'");
    if (schema.at(key).is_object()) check_known_keys(value, schema.at(key), path);
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& doc) {
  const RunConfig defaults;
  json merged = to_json(defaults);
  detail::check_known_keys(doc, merged, "");
  merged.merge_patch(doc);
  RunConfig c;
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
    const json& p = merged.at("projection");
    c.equirect.d_max = p.at("d_max").get<double>();
    c.equirect.theta_min = p.at("theta_min").get<double>();
    c.equirect.theta_max = p.at("theta_max").get<double>();
    c.equirect.bev_extent = p.at("bev_extent").get<double>();
    c.equirect.height = p.at("height").get<std::size_t>();
    c.equirect.width = p.at("width").get<std::size_t>();
    c.bev_height = p.at("bev_height").get<std::size_t>();
    c.bev_width = p.at("bev_width").get<std::size_t>();
    c.views = p.at("views").get<std::vector<std::string>>();
    c.png = p.at("png").get<bool>();
    const json& s = merged.at("smoothing");
    c.smoothing.enabled = s.at("enabled").get<bool>();
    c.smoothing.k = s.at("k").get<std::size_t>();
    c.smoothing.sigma_scale = s.at("sigma_scale").get<double>();
    c.smoothing.radius_scale = s.at("radius_scale").get<double>();
    c.smoothing.include_center = s.at("include_center").get<bool>();
    c.schedule = schedule_from_json(merged.at("schedule"));
    c.embedding = embedding_from_json(merged.at("embedding"));
    json d = merged.at("denoiser");
    d["in_channels"] = 1;
    d["embed_dim"] = c.embedding.dim;
    c.denoiser = unet_from_json(d);
    const json& t = merged.at("training");
    c.training.epochs = t.at("epochs").get<std::size_t>();
    c.training.batch_size = t.at("batch_size").get<std::size_t>();
    c.training.optimizer.learning_rate = t.at("lr").get<double>();
    c.training.optimizer.weight_decay = t.at("weight_decay").get<double>();
    c.training.optimizer.beta1 = t.at("beta1").get<double>();
    c.training.optimizer.beta2 = t.at("beta2").get<double>();
    c.training.optimizer.eps = t.at("eps").get<double>();
    c.training.patience = t.at("patience").get<std::size_t>();
    c.training.max_steps = t.at("max_steps").get<std::size_t>();
    c.training.time_budget_seconds = t.at("time_budget_seconds").get<double>();
    c.sample_steps = merged.at("sampling").at("sample_steps").get<std::size_t>();
    const json& m = merged.at("metrics");
    c.metrics.bins = m.at("bins").get<std::size_t>();
    c.metrics.mmd_pool = m.at("mmd_pool").get<std::size_t>();
    c.metrics.mmd_bandwidth = m.at("mmd_bandwidth").get<double>();
    c.metrics.bev_height = m.at("bev_height").get<std::size_t>();
    c.metrics.bev_width = m.at("bev_width").get<std::size_t>();
    c.metrics.bev_extent = m.at("bev_extent").get<double>();
  } catch (const json::exception& e) {
    fail(Errc::config, std::string("invalid config value: ") + e.what());
  }
  c.equirect.validate();
  c.bev().validate();
  for (const auto& v : c.views)
    require(v == "equirect" || v == "bev", Errc::config, "unknown view '" + v + "'");
  c.embedding.validate();
  c.unet().validate();
  c.training.optimizer.validate();
  c.metrics.validate();
  return c;
}

/// Parses the right-hand side of --set: JSON when it parses, else a string.
inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

/// Applies "a.b.c=value" to `doc`, creating intermediate objects.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, Errc::config,
          "override must look like key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!key.empty(), Errc::config, "empty key segment in '" + path + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = parse_override_value(assignment.substr(eq + 1));
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

/// Layers the optional config file and then each override on top of `base`.
inline RunConfig load_run_config(const std::filesystem::path& file,
                                 const std::vector<std::string>& overrides,
                                 json base = json::object()) {
  json doc = std::move(base);
  if (!file.empty()) {
    try {
      doc.merge_patch(json::parse(read_file_bytes(file)));
    } catch (const json::parse_error& e) {
      fail(Errc::config, "cannot parse config " + file.string() + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace lidiff
