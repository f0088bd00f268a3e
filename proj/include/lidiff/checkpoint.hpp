#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidiff/adamw.hpp"
#include "lidiff/config.hpp"
#include "lidiff/denoiser.hpp"
#include "lidiff/error.hpp"
#include "lidiff/lpci.hpp"

namespace lidiff {

/// Model weights, optimizer moments and the settings needed to rebuild and
/// resume. Stored as a flat float32 LPCI tensor; meta lists each named slice.
struct Checkpoint {
  UNetConfig unet;
  ScheduleParams schedule;
  EmbeddingSpec embedding;
  std::vector<std::string> names;
  std::vector<std::array<std::size_t, 4>> shapes;
  std::vector<std::vector<float>> params;
  AdamWState<float> optimizer;
  std::size_t epochs_completed = 0;
  double best_val_loss = 0.0;
  json run_config = json::object();
};

inline Checkpoint make_checkpoint(Denoiser<float>& model, const UNetConfig& unet,
                                  const ScheduleParams& schedule, const EmbeddingSpec& embedding) {
  Checkpoint c;
  c.unet = unet;
  c.schedule = schedule;
  c.embedding = embedding;
  for (const auto& p : model.parameters()) {
    c.names.push_back(p.name);
    c.shapes.push_back(p.var->value.shape);
    c.params.push_back(p.var->value.data);
  }
  return c;
}

inline LpciTensor checkpoint_to_lpci(const Checkpoint& c) {
  require(c.names.size() == c.params.size() && c.shapes.size() == c.params.size(), Errc::shape,
          "checkpoint tensor lists disagree");
  const bool moments = !c.optimizer.first.empty();
  if (moments)
    require(c.optimizer.first.size() == c.params.size() && c.optimizer.second.size() == c.params.size(),
            Errc::shape, "optimizer state does not match parameters");
  LpciTensor t;
  json tensors = json::array();
  std::size_t offset = 0;
  auto append = [&](const std::vector<float>& v) {
    t.data.insert(t.data.end(), v.begin(), v.end());
    const std::size_t at = offset;
    offset += v.size();
    return at;
  };
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    json e = {{"name", c.names[i]}, {"shape", c.shapes[i]}, {"offset", append(c.params[i])}};
    if (moments) {
      e["m_offset"] = append(c.optimizer.first[i]);
      e["v_offset"] = append(c.optimizer.second[i]);
    }
    tensors.push_back(e);
  }
  t.shape = {t.data.size()};
  t.meta = {{"kind", "checkpoint"},
            {"unet", unet_to_json(c.unet)},
            {"schedule", schedule_to_json(c.schedule)},
            {"embedding", embedding_to_json(c.embedding)},
            {"optimizer_step", c.optimizer.step},
            {"has_moments", moments},
            {"epochs_completed", c.epochs_completed},
            {"best_val_loss", c.best_val_loss},
            {"tensors", tensors},
            {"run_config", c.run_config}};
  return t;
}

inline Checkpoint checkpoint_from_lpci(const LpciTensor& t) {
  require(t.meta.value("kind", "") == "checkpoint", Errc::format, "file is not a checkpoint");
  Checkpoint c;
  try {
    c.unet = unet_from_json(t.meta.at("unet"));
    c.schedule = schedule_from_json(t.meta.at("schedule"));
    c.embedding = embedding_from_json(t.meta.at("embedding"));
    c.optimizer.step = t.meta.at("optimizer_step").get<std::size_t>();
    c.epochs_completed = t.meta.at("epochs_completed").get<std::size_t>();
    c.best_val_loss = t.meta.at("best_val_loss").get<double>();
    c.run_config = t.meta.value("run_config", json::object());
    const bool moments = t.meta.at("has_moments").get<bool>();
    auto slice = [&](std::size_t offset, std::size_t count) {
      require(offset + count <= t.data.size(), Errc::format, "checkpoint slice out of range");
      return std::vector<float>(t.data.begin() + static_cast<std::ptrdiff_t>(offset),
                                t.data.begin() + static_cast<std::ptrdiff_t>(offset + count));
    };
    for (const auto& e : t.meta.at("tensors")) {
      c.names.push_back(e.at("name").get<std::string>());
      const auto shape = e.at("shape").get<std::array<std::size_t, 4>>();
      c.shapes.push_back(shape);
      const std::size_t n = shape[0] * shape[1] * shape[2] * shape[3];
      c.params.push_back(slice(e.at("offset").get<std::size_t>(), n));
      if (moments) {
        c.optimizer.first.push_back(slice(e.at("m_offset").get<std::size_t>(), n));
        c.optimizer.second.push_back(slice(e.at("v_offset").get<std::size_t>(), n));
      }
    }
  } catch (const json::exception& e) {
    fail(Errc::format, std::string("malformed checkpoint header: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_lpci(path, checkpoint_to_lpci(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_lpci(read_lpci(path));
}

/// Copies weights into `model`, checking names and shapes one by one.
inline void load_weights(Denoiser<float>& model, const Checkpoint& c) {
  auto params = model.parameters();
  require(params.size() == c.params.size(), Errc::format,
          "checkpoint holds " + std::to_string(c.params.size()) + " tensors, model expects " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].name == c.names[i] && params[i].var->value.shape == c.shapes[i], Errc::format,
            "checkpoint tensor '" + c.names[i] + "' does not match model tensor '" + params[i].name + "'");
    params[i].var->value.data = c.params[i];
  }
}

}  // namespace lidiff
