#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lidiff/adamw.hpp"
#include "lidiff/denoiser.hpp"
#include "lidiff/embedding.hpp"
#include "lidiff/error.hpp"
#include "lidiff/schedule.hpp"
#include "lidiff/tensor.hpp"

namespace lidiff {

struct DiffusionConfig {
  Schedule schedule;
  std::size_t sample_steps = 0;  // 0 means "same as training"
  EmbeddingSpec embedding;
  std::uint64_t seed = 0;

  std::size_t train_steps() const { return schedule.steps(); }
  std::size_t effective_sample_steps() const {
    return sample_steps == 0 ? train_steps() : sample_steps;
  }

  void validate() const {
    require(schedule.steps() >= 1, Errc::param, "diffusion needs a schedule");
    require(effective_sample_steps() <= train_steps(), Errc::param,
            "sample steps (" + std::to_string(effective_sample_steps()) +
                ") exceed training steps (" + std::to_string(train_steps()) + ")");
    embedding.validate();
  }
};

/// Clean images rescaled to [-1, 1], their time-steps (1-based) and noise.
template <typename S>
struct TrainingBatch {
  Tensor<S> x0;
  std::vector<std::size_t> t;
  Tensor<S> eps;
};

template <typename S>
void fill_standard_normal(Tensor<S>& t, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (S& v : t.data) v = static_cast<S>(normal(rng));
}

/// x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps for one shared step.
template <typename S>
Tensor<S> forward_sample(const Tensor<S>& x0, std::size_t t, const Tensor<S>& eps,
                         const Schedule& schedule) {
  require_same_shape(x0, eps, "forward_sample");
  require(t >= 1 && t <= schedule.steps(), Errc::step,
          "step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
  const double ab = schedule.alpha_bar(t);
  const S a = static_cast<S>(std::sqrt(ab));
  const S b = static_cast<S>(std::sqrt(1.0 - ab));
  Tensor<S> out = x0;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
  return out;
}

/// Per-item steps: item i of the batch uses ts[i].
template <typename S>
Tensor<S> forward_sample(const Tensor<S>& x0, const std::vector<std::size_t>& ts,
                         const Tensor<S>& eps, const Schedule& schedule) {
  require_same_shape(x0, eps, "forward_sample");
  require(ts.size() == x0.n(), Errc::shape, "one time-step per batch item required");
  Tensor<S> out = x0;
  for (std::size_t b = 0; b < x0.n(); ++b) {
    const std::size_t t = ts[b];
    require(t >= 1 && t <= schedule.steps(), Errc::step,
            "step " + std::to_string(t) + " outside [1, " + std::to_string(schedule.steps()) + "]");
    const double ab = schedule.alpha_bar(t);
    const S a = static_cast<S>(std::sqrt(ab));
    const S c = static_cast<S>(std::sqrt(1.0 - ab));
    const S* x = x0.item(b);
    const S* e = eps.item(b);
    S* o = out.item(b);
    for (std::size_t i = 0; i < x0.per_item(); ++i) o[i] = a * x[i] + c * e[i];
  }
  return out;
}

/// (B, d, 1, 1) embedding tensor for the given steps.
template <typename S>
Tensor<S> embedding_tensor(const std::vector<std::size_t>& ts, const EmbeddingSpec& spec) {
  Tensor<S> out(ts.size(), spec.dim, 1, 1);
  for (std::size_t b = 0; b < ts.size(); ++b) {
    const TimeEmbedding e = embed(static_cast<double>(ts[b]), spec);
    std::transform(e.begin(), e.end(), out.item(b), [](double v) { return static_cast<S>(v); });
  }
  return out;
}

/// Rescales [0,1] images to [-1,1] and draws uniform steps in [1, T] plus noise.
template <typename S>
TrainingBatch<S> make_training_batch(const Tensor<S>& images01, std::size_t train_steps,
                                     std::mt19937_64& rng) {
  TrainingBatch<S> batch;
  batch.x0 = images01;
  for (S& v : batch.x0.data) v = S(2) * v - S(1);
  std::uniform_int_distribution<std::size_t> step(1, train_steps);
  batch.t.resize(images01.n());
  for (auto& t : batch.t) t = step(rng);
  batch.eps = Tensor<S>(images01.n(), images01.c(), images01.h(), images01.w());
  fill_standard_normal(batch.eps, rng);
  return batch;
}

/// Graph-recording MSE between the drawn noise and the model's prediction.
template <typename S>
Var<S> training_loss_var(Denoiser<S>& model, const TrainingBatch<S>& batch,
                         const DiffusionConfig& cfg) {
  const Tensor<S> xt = forward_sample(batch.x0, batch.t, batch.eps, cfg.schedule);
  const Var<S> pred = model.forward(leaf(xt), leaf(embedding_tensor<S>(batch.t, cfg.embedding)));
  return mse_loss(pred, batch.eps);
}

template <typename S>
double training_loss(Denoiser<S>& model, const TrainingBatch<S>& batch,
                     const DiffusionConfig& cfg) {
  NoGradGuard guard;
  return static_cast<double>(training_loss_var(model, batch, cfg)->value.data[0]);
}

/// Evenly strided subset of [1, T] of length `count`, ascending, always ending at T.
inline std::vector<std::size_t> sampling_steps(std::size_t train_steps, std::size_t count) {
  require(count >= 1 && count <= train_steps, Errc::param,
          "sample steps must be in [1, " + std::to_string(train_steps) + "]");
  std::vector<std::size_t> steps(count);
  for (std::size_t k = 1; k <= count; ++k) steps[k - 1] = (k * train_steps) / count;
  return steps;
}

/// Coefficients of one reverse transition from step `cur` down to `prev`
/// (prev = 0 is the clean image). Adjacent steps use the schedule's own
/// alpha/beta; strided jumps use alpha = abar_cur / abar_prev.
struct ReverseCoefficients {
  double alpha;
  double beta;
  double alpha_bar;
  double sigma;
};

inline ReverseCoefficients reverse_coefficients(const Schedule& s, std::size_t cur,
                                                std::size_t prev) {
  require(cur >= 1 && cur <= s.steps() && prev < cur, Errc::step, "invalid reverse transition");
  ReverseCoefficients c{};
  c.alpha_bar = s.alpha_bar(cur);
  if (prev + 1 == cur) {
    c.alpha = s.alpha(cur);
    c.beta = s.beta(cur);
  } else {
    const double prev_bar = prev == 0 ? 1.0 : s.alpha_bar(prev);
    c.alpha = c.alpha_bar / prev_bar;
    c.beta = 1.0 - c.alpha;
  }
  c.sigma = prev == 0 ? 0.0 : std::sqrt(c.beta);
  return c;
}

/// x_prev = (x - beta / sqrt(1 - abar) * eps_hat) / sqrt(alpha) + sigma * z.
template <typename S>
Tensor<S> reverse_step(const Tensor<S>& x, const Tensor<S>& eps_hat, const ReverseCoefficients& c,
                       const Tensor<S>* z) {
  require_same_shape(x, eps_hat, "reverse_step");
  const double k = c.beta / std::sqrt(1.0 - c.alpha_bar);
  const double inv = 1.0 / std::sqrt(c.alpha);
  Tensor<S> out = x;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double v = inv * (static_cast<double>(x.data[i]) - k * static_cast<double>(eps_hat.data[i]));
    if (z != nullptr) v += c.sigma * static_cast<double>(z->data[i]);
    out.data[i] = static_cast<S>(v);
  }
  return out;
}

struct SampleStats {
  std::size_t denoiser_calls = 0;
  std::size_t steps = 0;
  double seconds = 0.0;
};

/// Ancestral sampling from pure noise. Returns images in [0, 1].
template <typename S>
Tensor<S> sample(Denoiser<S>& model, const DiffusionConfig& cfg,
                 const std::array<std::size_t, 4>& shape, std::mt19937_64& rng,
                 SampleStats* stats = nullptr) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const bool was_training = model.training();
  model.set_training(false);

  Tensor<S> x(shape[0], shape[1], shape[2], shape[3]);
  fill_standard_normal(x, rng);
  const std::vector<std::size_t> steps = sampling_steps(cfg.train_steps(), cfg.effective_sample_steps());
  Tensor<S> z(shape[0], shape[1], shape[2], shape[3]);
  std::size_t calls = 0;
  for (std::size_t k = steps.size(); k-- > 0;) {
    const std::size_t cur = steps[k];
    const std::size_t prev = k == 0 ? 0 : steps[k - 1];
    const Tensor<S> eps_hat =
        model.predict(x, embedding_tensor<S>(std::vector<std::size_t>(shape[0], cur), cfg.embedding));
    ++calls;
    const ReverseCoefficients c = reverse_coefficients(cfg.schedule, cur, prev);
    if (prev > 0) fill_standard_normal(z, rng);
    x = reverse_step(x, eps_hat, c, prev > 0 ? &z : nullptr);
    for (S v : x.data)
      if (!std::isfinite(static_cast<double>(v)))
        fail(Errc::numerical, "non-finite value while sampling at step " + std::to_string(cur));
  }
  model.set_training(was_training);
  for (S& v : x.data) v = std::clamp((v + S(1)) / S(2), S(0), S(1));
  if (stats != nullptr) {
    stats->denoiser_calls = calls;
    stats->steps = steps.size();
    stats->seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return x;
}

/// The "full noise" reference: x_T drawn as the sampler would, mapped to
/// [0, 1] without any denoising.
template <typename S>
Tensor<S> full_noise_images(const std::array<std::size_t, 4>& shape, std::mt19937_64& rng) {
  Tensor<S> x(shape[0], shape[1], shape[2], shape[3]);
  fill_standard_normal(x, rng);
  for (S& v : x.data) v = std::clamp((v + S(1)) / S(2), S(0), S(1));
  return x;
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  OptimizerConfig optimizer;
  std::size_t patience = 5;         // 0 disables early stopping
  std::size_t max_steps = 0;        // 0 = unlimited
  double time_budget_seconds = 0;   // 0 = unlimited
};

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double val_loss;
};

/// Snapshot of model parameters and optimizer state.
template <typename S>
struct ModelSnapshot {
  std::vector<std::vector<S>> params;
  AdamWState<S> optimizer;
};

template <typename S>
ModelSnapshot<S> snapshot(Denoiser<S>& model, const AdamWState<S>& opt) {
  ModelSnapshot<S> snap;
  for (const auto& p : model.parameters()) snap.params.push_back(p.var->value.data);
  snap.optimizer = opt;
  return snap;
}

template <typename S>
void restore(Denoiser<S>& model, const ModelSnapshot<S>& snap) {
  auto params = model.parameters();
  require(params.size() == snap.params.size(), Errc::shape, "snapshot/model mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].var->value.size() == snap.params[i].size(), Errc::shape,
            "snapshot tensor size mismatch for " + params[i].name);
    params[i].var->value.data = snap.params[i];
  }
}

template <typename S>
struct TrainResult {
  std::vector<EpochRecord> history;
  ModelSnapshot<S> best;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t optimizer_steps = 0;
  bool stopped_early = false;
  bool budget_exhausted = false;
};

/// Stacks single images (1, C, H, W) selected by `indices` into a batch.
template <typename S>
Tensor<S> stack_images(const std::vector<Tensor<S>>& images, const std::vector<std::size_t>& indices) {
  const Tensor<S>& first = images.at(indices.at(0));
  Tensor<S> out(indices.size(), first.c(), first.h(), first.w());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor<S>& img = images.at(indices[i]);
    require(img.per_item() == first.per_item(), Errc::shape, "dataset images differ in shape");
    std::copy(img.data.begin(), img.data.end(), out.item(i));
  }
  return out;
}

/// Mean loss over a fixed-seed pass through `images` with the model in eval mode.
template <typename S>
double evaluation_loss(Denoiser<S>& model, const std::vector<Tensor<S>>& images,
                       const DiffusionConfig& cfg, std::size_t batch_size, std::uint64_t seed) {
  if (images.empty()) return std::numeric_limits<double>::quiet_NaN();
  const bool was_training = model.training();
  model.set_training(false);
  std::mt19937_64 rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < images.size(); i += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t j = i; j < std::min(images.size(), i + batch_size); ++j) idx.push_back(j);
    const auto batch = make_training_batch(stack_images(images, idx), cfg.train_steps(), rng);
    total += training_loss(model, batch, cfg) * static_cast<double>(idx.size());
    count += idx.size();
  }
  model.set_training(was_training);
  return total / static_cast<double>(count);
}

/// Epoch loop with AdamW, per-epoch validation and patience-based early
/// stopping. Images are single (1, C, H, W) tensors in [0, 1]. When `val` is
/// empty the training loss drives model selection.
template <typename S>
TrainResult<S> train_loop(Denoiser<S>& model, const std::vector<Tensor<S>>& train,
                          const std::vector<Tensor<S>>& val, const DiffusionConfig& cfg,
                          const TrainConfig& tc, AdamWState<S>& opt,
                          const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  require(!train.empty(), Errc::empty_input, "training set is empty");
  require(tc.batch_size >= 1, Errc::param, "batch size must be positive");
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  TrainResult<S> result;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < order.size(); i += tc.batch_size) {
      if ((tc.max_steps && result.optimizer_steps >= tc.max_steps) ||
          (tc.time_budget_seconds > 0 && elapsed() >= tc.time_budget_seconds)) {
        result.budget_exhausted = true;
        break;
      }
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), i + tc.batch_size)));
      const auto batch = make_training_batch(stack_images(train, idx), cfg.train_steps(), rng);
      model.zero_grad();
      const Var<S> loss = training_loss_var(model, batch, cfg);
      const double lv = static_cast<double>(loss->value.data[0]);
      if (!std::isfinite(lv))
        fail(Errc::numerical, "non-finite training loss at optimizer step " +
                                  std::to_string(opt.step + 1));
      backward(loss);
      optimizer_step(model, tc.optimizer, opt);
      ++result.optimizer_steps;
      sum += lv * static_cast<double>(idx.size());
      seen += idx.size();
    }
    if (seen == 0) break;

    const double train_loss = sum / static_cast<double>(seen);
    const double val_loss = val.empty() ? train_loss
                                        : evaluation_loss(model, val, cfg, tc.batch_size, cfg.seed + 1);
    const EpochRecord rec{epoch, train_loss, val_loss};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best = snapshot(model, opt);
      since_best = 0;
    } else if (tc.patience > 0 && ++since_best >= tc.patience) {
      result.stopped_early = true;
      break;
    }
    if (result.budget_exhausted) break;
  }
  if (result.best.params.empty()) result.best = snapshot(model, opt);
  return result;
}

}  // namespace lidiff
