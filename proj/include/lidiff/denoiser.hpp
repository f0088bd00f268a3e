#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lidiff/autograd.hpp"
#include "lidiff/error.hpp"
#include "lidiff/tensor.hpp"

namespace lidiff {

template <typename S>
struct NamedParameter {
  std::string name;
  Var<S> var;
};

/// Noise-prediction model eps(x_t, e_t). `forward` records a graph when
/// gradients are enabled; `predict` is the inference path.
template <typename S>
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  /// x: (B, C, H, W) noisy images; emb: (B, d, 1, 1) time embeddings.
  virtual Var<S> forward(const Var<S>& x, const Var<S>& emb) = 0;
  virtual std::vector<NamedParameter<S>> parameters() = 0;

  virtual void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  Tensor<S> predict(const Tensor<S>& x, const Tensor<S>& emb) {
    NoGradGuard guard;
    Tensor<S> out = forward(leaf(x), leaf(emb))->value;
    require_same_shape(out, x, "denoiser output");
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.var->grad = Tensor<S>();
  }

 protected:
  bool training_ = false;
};

template <typename S>
std::size_t count_parameters(Denoiser<S>& model) {
  std::size_t n = 0;
  for (const auto& p : model.parameters()) n += p.var->value.size();
  return n;
}

struct UNetConfig {
  std::size_t in_channels = 1;
  std::size_t base_channels = 32;
  std::size_t depth = 3;
  double dropout_rate = 0.1;
  std::size_t embed_dim = 128;
  std::size_t max_groups = 8;
  std::uint64_t seed = 0;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }

  void validate() const {
    require(depth >= 1, Errc::shape, "U-Net depth must be at least 1");
    require(in_channels >= 1 && base_channels >= 1 && embed_dim >= 1, Errc::param,
            "U-Net channel counts must be positive");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, Errc::param, "dropout rate must be in [0,1)");
  }

  bool operator==(const UNetConfig&) const = default;
};

namespace nn {

/// Largest divisor of `channels` not exceeding `max_groups`.
inline std::size_t group_count(std::size_t channels, std::size_t max_groups) {
  for (std::size_t g = std::min(channels, max_groups); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template <typename S>
class ParameterSet {
 public:
  Var<S> add(const std::string& name, Tensor<S> init) {
    auto v = leaf(std::move(init), true);
    params_.push_back({name, v});
    return v;
  }
  const std::vector<NamedParameter<S>>& all() const { return params_; }

 private:
  std::vector<NamedParameter<S>> params_;
};

template <typename S>
struct Conv2d {
  Var<S> weight;
  Var<S> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<S>& ps, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride_, std::mt19937_64& rng)
      : stride(stride_), pad(kernel / 2) {
    // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both weight and bias
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor<S> w(out, in, kernel, kernel);
    for (S& v : w.data) v = static_cast<S>(u(rng));
    Tensor<S> b(1, out, 1, 1);
    for (S& v : b.data) v = static_cast<S>(u(rng));
    weight = ps.add(name + ".weight", std::move(w));
    bias = ps.add(name + ".bias", std::move(b));
  }

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
};

template <typename S>
struct GroupNorm {
  Var<S> gamma;
  Var<S> beta;
  std::size_t groups = 1;

  GroupNorm() = default;
  GroupNorm(ParameterSet<S>& ps, const std::string& name, std::size_t channels,
            std::size_t max_groups)
      : groups(group_count(channels, max_groups)) {
    gamma = ps.add(name + ".gamma", Tensor<S>(1, channels, 1, 1, S(1)));
    beta = ps.add(name + ".beta", Tensor<S>(1, channels, 1, 1, S(0)));
  }

  Var<S> operator()(const Var<S>& x) const { return group_norm(x, gamma, beta, groups); }
};

/// conv-norm-act, add lifted time embedding, dropout, conv-norm-act, plus a
/// residual path (1x1 projection when widths differ).
template <typename S>
struct ResBlock {
  Conv2d<S> conv1, conv2, skip;
  GroupNorm<S> norm1, norm2;
  Conv2d<S> time_lift;
  bool project_skip = false;

  ResBlock() = default;
  ResBlock(ParameterSet<S>& ps, const std::string& name, std::size_t in, std::size_t out,
           const UNetConfig& cfg, std::mt19937_64& rng)
      : conv1(ps, name + ".conv1", in, out, 3, 1, rng),
        conv2(ps, name + ".conv2", out, out, 3, 1, rng),
        norm1(ps, name + ".norm1", out, cfg.max_groups),
        norm2(ps, name + ".norm2", out, cfg.max_groups),
        time_lift(ps, name + ".time", cfg.embed_dim, out, 1, 1, rng),
        project_skip(in != out) {
    if (project_skip) skip = Conv2d<S>(ps, name + ".skip", in, out, 1, 1, rng);
  }

  Var<S> operator()(const Var<S>& x, const Var<S>& emb, double dropout_rate, bool training,
                    std::mt19937_64& rng) const {
    Var<S> h = silu(norm1(conv1(x)));
    h = add_channel(h, time_lift(emb));
    if (training) h = dropout(h, dropout_rate, rng);
    h = silu(norm2(conv2(h)));
    return add(h, project_skip ? skip(x) : x);
  }
};

}  // namespace nn

/// Convolutional encoder-decoder with skip connections. Level l has
/// base_channels * 2^l channels; the bottleneck sits at level `depth`.
template <typename S>
class UNet final : public Denoiser<S> {
 public:
  explicit UNet(const UNetConfig& cfg) : cfg_(cfg), dropout_rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
    std::mt19937_64 rng(cfg.seed);
    nn::ParameterSet<S>& ps = params_;
    in_conv_ = nn::Conv2d<S>(ps, "in", cfg.in_channels, cfg.channels_at(0), 3, 1, rng);
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      const std::string tag = "enc" + std::to_string(l);
      enc_.emplace_back(ps, tag, cfg.channels_at(l), cfg.channels_at(l), cfg_, rng);
      down_.emplace_back(ps, tag + ".down", cfg.channels_at(l), cfg.channels_at(l + 1), 3, 2, rng);
    }
    mid_ = nn::ResBlock<S>(ps, "mid", cfg.channels_at(cfg.depth), cfg.channels_at(cfg.depth), cfg_,
                           rng);
    for (std::size_t l = cfg.depth; l-- > 0;) {
      dec_.emplace_back(ps, "dec" + std::to_string(l), cfg.channels_at(l + 1) + cfg.channels_at(l),
                        cfg.channels_at(l), cfg_, rng);
    }
    out_conv_ = nn::Conv2d<S>(ps, "out", cfg.channels_at(0), cfg.in_channels, 1, 1, rng);
  }

  const UNetConfig& config() const { return cfg_; }

  /// Checks that an H x W input survives `depth` halvings.
  void check_input(std::size_t height, std::size_t width) const {
    const std::size_t m = std::size_t{1} << cfg_.depth;
    require(height % m == 0 && width % m == 0, Errc::shape,
            "input " + std::to_string(height) + "x" + std::to_string(width) +
                " is not divisible by 2^depth = " + std::to_string(m));
  }

  Var<S> forward(const Var<S>& x, const Var<S>& emb) override {
    const Tensor<S>& xv = x->value;
    require(xv.c() == cfg_.in_channels, Errc::shape, "U-Net input channel mismatch");
    require(emb->value.n() == xv.n() && emb->value.c() == cfg_.embed_dim, Errc::shape,
            "time embedding must be (B, embed_dim, 1, 1)");
    check_input(xv.h(), xv.w());
    const bool train = this->training();
    const double rate = cfg_.dropout_rate;

    std::vector<Var<S>> skips;
    Var<S> h = in_conv_(x);
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      h = enc_[l](h, emb, rate, train, dropout_rng_);
      skips.push_back(h);
      h = down_[l](h);
    }
    h = mid_(h, emb, rate, train, dropout_rng_);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
      const std::size_t l = cfg_.depth - 1 - i;
      h = concat_channels(upsample_nearest2(h), skips[l]);
      h = dec_[i](h, emb, rate, train, dropout_rng_);
    }
    return out_conv_(h);
  }

  std::vector<NamedParameter<S>> parameters() override { return params_.all(); }

  /// Zeroes the final 1x1 projection so the model starts out predicting 0.
  void zero_output_layer() {
    std::fill(out_conv_.weight->value.data.begin(), out_conv_.weight->value.data.end(), S(0));
    std::fill(out_conv_.bias->value.data.begin(), out_conv_.bias->value.data.end(), S(0));
  }

  void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

 private:
  UNetConfig cfg_;
  nn::ParameterSet<S> params_;
  nn::Conv2d<S> in_conv_;
  std::vector<nn::ResBlock<S>> enc_;
  std::vector<nn::Conv2d<S>> down_;
  nn::ResBlock<S> mid_;
  std::vector<nn::ResBlock<S>> dec_;
  nn::Conv2d<S> out_conv_;
  std::mt19937_64 dropout_rng_;
};

/// Builds the reference denoiser for images of the given size.
template <typename S>
std::unique_ptr<UNet<S>> build_reference_unet(const UNetConfig& cfg, std::size_t height,
                                              std::size_t width) {
  cfg.validate();
  auto model = std::make_unique<UNet<S>>(cfg);
  model->check_input(height, width);
  return model;
}

}  // namespace lidiff
