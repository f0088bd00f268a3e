#pragma once

/// Minimal reverse-mode differentiation over NCHW tensors: just the operators
/// the reference denoiser needs. Each op records its parents and a closure that
/// pushes the output gradient back; `backward` runs the closures in reverse
/// topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "lidiff/error.hpp"
#include "lidiff/tensor.hpp"

namespace lidiff {

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  void accumulate(const Tensor<S>& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
  }

  /// Gradient buffer shaped like value, zero-initialised on first use.
  Tensor<S>& grad_buffer() {
    if (grad.empty()) grad = Tensor<S>(value.n(), value.c(), value.h(), value.w());
    return grad;
  }
};

template <typename S>
using Var = std::shared_ptr<Node<S>>;

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording for its lifetime (inference, sampling).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
Var<S> leaf(Tensor<S> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

namespace detail {

template <typename S>
bool any_requires_grad(const std::vector<Var<S>>& parents) {
  if (!grad_enabled) return false;
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

/// Wraps an op result; the closure is kept only when some input needs a gradient.
template <typename S>
Var<S> make_op(Tensor<S> value, std::vector<Var<S>> parents, std::function<void(Node<S>&)> fn) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  if (any_requires_grad(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMapMat = Eigen::Map<const RowMat<S>>;

// Reductions with a fixed summation order. Eigen's vectorised redux peels a
// head that depends on pointer alignment, which made eval-mode outputs differ
// in the last bits between calls.
template <typename S, typename F>
double ordered_reduce(std::size_t n, F&& term) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += term(i + l);
  for (; i < n; ++i) lanes[i % 8] += term(i);
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

template <typename S>
double ordered_sum(const S* p, std::size_t n) {
  return ordered_reduce<S>(n, [p](std::size_t i) { return static_cast<double>(p[i]); });
}

template <typename S>
double ordered_dot(const S* a, const S* b, std::size_t n) {
  return ordered_reduce<S>(n, [a, b](std::size_t i) {
    return static_cast<double>(a[i]) * static_cast<double>(b[i]);
  });
}


struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;

  std::size_t rows() const { return channels * kernel * kernel; }
  std::size_t out_plane() const { return out_h * out_w; }

  /// Output x-range [lo, hi) whose input column ox*stride - pad + kx lies inside the image.
  std::pair<std::size_t, std::size_t> valid_x(std::size_t kx) const {
    return valid_range(kx, width, out_w);
  }
  std::pair<std::size_t, std::size_t> valid_y(std::size_t ky) const {
    return valid_range(ky, height, out_h);
  }

 private:
  std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t in,
                                                  std::size_t out) const {
    // need 0 <= o*stride + k - pad < in
    const long long kk = static_cast<long long>(k) - static_cast<long long>(pad);
    const long long s = static_cast<long long>(stride);
    long long lo = kk >= 0 ? 0 : (-kk + s - 1) / s;
    long long hi = (static_cast<long long>(in) - kk + s - 1) / s;
    hi = std::min<long long>(hi, static_cast<long long>(out));
    lo = std::min(lo, hi);
    return {static_cast<std::size_t>(std::max(lo, 0LL)), static_cast<std::size_t>(std::max(hi, 0LL))};
  }
};

/// One image (C x H x W) into columns [col_offset, col_offset + out_plane) of
/// a rows() x ld matrix.
template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* col, std::size_t ld, std::size_t col_offset) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const S* xc = x + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const auto [ylo, yhi] = g.valid_y(ky);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto [xlo, xhi] = g.valid_x(kx);
        S* dst = col + ((c * k + ky) * k + kx) * ld + col_offset;
        std::fill(dst, dst + g.out_plane(), S(0));
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const S* src = xc + (oy * g.stride + ky - g.pad) * g.width;
          S* row = dst + oy * g.out_w;
          if (g.stride == 1) {
            const S* s0 = src + xlo + kx - g.pad;
            std::copy(s0, s0 + (xhi - xlo), row + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) row[ox] = src[ox * g.stride + kx - g.pad];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates columns back into one image gradient.
template <typename S>
void col2im(const S* col, const ConvGeometry& g, std::size_t ld, std::size_t col_offset, S* dx) {
  const std::size_t k = g.kernel;
  for (std::size_t c = 0; c < g.channels; ++c) {
    S* dxc = dx + c * g.height * g.width;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const auto [ylo, yhi] = g.valid_y(ky);
      for (std::size_t kx = 0; kx < k; ++kx) {
        const auto [xlo, xhi] = g.valid_x(kx);
        const S* src = col + ((c * k + ky) * k + kx) * ld + col_offset;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          S* dst = dxc + (oy * g.stride + ky - g.pad) * g.width;
          const S* row = src + oy * g.out_w;
          if (g.stride == 1) {
            S* d0 = dst + kx - g.pad;
            for (std::size_t ox = xlo; ox < xhi; ++ox) d0[ox] += row[ox];
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride + kx - g.pad] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Runs reverse-mode accumulation from a scalar (or seeds with ones).
template <typename S>
void backward(const Var<S>& root) {
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  std::vector<std::pair<Node<S>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor<S>& seed = root->grad_buffer();
  std::fill(seed.data.begin(), seed.data.end(), S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

/// 2-D convolution. weight: (Cout, Cin, k, k); bias: (1, Cout, 1, 1).
/// Images are lowered to columns in chunks of roughly kConvChunkColumns so the
/// column matrix stays cache-resident.
inline constexpr std::size_t kConvChunkColumns = 4096;

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& weight, const Var<S>& bias, std::size_t stride,
              std::size_t pad) {
  const Tensor<S>& xv = x->value;
  const Tensor<S>& wv = weight->value;
  require(xv.c() == wv.c(), Errc::shape,
          "conv2d input has " + std::to_string(xv.c()) + " channels, weight expects " +
              std::to_string(wv.c()));
  require(wv.h() == wv.w(), Errc::shape, "conv2d kernel must be square");
  const std::size_t k = wv.h();
  require(xv.h() + 2 * pad >= k && xv.w() + 2 * pad >= k, Errc::shape, "conv2d input too small");
  const detail::ConvGeometry g{xv.c(), xv.h(), xv.w(), k, stride, pad,
                               (xv.h() + 2 * pad - k) / stride + 1,
                               (xv.w() + 2 * pad - k) / stride + 1};
  const std::size_t batch = xv.n();
  const std::size_t cout = wv.n();
  const std::size_t plane = g.out_plane();
  const std::size_t chunk = std::max<std::size_t>(1, kConvChunkColumns / plane);
  const bool record = detail::grad_enabled && (x->requires_grad || weight->requires_grad ||
                                               bias->requires_grad);

  using detail::ConstMapMat;
  using detail::RowMat;
  const auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  ConstMapMat<S> wm(wv.data.data(), E(cout), E(g.rows()));
  Tensor<S> out(batch, cout, g.out_h, g.out_w);
  const S* bv = bias->value.data.data();
  auto cols = std::make_shared<std::vector<std::vector<S>>>();
  std::vector<S> scratch;
  RowMat<S> ym;
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - b0);
    const std::size_t ld = nb * plane;
    std::vector<S>& col = record ? cols->emplace_back() : scratch;
    col.resize(g.rows() * ld);
    for (std::size_t i = 0; i < nb; ++i) detail::im2col(xv.item(b0 + i), g, col.data(), ld, i * plane);
    ym.noalias() = wm * ConstMapMat<S>(col.data(), E(g.rows()), E(ld));
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t co = 0; co < cout; ++co) {
        const S* src = ym.data() + co * ld + i * plane;
        S* dst = out.channel(b0 + i, co);
        const S bias_v = bv[co];
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bias_v;
      }
  }

  return detail::make_op<S>(
      std::move(out), {x, weight, bias}, [x, weight, bias, cols, g, batch, cout, chunk](Node<S>& self) {
        const auto E = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
        const Tensor<S>& gout = self.grad;
        const std::size_t plane = g.out_plane();
        ConstMapMat<S> wm(weight->value.data.data(), E(cout), E(g.rows()));
        RowMat<S> dy, dcol;
        std::size_t ci = 0;
        for (std::size_t b0 = 0; b0 < batch; b0 += chunk, ++ci) {
          const std::size_t nb = std::min(chunk, batch - b0);
          const std::size_t ld = nb * plane;
          dy.resize(E(cout), E(ld));
          for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t co = 0; co < cout; ++co)
              std::copy(gout.channel(b0 + i, co), gout.channel(b0 + i, co) + plane,
                        dy.data() + co * ld + i * plane);
          ConstMapMat<S> cm((*cols)[ci].data(), E(g.rows()), E(ld));
          if (weight->requires_grad) {
            Tensor<S>& gw = weight->grad_buffer();
            detail::MapMat<S> gwm(gw.data.data(), E(cout), E(g.rows()));
            gwm.noalias() += dy * cm.transpose();
          }
          if (bias->requires_grad) {
            Tensor<S>& gb = bias->grad_buffer();
            for (std::size_t co = 0; co < cout; ++co) 
              gb.data[co] += static_cast<S>(detail::ordered_sum(dy.data() + co * ld, ld));
          }
          if (x->requires_grad) {
            dcol.noalias() = wm.transpose() * dy;
            Tensor<S>& gx = x->grad_buffer();
            for (std::size_t i = 0; i < nb; ++i)
              detail::col2im(dcol.data(), g, ld, i * plane, gx.item(b0 + i));
          }
        }
      });
}

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;


/// Group normalisation with per-channel affine (gamma, beta: (1, C, 1, 1)).
template <typename S>
Var<S> group_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta, std::size_t groups,
                  S eps = S(1e-5)) {
  const Tensor<S>& xv = x->value;
  const std::size_t batch = xv.n(), channels = xv.c(), plane = xv.plane();
  require(groups >= 1 && channels % groups == 0, Errc::shape,
          "group_norm: channels must divide into groups");
  const std::size_t per_group = channels / groups;
  const std::size_t count = per_group * plane;
  const auto E = static_cast<Eigen::Index>(count);
  const auto P = static_cast<Eigen::Index>(plane);

  auto xhat = std::make_shared<Tensor<S>>(batch, channels, xv.h(), xv.w());
  auto inv_std = std::make_shared<std::vector<S>>(batch * groups);
  Tensor<S> out(batch, channels, xv.h(), xv.w());
  const S* gm = gamma->value.data.data();
  const S* bt = beta->value.data.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      ConstArrayMap<S> src(xv.channel(b, gi * per_group), E);
      const S* sp = xv.channel(b, gi * per_group);
      const double mean_d = detail::ordered_sum(sp, count) / static_cast<double>(count);
      const double var = detail::ordered_reduce<S>(count, [sp, mean_d](std::size_t i) {
                           const double d = static_cast<double>(sp[i]) - mean_d;
                           return d * d;
                         }) /
                         static_cast<double>(count);
      const S mean = static_cast<S>(mean_d);
      const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      (*inv_std)[b * groups + gi] = istd;
      ArrayMap<S> xh(xhat->channel(b, gi * per_group), E);
      xh = (src - mean) * istd;
      for (std::size_t j = 0; j < per_group; ++j) {
        const std::size_t ch = gi * per_group + j;
        ArrayMap<S>(out.channel(b, ch), P) =
            ConstArrayMap<S>(xhat->channel(b, ch), P) * gm[ch] + bt[ch];
      }
    }
  }

  return detail::make_op<S>(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, groups, per_group, plane, count](Node<S>& self) {
        const Tensor<S>& gout = self.grad;
        const std::size_t batch = gout.n(), channels = gout.c();
        const auto E = static_cast<Eigen::Index>(count);
        const auto P = static_cast<Eigen::Index>(plane);
        const S* gm = gamma->value.data.data();
        if (gamma->requires_grad || beta->requires_grad) {
          Tensor<S>& gg = gamma->grad_buffer();
          Tensor<S>& gbt = beta->grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t ch = 0; ch < channels; ++ch) {
              const S* go = gout.channel(b, ch);
              gg.data[ch] += static_cast<S>(detail::ordered_dot(go, xhat->channel(b, ch), plane));
              gbt.data[ch] += static_cast<S>(detail::ordered_sum(go, plane));
            }
        }
        if (!x->requires_grad) return;
        Tensor<S>& gx = x->grad_buffer();
        Eigen::Array<S, Eigen::Dynamic, 1> dxh(E);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t gi = 0; gi < groups; ++gi) {
            for (std::size_t j = 0; j < per_group; ++j) {
              const std::size_t ch = gi * per_group + j;
              dxh.segment(static_cast<Eigen::Index>(j * plane), P) =
                  ConstArrayMap<S>(gout.channel(b, ch), P) * gm[ch];
            }
            ConstArrayMap<S> xh(xhat->channel(b, gi * per_group), E);
            const S mean_d = static_cast<S>(detail::ordered_sum(dxh.data(), count) / static_cast<double>(count));
            const S mean_dx = static_cast<S>(detail::ordered_dot(dxh.data(), xh.data(), count) /
                                             static_cast<double>(count));
            const S istd = (*inv_std)[b * groups + gi];
            ArrayMap<S>(gx.channel(b, gi * per_group), E) += istd * (dxh - mean_d - xh * mean_dx);
          }
        }
      });
}

namespace detail {

// Eigen's vectorised exp and its scalar fallback round differently, and which
// elements take which path depends on pointer alignment. Running through an
// aligned scratch buffer keeps the split a function of the size alone.
inline constexpr std::size_t kAlignedChunk = 4096;

template <typename S>
using AlignedArray = Eigen::Array<S, Eigen::Dynamic, 1>;

}  // namespace detail

template <typename S>
Var<S> silu(const Var<S>& x) {
  const Tensor<S>& xv = x->value;
  Tensor<S> out(xv.n(), xv.c(), xv.h(), xv.w());
  detail::AlignedArray<S> buf(static_cast<Eigen::Index>(detail::kAlignedChunk));
  for (std::size_t i = 0; i < xv.size(); i += detail::kAlignedChunk) {
    const auto m = static_cast<Eigen::Index>(std::min(detail::kAlignedChunk, xv.size() - i));
    auto b = buf.head(m);
    b = ConstArrayMap<S>(xv.data.data() + i, m);
    b = b / (S(1) + (-b).exp());
    std::copy(b.data(), b.data() + m, out.data.data() + i);
  }
  return detail::make_op<S>(std::move(out), {x}, [x](Node<S>& self) {
    const std::size_t n = x->value.size();
    detail::AlignedArray<S> in(static_cast<Eigen::Index>(detail::kAlignedChunk));
    detail::AlignedArray<S> go(static_cast<Eigen::Index>(detail::kAlignedChunk));
    detail::AlignedArray<S> gi(static_cast<Eigen::Index>(detail::kAlignedChunk));
    S* gx = x->grad_buffer().data.data();
    for (std::size_t i = 0; i < n; i += detail::kAlignedChunk) {
      const auto m = static_cast<Eigen::Index>(std::min(detail::kAlignedChunk, n - i));
      auto a = in.head(m);
      auto g = go.head(m);
      auto r = gi.head(m);
      a = ConstArrayMap<S>(x->value.data.data() + i, m);
      g = ConstArrayMap<S>(self.grad.data.data() + i, m);
      const auto sig = (S(1) + (-a).exp()).inverse();
      r = g * sig * (S(1) + a * (S(1) - sig));
      for (Eigen::Index j = 0; j < m; ++j) gx[i + static_cast<std::size_t>(j)] += r[j];
    }
  });
}

/// Inverted dropout; identity when rate is zero.
template <typename S>
Var<S> dropout(const Var<S>& x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  // two 32-bit keep/drop decisions per engine draw
  const auto threshold = static_cast<std::uint64_t>(rate * 4294967296.0);
  auto mask = std::make_shared<std::vector<S>>(x->value.size());
  for (std::size_t i = 0; i < mask->size(); i += 2) {
    const std::uint64_t r = rng();
    (*mask)[i] = (r & 0xffffffffULL) >= threshold ? scale : S(0);
    if (i + 1 < mask->size()) (*mask)[i + 1] = (r >> 32) >= threshold ? scale : S(0);
  }
  const auto n = static_cast<Eigen::Index>(mask->size());
  Tensor<S> out = x->value;
  ArrayMap<S>(out.data.data(), n) *= ConstArrayMap<S>(mask->data(), n);
  return detail::make_op<S>(std::move(out), {x}, [x, mask](Node<S>& self) {
    const auto n = static_cast<Eigen::Index>(mask->size());
    ArrayMap<S>(x->grad_buffer().data.data(), n) +=
        ConstArrayMap<S>(self.grad.data.data(), n) * ConstArrayMap<S>(mask->data(), n);
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<S> out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  return detail::make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& self) {
    if (a->requires_grad) a->accumulate(self.grad);
    if (b->requires_grad) b->accumulate(self.grad);
  });
}

/// x (B, C, H, W) + v (B, C, 1, 1) broadcast over the plane.
template <typename S>
Var<S> add_channel(const Var<S>& x, const Var<S>& v) {
  const Tensor<S>& xv = x->value;
  require(v->value.n() == xv.n() && v->value.c() == xv.c() && v->value.plane() == 1, Errc::shape,
          "add_channel: vector must be (B, C, 1, 1)");
  Tensor<S> out = xv;
  for (std::size_t b = 0; b < xv.n(); ++b)
    for (std::size_t ch = 0; ch < xv.c(); ++ch) {
      const S add = v->value.data[b * xv.c() + ch];
      S* dst = out.channel(b, ch);
      for (std::size_t i = 0; i < xv.plane(); ++i) dst[i] += add;
    }
  return detail::make_op<S>(std::move(out), {x, v}, [x, v](Node<S>& self) {
    if (x->requires_grad) x->accumulate(self.grad);
    if (v->requires_grad) {
      Tensor<S>& gv = v->grad_buffer();
      const Tensor<S>& go = self.grad;
      for (std::size_t b = 0; b < go.n(); ++b)
        for (std::size_t ch = 0; ch < go.c(); ++ch) {
          const S* src = go.channel(b, ch);
          S acc = 0;
          for (std::size_t i = 0; i < go.plane(); ++i) acc += src[i];
          gv.data[b * go.c() + ch] += acc;
        }
    }
  });
}

template <typename S>
Var<S> upsample_nearest2(const Var<S>& x) {
  const Tensor<S>& xv = x->value;
  Tensor<S> out(xv.n(), xv.c(), xv.h() * 2, xv.w() * 2);
  for (std::size_t b = 0; b < xv.n(); ++b)
    for (std::size_t ch = 0; ch < xv.c(); ++ch)
      for (std::size_t y = 0; y < out.h(); ++y)
        for (std::size_t xx = 0; xx < out.w(); ++xx) out(b, ch, y, xx) = xv(b, ch, y / 2, xx / 2);
  return detail::make_op<S>(std::move(out), {x}, [x](Node<S>& self) {
    Tensor<S>& gx = x->grad_buffer();
    const Tensor<S>& go = self.grad;
    for (std::size_t b = 0; b < go.n(); ++b)
      for (std::size_t ch = 0; ch < go.c(); ++ch)
        for (std::size_t y = 0; y < go.h(); ++y)
          for (std::size_t xx = 0; xx < go.w(); ++xx) gx(b, ch, y / 2, xx / 2) += go(b, ch, y, xx);
  });
}

template <typename S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  const Tensor<S>& av = a->value;
  const Tensor<S>& bv = b->value;
  require(av.n() == bv.n() && av.h() == bv.h() && av.w() == bv.w(), Errc::shape,
          "concat_channels: batch and spatial extents must match");
  Tensor<S> out(av.n(), av.c() + bv.c(), av.h(), av.w());
  for (std::size_t i = 0; i < av.n(); ++i) {
    std::copy(av.item(i), av.item(i) + av.per_item(), out.item(i));
    std::copy(bv.item(i), bv.item(i) + bv.per_item(), out.item(i) + av.per_item());
  }
  return detail::make_op<S>(std::move(out), {a, b}, [a, b](Node<S>& self) {
    const Tensor<S>& go = self.grad;
    const std::size_t na = a->value.per_item(), nb = b->value.per_item();
    for (std::size_t i = 0; i < go.n(); ++i) {
      const S* src = go.item(i);
      if (a->requires_grad) {
        S* dst = a->grad_buffer().item(i);
        for (std::size_t j = 0; j < na; ++j) dst[j] += src[j];
      }
      if (b->requires_grad) {
        S* dst = b->grad_buffer().item(i);
        for (std::size_t j = 0; j < nb; ++j) dst[j] += src[na + j];
      }
    }
  });
}

/// Mean squared error against a constant target; returns a (1,1,1,1) scalar.
template <typename S>
Var<S> mse_loss(const Var<S>& pred, const Tensor<S>& target) {
  require_same_shape(pred->value, target, "mse_loss");
  const std::size_t n = target.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred->value.data[i]) - static_cast<double>(target.data[i]);
    acc += d * d;
  }
  Tensor<S> out(1, 1, 1, 1, static_cast<S>(acc / static_cast<double>(n)));
  return detail::make_op<S>(std::move(out), {pred}, [pred, target](Node<S>& self) {
    const S scale = S(2) * self.grad.data[0] / static_cast<S>(target.size());
    Tensor<S>& gp = pred->grad_buffer();
    for (std::size_t i = 0; i < target.size(); ++i)
      gp.data[i] += scale * (pred->value.data[i] - target.data[i]);
  });
}

}  // namespace lidiff
