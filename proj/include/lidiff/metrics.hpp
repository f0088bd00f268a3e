#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lidiff/error.hpp"
#include "lidiff/parallel.hpp"
#include "lidiff/projection.hpp"

namespace lidiff {

// ---------------------------------------------------------------- histograms

struct Histogram {
  std::vector<std::uint64_t> counts;

  std::size_t bins() const { return counts.size(); }
  std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

  std::vector<double> normalized() const {
    const std::uint64_t n = total();
    require(n > 0, Errc::empty_input, "histogram is empty");
    std::vector<double> p(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
      p[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
    return p;
  }
};

/// Bin of a value in [0, 1]: half-open [lo, hi), last bin closed.
inline std::size_t histogram_bin(double v, std::size_t bins) {
  const double scaled = std::clamp(v, 0.0, 1.0) * static_cast<double>(bins);
  return std::min(bins - 1, static_cast<std::size_t>(scaled));
}

inline void accumulate_histogram(Histogram& h, std::span<const float> pixels) {
  for (float v : pixels)
    if (v != 0.0f) ++h.counts[histogram_bin(v, h.bins())];
}

/// Pixel-value histogram over all images, "no return" zeros excluded.
inline Histogram intensity_histogram(std::span<const RangeImage> images, std::size_t bins = 256) {
  require(bins >= 2, Errc::param, "histogram needs at least 2 bins");
  Histogram h{std::vector<std::uint64_t>(bins, 0)};
  for (const RangeImage& img : images) accumulate_histogram(h, img.data);
  require(h.total() > 0, Errc::empty_input, "no nonzero pixels to histogram");
  return h;
}

/// Jensen-Shannon divergence in nats between two probability vectors.
inline double jsd(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), Errc::shape,
          "bin-count mismatch: " + std::to_string(p.size()) + " vs " + std::to_string(q.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    const double tp = p[i] > 0 ? p[i] * std::log(p[i] / m) : 0.0;
    const double tq = q[i] > 0 ? q[i] * std::log(q[i] / m) : 0.0;
    acc += 0.5 * (tp + tq);  // commutative per bin, so jsd(p,q) == jsd(q,p) exactly
  }
  return std::max(0.0, acc);
}

inline double jsd(const Histogram& p, const Histogram& q) {
  require(p.bins() == q.bins(), Errc::shape,
          "bin-count mismatch: " + std::to_string(p.bins()) + " vs " + std::to_string(q.bins()));
  const auto pn = p.normalized();
  const auto qn = q.normalized();
  return jsd(std::span<const double>(pn), std::span<const double>(qn));
}

// ---------------------------------------------------------------------- MMD

/// Samples are rows.
using SampleMatrix = Eigen::MatrixXd;

namespace detail {

inline Eigen::MatrixXd squared_distances(const SampleMatrix& a, const SampleMatrix& b) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm();
  const Eigen::VectorXd nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * a * b.transpose()).eval();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

struct KernelMeans {
  double xx_all, xx_offdiag, yy_all, yy_offdiag, xy;
};

inline KernelMeans kernel_means(const SampleMatrix& x, const SampleMatrix& y, double sigma) {
  require(x.cols() == y.cols(), Errc::shape, "MMD sample dimensions differ");
  require(sigma > 0 && !std::isnan(sigma), Errc::param, "MMD bandwidth must be positive");
  const double g = 1.0 / (2.0 * sigma * sigma);
  auto kern = [g](const Eigen::MatrixXd& d2) { return (-g * d2.array()).exp().matrix(); };
  const Eigen::MatrixXd kxx = kern(squared_distances(x, x));
  const Eigen::MatrixXd kyy = kern(squared_distances(y, y));
  const Eigen::MatrixXd kxy = kern(squared_distances(x, y));
  const double n = static_cast<double>(x.rows());
  const double m = static_cast<double>(y.rows());
  KernelMeans r{};
  r.xx_all = kxx.sum() / (n * n);
  r.yy_all = kyy.sum() / (m * m);
  r.xx_offdiag = n > 1 ? (kxx.sum() - kxx.trace()) / (n * (n - 1)) : 0.0;
  r.yy_offdiag = m > 1 ? (kyy.sum() - kyy.trace()) / (m * (m - 1)) : 0.0;
  r.xy = kxy.mean();
  return r;
}

}  // namespace detail

/// Biased (V-statistic) squared MMD with an RBF kernel; defined for any
/// non-empty sets.
inline double mmd_rbf_biased(const SampleMatrix& x, const SampleMatrix& y, double sigma) {
  require(x.rows() >= 1 && y.rows() >= 1, Errc::insufficient_samples, "MMD needs non-empty sets");
  const auto k = detail::kernel_means(x, y, sigma);
  return k.xx_all + k.yy_all - 2.0 * k.xy;
}

/// Unbiased (U-statistic) squared MMD: off-diagonal within-set means minus
/// twice the cross mean. May dip below zero.
inline double mmd_rbf_unbiased(const SampleMatrix& x, const SampleMatrix& y, double sigma) {
  require(x.rows() >= 2 && y.rows() >= 2, Errc::insufficient_samples,
          "unbiased MMD needs at least 2 samples per set");
  const auto k = detail::kernel_means(x, y, sigma);
  return k.xx_offdiag + k.yy_offdiag - 2.0 * k.xy;
}

/// Squared MMD used for reporting. Zero for identical multisets and never
/// negative (V-statistic); both sets must hold at least 2 samples.
inline double mmd_rbf(const SampleMatrix& x, const SampleMatrix& y, double sigma) {
  require(x.rows() >= 2 && y.rows() >= 2, Errc::insufficient_samples,
          "MMD needs at least 2 samples per set, got " + std::to_string(x.rows()) + " and " +
              std::to_string(y.rows()));
  return mmd_rbf_biased(x, y, sigma);
}

/// Median pairwise Euclidean distance over the pooled sample (distinct pairs).
/// Falls back to 1 when every pair coincides.
inline double median_bandwidth(const SampleMatrix& x, const SampleMatrix& y) {
  SampleMatrix joint(x.rows() + y.rows(), x.cols());
  joint << x, y;
  const Eigen::MatrixXd d2 = detail::squared_distances(joint, joint);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(joint.rows() * (joint.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < joint.rows(); ++i)
    for (Eigen::Index j = i + 1; j < joint.rows(); ++j) dists.push_back(std::sqrt(d2(i, j)));
  if (dists.empty()) return 1.0;
  const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  if (dists.size() % 2 == 0) med = 0.5 * (med + *std::max_element(dists.begin(), mid));
  return med > 0 ? med : 1.0;
}

// ------------------------------------------------------------------ Fréchet

struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Mean and unbiased covariance of the rows; a single sample has zero covariance.
inline FeatureStats feature_stats(const SampleMatrix& samples) {
  require(samples.rows() >= 1, Errc::empty_input, "no feature vectors");
  FeatureStats s;
  s.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centred = samples.rowwise() - s.mean.transpose();
  const double denom = samples.rows() > 1 ? static_cast<double>(samples.rows() - 1) : 1.0;
  s.cov = (centred.transpose() * centred) / denom;
  s.cov = 0.5 * (s.cov + s.cov.transpose());
  return s;
}

namespace detail {

/// Symmetric PSD square root; eigenvalues down to -tol*max(1, lambda_max)
/// are treated as zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  require(es.info() == Eigen::Success, Errc::numerical, std::string("eigendecomposition failed for ") + what);
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-6 * std::max(1.0, ev.size() ? ev.maxCoeff() : 0.0);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol)
      fail(Errc::numerical, std::string(what) + " is indefinite (eigenvalue " + std::to_string(ev(i)) + ")");
    ev(i) = std::sqrt(std::max(0.0, ev(i)));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline double psd_sqrt_trace(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, Errc::numerical, std::string("eigendecomposition failed for ") + what);
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double tol = 1e-6 * std::max(1.0, ev.size() ? ev.maxCoeff() : 0.0);
  double tr = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol)
      fail(Errc::numerical, std::string(what) + " is indefinite (eigenvalue " + std::to_string(ev(i)) + ")");
    tr += std::sqrt(std::max(0.0, ev(i)));
  }
  return tr;
}

}  // namespace detail

/// ||mu_a - mu_b||^2 + tr(A + B - 2 (A B)^(1/2)), with tr((AB)^(1/2))
/// evaluated as tr((A^(1/2) B A^(1/2))^(1/2)).
inline double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  require(a.dim() == b.dim(), Errc::shape,
          "feature dimensions differ: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  require(a.cov.rows() == a.mean.size() && a.cov.cols() == a.mean.size() &&
              b.cov.rows() == b.mean.size() && b.cov.cols() == b.mean.size(),
          Errc::shape, "covariance shape does not match mean length");
  const Eigen::MatrixXd ra = detail::psd_sqrt(a.cov, "first covariance");
  detail::psd_sqrt_trace(b.cov, "second covariance");
  const double cross = detail::psd_sqrt_trace(ra * b.cov * ra, "covariance product");
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

// -------------------------------------------------------- feature extraction

struct FeatureExtractor {
  std::string id;
  std::function<Eigen::VectorXd(const RangeImage&)> fn;
};

inline constexpr std::size_t kGradientBins = 8;

/// Patch mean/variance on 1x1, 2x2 and 4x4 grids (42 values) followed by an
/// 8-bin histogram of log10 gradient magnitudes spanning [1e-3, 1].
inline Eigen::VectorXd patch_gradient_features(const RangeImage& img) {
  const std::size_t h = img.height();
  const std::size_t w = img.width();
  require(h >= 4 && w >= 4, Errc::shape, "feature extractor needs images of at least 4x4");
  std::vector<double> f;
  f.reserve(42 + kGradientBins);
  for (std::size_t g : {1u, 2u, 4u}) {
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        const std::size_t y0 = gy * h / g, y1 = (gy + 1) * h / g;
        const std::size_t x0 = gx * w / g, x1 = (gx + 1) * w / g;
        double s = 0, s2 = 0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) {
            const double v = img.at(y, x);
            s += v;
            s2 += v * v;
          }
        const double n = static_cast<double>((y1 - y0) * (x1 - x0));
        const double mean = s / n;
        f.push_back(mean);
        f.push_back(std::max(0.0, s2 / n - mean * mean));
      }
    }
  }
  std::array<double, kGradientBins> hist{};
  const double count = static_cast<double>((h - 1) * (w - 1));
  for (std::size_t y = 0; y + 1 < h; ++y) {
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double dx = static_cast<double>(img.at(y, x + 1)) - img.at(y, x);
      const double dy = static_cast<double>(img.at(y + 1, x)) - img.at(y, x);
      const double g = std::sqrt(dx * dx + dy * dy);
      std::size_t bin = 0;
      if (g >= 1e-3) {
        const double pos = (std::log10(g) + 3.0) / 3.0 * static_cast<double>(kGradientBins - 1);
        bin = std::min(kGradientBins - 1, 1 + static_cast<std::size_t>(pos));
      }
      hist[bin] += 1.0 / count;
    }
  }
  f.insert(f.end(), hist.begin(), hist.end());
  return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
}

inline FeatureExtractor default_feature_extractor() {
  return {"patch-stats-grad-hist-v1", patch_gradient_features};
}

// ---------------------------------------------------------------- evaluate

/// Average pooling with a per-axis integer factor so each side is at most
/// `max_side` cells; trailing partial windows average what they cover.
inline std::vector<double> average_pool(const RangeImage& img, std::size_t max_side) {
  require(max_side >= 1, Errc::param, "pool size must be positive");
  const std::size_t fy = (img.height() + max_side - 1) / max_side;
  const std::size_t fx = (img.width() + max_side - 1) / max_side;
  const std::size_t oh = (img.height() + fy - 1) / fy;
  const std::size_t ow = (img.width() + fx - 1) / fx;
  std::vector<double> out(oh * ow, 0.0);
  std::vector<double> cnt(oh * ow, 0.0);
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      const std::size_t o = (y / fy) * ow + x / fx;
      out[o] += img.at(y, x);
      cnt[o] += 1.0;
    }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= cnt[i];
  return out;
}

/// BEV view of an image. Equirect inputs are back-projected with each point
/// carrying its normalised range as intensity, so BEV cells hold the farthest
/// normalised range that fell into them. BEV inputs pass through.
inline RangeImage to_bev(const RangeImage& img, const ProjectionMeta& bev_meta) {
  if (img.kind == ImageKind::bev) return img;
  PointCloud cloud;
  const ProjectionMeta& m = img.meta;
  for (std::size_t r = 0; r < m.height; ++r)
    for (std::size_t c = 0; c < m.width; ++c) {
      const float v = img.at(r, c);
      if (v <= 0.0f) continue;
      const double theta = m.theta_min + (static_cast<double>(r) + 0.5) / static_cast<double>(m.height) *
                                             (m.theta_max - m.theta_min);
      const double phi = (static_cast<double>(c) + 0.5) / static_cast<double>(m.width) * 2.0 * kPi - kPi;
      cloud.points.push_back(spherical_to_cartesian({theta, phi, static_cast<double>(v) * m.d_max}, v));
    }
  if (cloud.empty()) return RangeImage(ImageKind::bev, bev_meta);
  return project_bev(cloud, bev_meta);
}

struct EvalConfig {
  std::size_t bins = 256;
  std::size_t mmd_pool = 64;
  double mmd_bandwidth = 0.0;  // <= 0 selects the median heuristic
  std::size_t bev_height = 256;
  std::size_t bev_width = 256;
  double bev_extent = 120.0;

  ProjectionMeta bev_meta() const {
    ProjectionMeta m = ProjectionMeta::bev_default();
    m.height = bev_height;
    m.width = bev_width;
    m.bev_extent = bev_extent;
    return m;
  }

  void validate() const {
    require(bins >= 2, Errc::param, "histogram needs at least 2 bins");
    require(mmd_pool >= 1, Errc::param, "mmd_pool must be positive");
    bev_meta().validate();
  }

  nlohmann::json to_json() const {
    return {{"bins", bins},           {"mmd_pool", mmd_pool},   {"mmd_bandwidth", mmd_bandwidth},
            {"bev_height", bev_height}, {"bev_width", bev_width}, {"bev_extent", bev_extent}};
  }
};

struct MetricReport {
  double jsd = 0;
  double mmd = 0;
  double frechet = 0;
  double mmd_bandwidth = 0;
  std::size_t n_generated = 0;
  std::size_t n_reference = 0;
  std::string extractor_id;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const {
    return {{"jsd", jsd},
            {"mmd", mmd},
            {"frechet", frechet},
            {"mmd_bandwidth", mmd_bandwidth},
            {"n_generated", n_generated},
            {"n_reference", n_reference},
            {"extractor_id", extractor_id},
            {"config", config}};
  }
};

namespace detail {

struct SetSummary {
  Histogram hist;
  SampleMatrix pooled;
  SampleMatrix features;
};

inline SetSummary summarize(std::span<const RangeImage> images, const FeatureExtractor& extractor,
                            const EvalConfig& cfg) {
  const ProjectionMeta bev = cfg.bev_meta();
  std::vector<Histogram> hists(images.size(), Histogram{std::vector<std::uint64_t>(cfg.bins, 0)});
  std::vector<std::vector<double>> pooled(images.size());
  std::vector<Eigen::VectorXd> feats(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    const RangeImage b = to_bev(images[i], bev);
    accumulate_histogram(hists[i], b.data);
    pooled[i] = average_pool(b, cfg.mmd_pool);
    feats[i] = extractor.fn(images[i]);
  });
  SetSummary s;
  s.hist.counts.assign(cfg.bins, 0);
  for (const auto& h : hists)
    for (std::size_t k = 0; k < cfg.bins; ++k) s.hist.counts[k] += h.counts[k];
  const auto dim = static_cast<Eigen::Index>(pooled.front().size());
  const auto fdim = feats.front().size();
  s.pooled.resize(static_cast<Eigen::Index>(images.size()), dim);
  s.features.resize(static_cast<Eigen::Index>(images.size()), fdim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    require(static_cast<Eigen::Index>(pooled[i].size()) == dim && feats[i].size() == fdim, Errc::shape,
            "images in one set must share a shape");
    s.pooled.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(pooled[i].data(), dim);
    s.features.row(static_cast<Eigen::Index>(i)) = feats[i].transpose();
  }
  return s;
}

}  // namespace detail

/// JSD and MMD in BEV space, Fréchet distance over extractor features.
inline MetricReport evaluate(std::span<const RangeImage> generated, std::span<const RangeImage> reference,
                             const FeatureExtractor& extractor = default_feature_extractor(),
                             const EvalConfig& cfg = {}) {
  require(!generated.empty(), Errc::empty_input, "generated set is empty");
  require(!reference.empty(), Errc::empty_input, "reference set is empty");
  cfg.validate();
  const auto g = detail::summarize(generated, extractor, cfg);
  const auto r = detail::summarize(reference, extractor, cfg);
  require(g.pooled.cols() == r.pooled.cols(), Errc::shape, "generated and reference BEV sizes differ");

  MetricReport rep;
  rep.n_generated = generated.size();
  rep.n_reference = reference.size();
  rep.extractor_id = extractor.id;
  rep.config = cfg.to_json();
  if (g.hist.total() == 0 && r.hist.total() == 0) {
    rep.jsd = 0.0;
  } else {
    require(g.hist.total() > 0 && r.hist.total() > 0, Errc::empty_input,
            "one set has no nonzero BEV pixels");
    rep.jsd = jsd(g.hist, r.hist);
  }
  rep.mmd_bandwidth = cfg.mmd_bandwidth > 0 ? cfg.mmd_bandwidth : median_bandwidth(g.pooled, r.pooled);
  rep.mmd = mmd_rbf(g.pooled, r.pooled, rep.mmd_bandwidth);
  rep.frechet = frechet_distance(feature_stats(g.features), feature_stats(r.features));
  return rep;
}

}  // namespace lidiff
