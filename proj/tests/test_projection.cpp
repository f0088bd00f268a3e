#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "lidiff/lpci.hpp"
#include "lidiff/projection.hpp"

using namespace lidiff;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::io;
}

PointCloud cloud_in_fov(std::size_t n, std::uint64_t seed, const ProjectionMeta& m) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> th(m.theta_min, m.theta_max), ph(-kPi, kPi), dd(1.0, m.d_max);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back(spherical_to_cartesian({th(rng), ph(rng), dd(rng)}, 0.5));
  return c;
}

double wrap_angle(double a) {
  while (a > kPi) a -= 2 * kPi;
  while (a < -kPi) a += 2 * kPi;
  return a;
}

}  // namespace

TEST(Spherical, AxisExamples) {
  auto s = cartesian_to_spherical({0, 0, 1, 0});
  EXPECT_DOUBLE_EQ(s.theta, 0.0);
  EXPECT_DOUBLE_EQ(s.phi, 0.0);
  EXPECT_DOUBLE_EQ(s.d, 1.0);
  s = cartesian_to_spherical({1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(s.theta, kPi / 2);
  EXPECT_DOUBLE_EQ(s.phi, 0.0);
  s = cartesian_to_spherical({1, 1, 1, 0});
  EXPECT_NEAR(s.theta, 0.955317, 1e-6);
  EXPECT_NEAR(s.theta, std::acos(1 / std::sqrt(3.0)), 1e-15);
  EXPECT_DOUBLE_EQ(s.phi, kPi / 4);
  EXPECT_NEAR(s.d, 1.732051, 1e-6);
  EXPECT_EQ(code_of([] { cartesian_to_spherical({0, 0, 0, 0}); }), Errc::degenerate_point);
}

TEST(Spherical, InverseExamples) {
  auto p = spherical_to_cartesian({0.0, 1.234, 2.0});
  EXPECT_NEAR(p.x, 0, 1e-15);
  EXPECT_NEAR(p.y, 0, 1e-15);
  EXPECT_DOUBLE_EQ(p.z, 2.0);
  p = spherical_to_cartesian({kPi / 2, kPi / 2, 1.0});
  EXPECT_NEAR(p.x, 0, 1e-15);
  EXPECT_NEAR(p.y, 1, 1e-15);
  EXPECT_NEAR(p.z, 0, 1e-15);
  EXPECT_EQ(code_of([] { spherical_to_cartesian({1, 1, 0}); }), Errc::degenerate_point);
  EXPECT_EQ(code_of([] { spherical_to_cartesian({1, 1, -2}); }), Errc::degenerate_point);
}

TEST(Spherical, RoundTripRandomPoints) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 10000; ++i) {
    const Point p{u(rng), u(rng), u(rng), 0};
    const Point q = spherical_to_cartesian(cartesian_to_spherical(p));
    const double scale = p.range();
    ASSERT_NEAR(q.x, p.x, 1e-9 * scale);
    ASSERT_NEAR(q.y, p.y, 1e-9 * scale);
    ASSERT_NEAR(q.z, p.z, 1e-9 * scale);
  }
  const Point q = spherical_to_cartesian(cartesian_to_spherical({1, 1, 1, 0}));
  EXPECT_NEAR(q.x, 1, 1e-9);
  EXPECT_NEAR(q.y, 1, 1e-9);
  EXPECT_NEAR(q.z, 1, 1e-9);
}

TEST(Equirect, SinglePointOnXAxis) {
  ProjectionMeta m;
  m.theta_min = kPi / 2 - 0.1;
  m.theta_max = kPi / 2 + 0.1;
  PointCloud c;
  c.points = {{m.d_max / 2, 0, 0, 0.9}};
  const RangeImage img = project_equirect(c, m);
  ASSERT_EQ(img.height(), 64u);
  ASSERT_EQ(img.width(), 1024u);
  EXPECT_EQ(img.nonzero_count(), 1u);
  EXPECT_EQ(img.at(32, 512), 0.5f);
}

TEST(Equirect, NearestReturnAndClamp) {
  ProjectionMeta m;
  PointCloud c;
  c.points = {{20, 0, 0, 0}, {10, 0, 0, 0}, {200, 0, 5, 0}};
  const RangeImage img = project_equirect(c, m);
  const PixelIndex px = equirect_pixel(cartesian_to_spherical(c.points[0]), m);
  EXPECT_EQ(img.at(px.row, px.col), static_cast<float>(10 / m.d_max));
  const PixelIndex far = equirect_pixel(cartesian_to_spherical(c.points[2]), m);
  EXPECT_EQ(img.at(far.row, far.col), 1.0f);
  EXPECT_EQ(code_of([&] { project_equirect(PointCloud{}, m); }), Errc::empty_input);
}

TEST(Equirect, OrderInvariantAndInUnitRange) {
  ProjectionMeta m;
  m.height = 16;
  m.width = 64;
  PointCloud c = cloud_in_fov(3000, 3, m);
  const RangeImage a = project_equirect(c, m);
  std::shuffle(c.points.begin(), c.points.end(), std::mt19937_64(5));
  const RangeImage b = project_equirect(c, m);
  EXPECT_EQ(a.data, b.data);
  for (float v : a.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Equirect, OutOfFovRowsAreClamped) {
  ProjectionMeta m;
  PointCloud c;
  c.points = {{0, 0, 10, 0}, {0, 0, -10, 0}};
  const RangeImage img = project_equirect(c, m);
  EXPECT_GT(img.at(0, equirect_pixel(cartesian_to_spherical(c.points[0]), m).col), 0.0f);
  EXPECT_GT(img.at(m.height - 1, equirect_pixel(cartesian_to_spherical(c.points[1]), m).col), 0.0f);
}

TEST(Backproject, ZeroImageAndSinglePixel) {
  ProjectionMeta m;
  RangeImage img(ImageKind::equirect, m);
  EXPECT_TRUE(backproject_equirect(img).empty());
  img.at(0, 100) = 1.0f;
  const PointCloud c = backproject_equirect(img);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c.points[0].range(), m.d_max, 1e-9);
  EXPECT_EQ(c.points[0].intensity, 1.0);
  const auto s = cartesian_to_spherical(c.points[0]);
  EXPECT_NEAR(s.theta, m.theta_min + 0.5 * (m.theta_max - m.theta_min) / m.height, 1e-12);
  EXPECT_NEAR(s.phi, -kPi + 100.5 * 2 * kPi / m.width, 1e-12);
  RangeImage bev(ImageKind::bev, ProjectionMeta::bev_default());
  EXPECT_EQ(code_of([&] { backproject_equirect(bev); }), Errc::kind_mismatch);
}

TEST(Backproject, RoundTripWithinQuantisation) {
  ProjectionMeta m;
  const double dtheta = (m.theta_max - m.theta_min) / m.height;
  const double dphi = 2 * kPi / m.width;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const PointCloud src = cloud_in_fov(5000, seed, m);
    const RangeImage img = project_equirect(src, m);
    const PointCloud back = backproject_equirect(img);
    ASSERT_EQ(back.size(), img.nonzero_count());
    // nearest source point per pixel
    std::vector<double> best(m.height * m.width, 1e300);
    std::vector<SphericalCoord> who(m.height * m.width);
    for (const auto& p : src.points) {
      const auto s = cartesian_to_spherical(p);
      const auto px = equirect_pixel(s, m);
      const std::size_t k = px.row * m.width + px.col;
      if (s.d < best[k]) {
        best[k] = s.d;
        who[k] = s;
      }
    }
    for (const auto& q : back.points) {
      const auto s = cartesian_to_spherical(q);
      const auto px = equirect_pixel(s, m);
      const auto& src_s = who[px.row * m.width + px.col];
      ASSERT_LE(std::abs(s.theta - src_s.theta), dtheta / 2 + 1e-9);
      ASSERT_LE(std::abs(wrap_angle(s.phi - src_s.phi)), dphi / 2 + 1e-9);
      ASSERT_LE(std::abs(s.d - src_s.d), m.d_max / 65536.0);
    }
  }
}

TEST(Bev, CentreMaxAndOpenBoundary) {
  ProjectionMeta m = ProjectionMeta::bev_default();
  PointCloud c;
  c.points = {{0, 0, -1.5, 0.3}, {0.01, 0.01, 2, 0.7}, {m.bev_extent, 0, 0, 1.0}, {0, -m.bev_extent, 0, 1.0}};
  const RangeImage img = project_bev(c, m);
  EXPECT_EQ(img.kind, ImageKind::bev);
  EXPECT_EQ(img.at(512, 512), 0.7f);
  EXPECT_EQ(img.nonzero_count(), 1u);
  EXPECT_EQ(code_of([&] { project_bev(PointCloud{}, m); }), Errc::empty_input);
}

TEST(Bev, ValuesInUnitRange) {
  ProjectionMeta m = ProjectionMeta::bev_default();
  m.height = m.width = 128;
  PointCloud c;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-150, 150), in(-0.5, 1.5);
  for (int i = 0; i < 5000; ++i) c.points.push_back({u(rng), u(rng), u(rng), in(rng)});
  for (float v : project_bev(c, m).data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(RangeImageLpci, MetaTravelsWithImage) {
  ProjectionMeta m;
  m.height = 8;
  m.width = 32;
  m.d_max = 50;
  RangeImage img(ImageKind::equirect, m);
  img.at(3, 4) = 0.25f;
  const RangeImage back = range_image_from_lpci(decode_lpci(encode_lpci(to_lpci(img))));
  EXPECT_EQ(back.kind, ImageKind::equirect);
  EXPECT_EQ(back.meta, m);
  EXPECT_EQ(back.data, img.data);
  LpciTensor bare;
  bare.shape = {8, 32};
  bare.data.assign(256, 0.0f);
  EXPECT_EQ(code_of([&] { range_image_from_lpci(bare); }), Errc::format);
}

TEST(ProjectionMetaDefaults, Values) {
  const auto m = ProjectionMeta::equirect_default();
  EXPECT_EQ(m.d_max, 80.0);
  EXPECT_NEAR(m.theta_min, kPi / 2 - 2.0 * kPi / 180, 1e-15);
  EXPECT_NEAR(m.theta_max, kPi / 2 + 24.8 * kPi / 180, 1e-15);
  EXPECT_EQ(m.bev_extent, 120.0);
  EXPECT_EQ(ProjectionMeta::bev_default().height, 1024u);
  EXPECT_EQ(ProjectionMeta::bev_default().width, 1024u);
}
