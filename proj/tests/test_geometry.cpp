#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "depthopt/geometry.hpp"
#include "support/test_util.hpp"

using namespace depthopt;
using namespace depthopt::testutil;

namespace {

Intrinsics test_intrinsics() {
  Intrinsics K;
  K.fx = 60.0;
  K.fy = 55.0;
  K.cx = 15.5;
  K.cy = 11.5;
  K.width = 32;
  K.height = 24;
  return K;
}

}  // namespace

TEST_CASE("backproject principal ray and unit-slope ray") {
  const Intrinsics K = test_intrinsics();
  const Eigen::Vector3d p0 = backproject({K.cx, K.cy}, 2.0, K);
  CHECK(p0.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p0.y() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(p0.z() == doctest::Approx(2.0));

  const Eigen::Vector3d p1 = backproject({K.cx + K.fx, K.cy}, 1.0, K);
  CHECK(p1.x() == doctest::Approx(1.0));
  CHECK(p1.y() == doctest::Approx(0.0));
  CHECK(p1.z() == doctest::Approx(1.0));
}

TEST_CASE("backproject hand-evaluated point") {
  // fx=fy=200, cx=cy=0 puts pixel (100,50) at depth 3 on the ray
  // (100/200*3, 50/200*3, 3).
  Intrinsics K;
  K.fx = K.fy = 200.0;
  K.cx = K.cy = 1e-9;  // principal point must stay inside the image
  K.width = K.height = 400;
  const Eigen::Vector3d p = backproject({100.0, 50.0}, 3.0, K);
  CHECK(p.x() == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(p.y() == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(p.z() == doctest::Approx(3.0));
  const auto uv = project(p, K);
  REQUIRE(uv.has_value());
  CHECK(uv->u == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(uv->v == doctest::Approx(50.0).epsilon(1e-9));
}

TEST_CASE("backproject rejects non-positive depth, project rejects behind-camera") {
  const Intrinsics K = test_intrinsics();
  CHECK_THROWS_AS(backproject({1.0, 1.0}, 0.0, K), std::invalid_argument);
  CHECK_THROWS_AS(backproject({1.0, 1.0}, -2.0, K), std::invalid_argument);
  CHECK(!project({0.0, 0.0, 0.0}, K).has_value());
  CHECK(!project({0.0, 0.0, -1.0}, K).has_value());
  const auto uv = project({0.0, 0.0, 5.0}, K);
  REQUIRE(uv.has_value());
  CHECK(uv->u == doctest::Approx(K.cx));
  CHECK(uv->v == doctest::Approx(K.cy));
}

TEST_CASE("project. backproject round trip on random pixels and depths") {
  const Intrinsics K = test_intrinsics();
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const PixelCoord p{uniform(rng, 0.0, K.width - 1.0), uniform(rng, 0.0, K.height - 1.0)};
    const double d = uniform(rng, 0.1, 100.0);
    const auto uv = project(backproject(p, d, K), K);
    REQUIRE(uv.has_value());
    CHECK(std::abs(uv->u - p.u) < 1e-9);
    CHECK(std::abs(uv->v - p.v) < 1e-9);
  }
}

TEST_CASE("relative pose of identical poses is the identity") {
  std::mt19937_64 rng(11);
  const Eigen::Vector3d axis = Eigen::Vector3d(1.0, -2.0, 0.5).normalized();
  const PoseSE3 a(Eigen::AngleAxisd(0.7, axis).toRotationMatrix(), {1.0, 2.0, 3.0});
  const PoseSE3 rel = relative_pose(a, a);
  CHECK((rel.rotation() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rel.translation().cwiseAbs().maxCoeff() < 1e-12);
  (void)rng;
}

TEST_CASE("relative pose under pure world translation is the negated offset") {
  const Eigen::Vector3d delta(0.3, -0.1, 0.7);
  const PoseSE3 a(Eigen::Matrix3d::Identity(), {1.0, 1.0, 1.0});
  const PoseSE3 b(Eigen::Matrix3d::Identity(), a.translation() + delta);
  const PoseSE3 rel = relative_pose(a, b);
  CHECK((rel.translation() + delta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("relative poses compose to the identity both ways") {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d ax1 =
        Eigen::Vector3d(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1))
            .normalized();
    const Eigen::Vector3d ax2 =
        Eigen::Vector3d(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1))
            .normalized();
    const PoseSE3 a(Eigen::AngleAxisd(uniform(rng, -3, 3), ax1).toRotationMatrix(),
                    {uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)});
    const PoseSE3 b(Eigen::AngleAxisd(uniform(rng, -3, 3), ax2).toRotationMatrix(),
                    {uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)});
    const PoseSE3 ab = relative_pose(a, b);
    const PoseSE3 ba = relative_pose(b, a);
    const PoseSE3 id = PoseSE3(ab.rotation(), ab.translation(), PoseConvention::kRelative);
    const PoseSE3 composed = ba * id;
    CHECK((composed.rotation() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(composed.translation().cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("pose composition is associative and inverse composes to identity") {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 30; ++i) {
    auto rand_pose = [&] {
      const Eigen::Vector3d ax =
          Eigen::Vector3d(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1))
              .normalized();
      return PoseSE3(Eigen::AngleAxisd(uniform(rng, -3, 3), ax).toRotationMatrix(),
                     {uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)});
    };
    const PoseSE3 a = rand_pose(), b = rand_pose(), c = rand_pose();
    const PoseSE3 left = (a * b) * c;
    const PoseSE3 right = a * (b * c);
    CHECK((left.rotation() - right.rotation()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((left.translation() - right.translation()).cwiseAbs().maxCoeff() < 1e-9);
    const PoseSE3 id = a * a.inverse();
    CHECK((id.rotation() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(id.translation().cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("non-orthonormal rotation is rejected") {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 1) = 1e-3;
  CHECK_THROWS_AS(PoseSE3(r, Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST_CASE("bilinear sample: exact at integers, averages at midpoints") {
  Grid<double> g(3, 2, 0.0);
  g.at(0, 0) = 4.0;
  g.at(1, 0) = 8.0;
  g.at(2, 0) = 1.0;
  g.at(0, 1) = 2.0;
  g.at(1, 1) = 6.0;
  g.at(2, 1) = 3.0;
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) {
      const auto r = bilinear_sample(g, {double(x), double(y)});
      CHECK(r.in_bounds);
      CHECK(r.value == g.at(x, y));
    }
  }
  const auto mid = bilinear_sample(g, {0.5, 0.0});
  CHECK(mid.value == doctest::Approx(6.0));
  CHECK(!bilinear_sample(g, {-0.01, 0.0}).in_bounds);
  CHECK(!bilinear_sample(g, {2.01, 0.0}).in_bounds);
  CHECK(!bilinear_sample(g, {0.0, 1.5}).in_bounds);
}

TEST_CASE("bilinear sample on the 2x2 example matches the direct formula") {
  Grid<double> g(2, 2, 0.0);
  g.at(0, 0) = 0.0;
  g.at(1, 0) = 1.0;
  g.at(0, 1) = 2.0;
  g.at(1, 1) = 3.0;
  // Direct convex-combination oracle at (u,v) = (0.25, 0.75):
  const double ax = 0.25, ay = 0.75;
  const double expect = (1 - ax) * (1 - ay) * 0.0 + ax * (1 - ay) * 1.0 +
                        (1 - ax) * ay * 2.0 + ax * ay * 3.0;
  CHECK(expect == doctest::Approx(1.75));
  const auto r = bilinear_sample(g, {0.25, 0.75});
  CHECK(r.in_bounds);
  CHECK(r.value == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("bilinear sample stays within the hull of its neighbors") {
  std::mt19937_64 rng(5);
  const Grid<double> g = random_grid(9, 7, rng, -3.0, 3.0);
  for (int i = 0; i < 500; ++i) {
    const double u = uniform(rng, 0.0, 8.0);
    const double v = uniform(rng, 0.0, 6.0);
    const auto r = bilinear_sample(g, {u, v});
    REQUIRE(r.in_bounds);
    const int x0 = std::min(int(u), 7), y0 = std::min(int(v), 5);
    double lo = 1e30, hi = -1e30;
    for (int dy = 0; dy <= 1; ++dy) {
      for (int dx = 0; dx <= 1; ++dx) {
        lo = std::min(lo, g.at(x0 + dx, y0 + dy));
        hi = std::max(hi, g.at(x0 + dx, y0 + dy));
      }
    }
    CHECK(r.value >= lo - 1e-12);
    CHECK(r.value <= hi + 1e-12);
  }
}

TEST_CASE("warp with identity pose reproduces the source bit-exactly") {
  std::mt19937_64 rng(13);
  const Intrinsics K = test_intrinsics();
  const ImageRGB img = random_image(K.width, K.height, rng);
  const DepthField depth = random_depth(K.width, K.height, rng);
  const WarpedImage warped = warp_frame(img, depth, K, PoseSE3::identity());
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      REQUIRE(warped.valid.at(x, y));
      for (int c = 0; c < 3; ++c) {
        CHECK(warped.image.at(c, x, y) == img.at(c, x, y));
      }
    }
  }
}

TEST_CASE("warp with an all-invalid depth yields an all-invalid mask") {
  const Intrinsics K = test_intrinsics();
  const ImageRGB img(K.width, K.height);
  DepthField depth(K.width, K.height);  // valid mask all zero
  const WarpedImage warped = warp_frame(img, depth, K, PoseSE3::identity());
  for (auto v : warped.valid.values()) CHECK(v == 0);
}

TEST_CASE("fronto-parallel plane under x-translation shifts by fx*tx/z") {
  const Intrinsics K = test_intrinsics();
  const double z = 2.0, tx = 0.07;
  const DepthField depth = DepthField::constant(K.width, K.height, z);
  const PoseSE3 motion(Eigen::Matrix3d::Identity(), {tx, 0.0, 0.0});
  const WarpField warp = compute_warp_field(depth, K, motion);
  const double shift = K.fx * tx / z;
  for (int y = 0; y < K.height; ++y) {
    for (int x = 0; x < K.width; ++x) {
      // Brute-force per-pixel projection oracle.
      const Eigen::Vector3d p = backproject({double(x), double(y)}, z, K);
      const auto uv = project(motion.apply(p), K);
      REQUIRE(uv.has_value());
      CHECK(uv->u == doctest::Approx(x + shift).epsilon(1e-12));
      CHECK(uv->v == doctest::Approx(double(y)).epsilon(1e-12));
      const bool expect_valid = x + shift <= K.width - 1.0;
      CHECK(static_cast<bool>(warp.valid.at(x, y)) == expect_valid);
    }
  }
}

TEST_CASE("flow warp: zero flow is the identity, unit flow shifts one column") {
  std::mt19937_64 rng(17);
  const Grid<double> field = random_grid(6, 4, rng, -1.0, 1.0);
  FlowField zero(6, 4);
  const WarpedScalar same = flow_warp(field, nullptr, zero, InterpMode::kBilinear);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) {
      CHECK(same.valid.at(x, y));
      CHECK(same.values.at(x, y) == field.at(x, y));
    }
  }
  FlowField shift(6, 4);
  shift.du.fill(1.0);
  const WarpedScalar shifted = flow_warp(field, nullptr, shift, InterpMode::kNearest);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      CHECK(shifted.valid.at(x, y));
      CHECK(shifted.values.at(x, y) == field.at(x + 1, y));
    }
    CHECK(!shifted.valid.at(5, y));
  }
}

TEST_CASE("flow warp bilinear matches per-pixel bilinear_sample composition") {
  std::mt19937_64 rng(19);
  const Grid<double> field = random_grid(12, 9, rng, -2.0, 2.0);
  FlowField flow(12, 9);
  for (auto& v : flow.du.values()) v = uniform(rng, -2.5, 2.5);
  for (auto& v : flow.dv.values()) v = uniform(rng, -2.5, 2.5);
  const WarpedScalar warped = flow_warp(field, nullptr, flow, InterpMode::kBilinear);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 12; ++x) {
      const auto oracle =
          bilinear_sample(field, {x + flow.du.at(x, y), y + flow.dv.at(x, y)});
      CHECK(static_cast<bool>(warped.valid.at(x, y)) == oracle.in_bounds);
      if (oracle.in_bounds) CHECK(warped.values.at(x, y) == oracle.value);
    }
  }
}

TEST_CASE("nearest flow warp of a binary mask stays binary") {
  std::mt19937_64 rng(29);
  Grid<std::int32_t> mask(10, 8, 0);
  for (auto& v : mask.values()) v = rng() % 2;
  FlowField flow(10, 8);
  for (auto& v : flow.du.values()) v = uniform(rng, -3, 3);
  for (auto& v : flow.dv.values()) v = uniform(rng, -3, 3);
  const WarpedLabels warped = flow_warp_labels(mask, flow);
  for (std::size_t i = 0; i < warped.values.size(); ++i) {
    CHECK((warped.values[i] == 0 || warped.values[i] == 1));
  }
}

TEST_CASE("flow warp rejects mismatched dimensions") {
  const Grid<double> field(4, 4, 0.0);
  FlowField flow(5, 4);
  CHECK_THROWS_AS(flow_warp(field, nullptr, flow, InterpMode::kBilinear),
                  std::invalid_argument);
}
