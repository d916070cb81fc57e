#include "posefree/error.hpp"
#include "posefree/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

namespace posefree::geometry {
namespace {

constexpr double kPi = std::numbers::pi;

Mat3 rot_z_oracle(double deg) {
  const double a = deg * kPi / 180.0;
  Mat3 R;
  R << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return R;
}

Mat3 rot_y_oracle(double deg) {
  const double a = deg * kPi / 180.0;
  Mat3 R;
  R << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return R;
}

Vec4 random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec4(n(rng), n(rng), n(rng), n(rng));
}

Camera random_camera(std::mt19937_64& rng, int w = 64, int h = 48) {
  std::uniform_real_distribution<double> f(20.0, 200.0), t(-3.0, 3.0);
  Camera c;
  c.intrinsics = Intrinsics{f(rng), f(rng), w, h};
  c.extrinsics.q = random_quat(rng).normalized();
  c.extrinsics.t = Vec3(t(rng), t(rng), t(rng));
  return c;
}

TEST(QuatToRotation, IdentityAndNormalization) {
  EXPECT_TRUE(quat_to_rotation(Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity(), 0));
  EXPECT_TRUE(quat_to_rotation(Vec4(2, 0, 0, 0)).isApprox(Mat3::Identity(), 1e-15));
}

TEST(QuatToRotation, NinetyDegreesAboutZ) {
  const double h = std::sqrt(0.5);
  const Mat3 R = quat_to_rotation(Vec4(h, 0, 0, h));
  EXPECT_LT((R - rot_z_oracle(90)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(QuatToRotation, DegenerateThrows) {
  EXPECT_THROW(quat_to_rotation(Vec4(0, 0, 0, 0)), DegenerateError);
  EXPECT_THROW(quat_to_rotation(Vec4(1e-13, 0, 0, 0)), DegenerateError);
}

TEST(QuatToRotation, OrthonormalForRandomQuaternions) {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Mat3 R = quat_to_rotation(random_quat(rng));
    worst = std::max(worst, (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff());
    ASSERT_NEAR(R.determinant(), 1.0, 1e-9);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(QuatToRotation, TensorMatchesScalar) {
  std::mt19937_64 rng(2);
  auto q = torch::randn({32, 4}, torch::kDouble);
  auto R = quat_to_rotation(q);
  for (int i = 0; i < 32; ++i) {
    Vec4 qi(q[i][0].item<double>(), q[i][1].item<double>(), q[i][2].item<double>(),
            q[i][3].item<double>());
    const Mat3 Rs = quat_to_rotation(qi);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(R[i][r][c].item<double>(), Rs(r, c), 1e-12);
  }
}

TEST(BackProject, CenterPixelOfIdentityCamera) {
  // Principal point at the image center: pixel (w/2, h/2) lies on the axis.
  const Intrinsics K{1.0, 1.0, 2, 2};
  const Vec3 p = back_project(1.0, 1.0, 5.0, K, Extrinsics{});
  EXPECT_TRUE(p.isApprox(Vec3(0, 0, 5)));
}

TEST(BackProject, ZeroDepthIsCameraCenter) {
  std::mt19937_64 rng(3);
  const Camera c = random_camera(rng);
  const Vec3 p = back_project(7.0, 3.0, 0.0, c.intrinsics, c.extrinsics);
  EXPECT_LT((p - c.extrinsics.t).norm(), 1e-15);
}

TEST(BackProject, RotatedTranslatedCamera) {
  const Intrinsics K{2.0, 2.0, 256, 256};
  const Extrinsics P = Extrinsics::from_rotation(rot_z_oracle(90), Vec3(1, 2, 3));
  const Vec3 p = back_project(130.0, 128.0, 4.0, K, P);
  EXPECT_LT((p - Vec3(1, 6, 7)).norm(), 1e-12);
}

TEST(Project, RoundTripAndCameraCenter) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> px(0.0, 63.0), d(0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const Camera c = random_camera(rng);
    const double u = px(rng), v = px(rng) * 0.75, depth = d(rng);
    const auto proj = project(back_project(u, v, depth, c.intrinsics, c.extrinsics),
                              c.intrinsics, c.extrinsics);
    ASSERT_TRUE(proj.valid);
    EXPECT_NEAR(proj.u, u, 1e-7);
    EXPECT_NEAR(proj.v, v, 1e-7);
    EXPECT_NEAR(proj.z, depth, 1e-9);
  }
  const Camera c = random_camera(rng);
  const auto at_center = project(c.extrinsics.t, c.intrinsics, c.extrinsics);
  EXPECT_FALSE(at_center.valid);
  EXPECT_NEAR(at_center.z, 0.0, 1e-15);
}

TEST(Project, MatchesHomogeneousPipeline) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> x(-5.0, 5.0);
  for (int i = 0; i < 500; ++i) {
    const Camera c = random_camera(rng);
    const Vec3 p(x(rng), x(rng), x(rng));
    Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
    c2w.topLeftCorner<3, 3>() = c.extrinsics.rotation();
    c2w.topRightCorner<3, 1>() = c.extrinsics.t;
    Eigen::Matrix<double, 3, 4> proj = Eigen::Matrix<double, 3, 4>::Zero();
    proj.topLeftCorner<3, 3>() = c.intrinsics.matrix();
    const Eigen::Vector3d h = proj * c2w.inverse() * p.homogeneous();
    const auto got = project(p, c.intrinsics, c.extrinsics);
    EXPECT_NEAR(got.z, h.z(), 1e-9);
    if (h.z() > kBehindEpsilon) {
      ASSERT_TRUE(got.valid);
      EXPECT_NEAR(got.u, h.x() / h.z(), 1e-6 * std::max(1.0, std::abs(got.u)));
      EXPECT_NEAR(got.v, h.y() / h.z(), 1e-6 * std::max(1.0, std::abs(got.v)));
    } else {
      EXPECT_FALSE(got.valid);
    }
  }
}

TEST(Project, TensorMatchesScalar) {
  std::mt19937_64 rng(6);
  std::vector<Camera> cams{random_camera(rng), random_camera(rng)};
  auto batch = CameraBatch::from_cameras(cams, torch::kDouble);
  auto depth = torch::rand({2, 48, 64}, torch::kDouble) * 10 + 0.5;
  auto pts = back_project(depth, batch);
  auto proj = project(pts, batch);
  EXPECT_TRUE(proj.valid.all().item<bool>());
  auto u = torch::arange(64, torch::kDouble).view({1, 1, 64}).expand({2, 48, 64});
  auto v = torch::arange(48, torch::kDouble).view({1, 48, 1}).expand({2, 48, 64});
  EXPECT_LT((proj.uv.select(-1, 0) - u).abs().max().item<double>(), 1e-8);
  EXPECT_LT((proj.uv.select(-1, 1) - v).abs().max().item<double>(), 1e-8);
  EXPECT_LT((proj.z - depth).abs().max().item<double>(), 1e-9);
  const Vec3 ref = back_project(10.0, 20.0, depth[1][20][10].item<double>(),
                                cams[1].intrinsics, cams[1].extrinsics);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(pts[1][20][10][k].item<double>(), ref[k], 1e-10);
}

TEST(Plucker, OriginCameraCenterPixel) {
  const Camera c{Intrinsics{50, 50, 64, 64}, Extrinsics{}};
  auto map = plucker_map(CameraBatch::from_cameras({c}, torch::kDouble));
  ASSERT_EQ(map.sizes(), (std::vector<int64_t>{1, 6, 64, 64}));
  auto px = map.index({0, torch::indexing::Slice(), 32, 32});
  EXPECT_NEAR(px[2].item<double>(), 1.0, 1e-15);
  EXPECT_NEAR(px.abs().sum().item<double>(), 1.0, 1e-15);
}

TEST(Plucker, InvariantUnderMotionAlongRay) {
  std::mt19937_64 rng(7);
  Camera c = random_camera(rng);
  auto m0 = plucker_map(CameraBatch::from_cameras({c}, torch::kDouble));
  const Vec3 d = (c.extrinsics.rotation() * c.intrinsics.inverse() * Vec3(10, 5, 1)).normalized();
  c.extrinsics.t += 2.5 * d;
  auto m1 = plucker_map(CameraBatch::from_cameras({c}, torch::kDouble));
  auto a = m0.index({0, torch::indexing::Slice(), 5, 10});
  auto b = m1.index({0, torch::indexing::Slice(), 5, 10});
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-12);
}

TEST(Plucker, UnitDirectionAndOrthogonalMoment) {
  std::mt19937_64 rng(8);
  std::vector<Camera> cams;
  for (int i = 0; i < 16; ++i) cams.push_back(random_camera(rng));
  auto map = plucker_map(CameraBatch::from_cameras(cams, torch::kDouble));
  auto d = map.slice(1, 0, 3);
  auto m = map.slice(1, 3, 6);
  EXPECT_LT(((d * d).sum(1) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_LT((d * m).sum(1).abs().max().item<double>(), 1e-6);
}

double bilinear_oracle(const torch::Tensor& img, int c, double u, double v, bool& ok) {
  const auto h = img.size(1), w = img.size(2);
  ok = u >= 0 && v >= 0 && u <= w - 1 && v <= h - 1;
  if (!ok) return 0.0;
  const int u0 = std::min<int>(static_cast<int>(std::floor(u)), static_cast<int>(w) - 1);
  const int v0 = std::min<int>(static_cast<int>(std::floor(v)), static_cast<int>(h) - 1);
  const int u1 = std::min<int>(u0 + 1, static_cast<int>(w) - 1);
  const int v1 = std::min<int>(v0 + 1, static_cast<int>(h) - 1);
  const double a = u - u0, b = v - v0;
  auto at = [&](int vv, int uu) { return img[c][vv][uu].item<double>(); };
  return (1 - a) * (1 - b) * at(v0, u0) + a * (1 - b) * at(v0, u1) +
         (1 - a) * b * at(v1, u0) + a * b * at(v1, u1);
}

TEST(BilinearSample, LatticeAndMidpoint) {
  auto img = torch::rand({1, 2, 5, 6}, torch::kDouble);
  auto coords = torch::empty({1, 5, 6, 2}, torch::kDouble);
  for (int v = 0; v < 5; ++v)
    for (int u = 0; u < 6; ++u) {
      coords[0][v][u][0] = u;
      coords[0][v][u][1] = v;
    }
  auto s = bilinear_sample(img, coords);
  EXPECT_LT((s.values - img).abs().max().item<double>(), 1e-12);
  EXPECT_TRUE(s.valid.all().item<bool>());

  auto ramp = torch::tensor({0.0, 1.0}, torch::kDouble).view({1, 1, 1, 2});
  auto mid = torch::tensor({0.5, 0.0}, torch::kDouble).view({1, 1, 1, 2});
  EXPECT_NEAR(bilinear_sample(ramp, mid).values.item<double>(), 0.5, 1e-12);
}

TEST(BilinearSample, MatchesLoopOracleAndMasksOutOfBounds) {
  torch::manual_seed(9);
  auto img = torch::rand({1, 3, 7, 9}, torch::kDouble);
  auto coords = torch::rand({1, 6, 6, 2}, torch::kDouble) * 12 - 1.5;
  auto s = bilinear_sample(img, coords);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      const double u = coords[0][i][j][0].item<double>();
      const double v = coords[0][i][j][1].item<double>();
      for (int c = 0; c < 3; ++c) {
        bool ok = false;
        const double ref = bilinear_oracle(img[0], c, u, v, ok);
        EXPECT_EQ(s.valid[0][i][j].item<bool>(), ok);
        EXPECT_NEAR(s.values[0][c][i][j].item<double>(), ref, 1e-6);
      }
    }
}

TEST(BilinearSample, CoordinateGradientMatchesFiniteDifferences) {
  torch::manual_seed(10);
  auto img = torch::rand({1, 2, 8, 8}, torch::kDouble);
  // Keep samples strictly inside cells so the lattice kinks are avoided.
  auto base = torch::randint(1, 6, {1, 4, 4, 2}, torch::kDouble);
  auto coords = (base + 0.2 + torch::rand({1, 4, 4, 2}, torch::kDouble) * 0.6).requires_grad_(true);
  auto weights = torch::rand({1, 2, 4, 4}, torch::kDouble);
  auto loss = (bilinear_sample(img, coords).values * weights).sum();
  loss.backward();
  auto grad = coords.grad();
  const double h = 1e-6;
  auto c = coords.detach();
  for (int64_t k = 0; k < c.numel(); ++k) {
    auto cp = c.clone(), cm = c.clone();
    cp.view(-1)[k] += h;
    cm.view(-1)[k] -= h;
    const double fd = ((bilinear_sample(img, cp).values * weights).sum().item<double>() -
                       (bilinear_sample(img, cm).values * weights).sum().item<double>()) /
                      (2 * h);
    const double g = grad.view(-1)[k].item<double>();
    EXPECT_LE(std::abs(g - fd), 1e-4 * std::max(1e-3, std::abs(fd)));
  }
}

TEST(AverageCameras, IdempotentSymmetricAndMidpoint) {
  std::mt19937_64 rng(11);
  const Camera a = random_camera(rng), b = random_camera(rng);
  EXPECT_EQ(average_cameras(a, a), a);
  const Camera ab = average_cameras(a, b), ba = average_cameras(b, a);
  EXPECT_EQ(ab.intrinsics, ba.intrinsics);
  EXPECT_LT((ab.extrinsics.q - ba.extrinsics.q).norm(), 1e-15);
  EXPECT_LT((ab.extrinsics.t - ba.extrinsics.t).norm(), 1e-15);

  Camera c0{Intrinsics{10, 20, 8, 8}, Extrinsics{}};
  Camera c1 = c0;
  c1.extrinsics.t = Vec3(2, 0, 0);
  c1.intrinsics.fx = 30;
  const Camera m = average_cameras(c0, c1);
  EXPECT_EQ(m.extrinsics.t, Vec3(1, 0, 0));
  EXPECT_EQ(m.intrinsics.fx, 20.0);
}

TEST(AverageCameras, MatchesSlerpMidpoint) {
  Camera a{Intrinsics{10, 10, 8, 8}, Extrinsics{}};
  Camera b = a;
  b.extrinsics = Extrinsics::from_rotation(rot_y_oracle(90), Vec3::Zero());
  const Camera m = average_cameras(a, b);
  EXPECT_LT((m.extrinsics.rotation() - rot_y_oracle(45)).cwiseAbs().maxCoeff(), 1e-12);

  // Sign-flipped storage of the same rotation must not change the result.
  b.extrinsics.q = -b.extrinsics.q;
  const Camera m2 = average_cameras(a, b);
  EXPECT_LT((m2.extrinsics.rotation() - rot_y_oracle(45)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AverageCameras, RejectsMismatchedResolution) {
  Camera a{Intrinsics{10, 10, 8, 8}, Extrinsics{}};
  Camera b{Intrinsics{10, 10, 16, 8}, Extrinsics{}};
  EXPECT_THROW(average_cameras(a, b), InputError);
}

}  // namespace
}  // namespace posefree::geometry
