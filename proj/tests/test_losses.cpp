#include "posefree/error.hpp"
#include "posefree/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace posefree::losses {
namespace {

using geometry::CameraBatch;

CameraBatch single_camera(double f, int w, int h, std::array<double, 4> q = {1, 0, 0, 0},
                          std::array<double, 3> t = {0, 0, 0}) {
  CameraBatch c;
  c.focal = torch::tensor({{f, f}}, torch::kDouble);
  c.quat = torch::tensor({{q[0], q[1], q[2], q[3]}}, torch::kDouble);
  c.trans = torch::tensor({{t[0], t[1], t[2]}}, torch::kDouble);
  c.width = w;
  c.height = h;
  return c;
}

double texture(double x, double y) { return 0.5 + 0.4 * std::sin(3.1 * x) * std::cos(2.3 * y); }

// View of a textured fronto-parallel plane z = plane_z from a camera at
// (tx, 0, 0) with identity rotation.
torch::Tensor plane_image(int w, int h, double f, double tx, double plane_z) {
  auto img = torch::zeros({3, h, w}, torch::kDouble);
  auto a = img.accessor<double, 3>();
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double x = tx + plane_z * (u - w / 2.0) / f, y = plane_z * (v - h / 2.0) / f;
      const double val = texture(x, y);
      a[0][v][u] = val;
      a[1][v][u] = 1.0 - val;
      a[2][v][u] = 0.5 * val;
    }
  return img;
}

TEST(LossConfig, JsonRoundTrip) {
  LossConfig c;
  c.gamma = 3.5;
  c.proj_decay_end = 77;
  EXPECT_EQ(LossConfig::from_json(c.to_json()), c);
  EXPECT_DOUBLE_EQ(LossConfig{}.w_low, 0.1);
  auto bad = c.to_json();
  bad["w_low"] = 0.0;
  EXPECT_THROW(LossConfig::from_json(bad), ConfigError);
}

TEST(Perceptual, IdentityAndSymmetry) {
  torch::manual_seed(0);
  auto a = torch::rand({2, 3, 16, 16}, torch::kDouble), b = torch::rand({2, 3, 16, 16}, torch::kDouble);
  EXPECT_EQ(perceptual_distance(a, a).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(perceptual_distance(a, b).item<double>(), perceptual_distance(b, a).item<double>());
  EXPECT_THROW(perceptual_distance(a, torch::rand({2, 3, 8, 16})), InputError);
}

TEST(Perceptual, BlurScoresAboveIdentity) {
  torch::manual_seed(1);
  auto sharp = torch::rand({1, 3, 32, 32}, torch::kDouble);
  auto blurred = torch::nn::functional::avg_pool2d(
      sharp, torch::nn::functional::AvgPool2dFuncOptions(3).stride(1).padding(1));
  EXPECT_GT(perceptual_distance(sharp, blurred).item<double>(),
            perceptual_distance(sharp, sharp.clone()).item<double>());
}

TEST(RenderLoss, HandComputedWeightedMean) {
  // Frame 0 is the target (MSE 0.04), frame 1 a context frame (MSE 0.02).
  auto gt = torch::full({2, 3, 4, 4}, 0.3, torch::kDouble);
  auto pred = gt.clone();
  pred[0] += 0.2;
  pred[1] += std::sqrt(0.02);
  LossConfig cfg;
  cfg.lambda_perc = 0.0;
  const double got = latent_render_loss(pred, gt, {false, true}, cfg).item<double>();
  EXPECT_NEAR(got, (0.04 + 0.1 * 0.02) / 1.1, 1e-12);
  EXPECT_NEAR(got, 0.038182, 1e-6);
  EXPECT_NEAR(gs_render_loss(pred, gt, {false, true}, cfg).item<double>(), got, 1e-15);
}

TEST(RenderLoss, PerfectReconstructionIsZero) {
  auto gt = torch::rand({3, 3, 8, 8}, torch::kDouble);
  EXPECT_EQ(render_loss(gt, gt.clone(), {true, false, true}, LossConfig{}).item<double>(), 0.0);
}

TEST(RenderLoss, AllContextViolatesStrictSubset) {
  auto gt = torch::rand({2, 3, 8, 8});
  EXPECT_THROW(render_loss(gt, gt, {true, true}, LossConfig{}), ContractViolation);
}

TEST(RenderLoss, InvariantToConsistentReindexing) {
  torch::manual_seed(2);
  auto pred = torch::rand({4, 3, 8, 8}, torch::kDouble), gt = torch::rand({4, 3, 8, 8}, torch::kDouble);
  std::vector<bool> mask{true, false, false, true};
  auto perm = torch::tensor({2L, 0L, 3L, 1L});
  std::vector<bool> pmask{mask[2], mask[0], mask[3], mask[1]};
  const double a = render_loss(pred, gt, mask, LossConfig{}).item<double>();
  const double b =
      render_loss(pred.index_select(0, perm), gt.index_select(0, perm), pmask, LossConfig{})
          .item<double>();
  EXPECT_NEAR(a, b, 1e-14);
}

TEST(Smoothness, ConstantDepthIsZero) {
  auto img = torch::rand({3, 6, 7}, torch::kDouble);
  EXPECT_EQ(smoothness_loss(torch::full({6, 7}, 2.0, torch::kDouble), img, 10.0).item<double>(), 0.0);
}

TEST(Smoothness, UnitRampOnConstantImage) {
  auto ramp = torch::arange(7, torch::kDouble).view({1, 7}).expand({5, 7}).contiguous();
  auto img = torch::full({3, 5, 7}, 0.4, torch::kDouble);
  EXPECT_EQ(smoothness_loss(ramp, img, 3.0).item<double>(), 1.0);
  EXPECT_EQ(smoothness_loss(ramp.t().contiguous(), img.transpose(1, 2).contiguous(), 3.0).item<double>(),
            1.0);
}

TEST(Smoothness, AlignedStepEdgeClosedForm) {
  auto depth = torch::tensor({{0.0, 1.0}, {0.0, 1.0}}, torch::kDouble);
  auto img = torch::tensor({{0.0, 1.0}, {0.0, 1.0}}, torch::kDouble).unsqueeze(0).expand({3, 2, 2});
  const double gamma = 10.0;
  // x: both rows have |dD| = 1 and |dI|_1 = 3; y: no change.
  EXPECT_DOUBLE_EQ(smoothness_loss(depth, img, gamma).item<double>(), std::exp(-3.0 * gamma));
  EXPECT_LT(smoothness_loss(depth, img, gamma).item<double>(), 1e-12);
}

TEST(Schedule, EndpointsAndMidpoint) {
  LossConfig cfg;
  cfg.lambda_proj = 0.1;
  cfg.proj_decay_start = 100;
  cfg.proj_decay_end = 300;
  EXPECT_EQ(lambda_proj_at(cfg, 0), 0.1);
  EXPECT_EQ(lambda_proj_at(cfg, 100), 0.1);
  EXPECT_EQ(lambda_proj_at(cfg, 200), 0.05);
  EXPECT_EQ(lambda_proj_at(cfg, 300), 0.0);
  EXPECT_EQ(lambda_proj_at(cfg, 10000), 0.0);
}

TEST(Stage2Total, WeightedSumAndZeroCase) {
  LossConfig cfg;
  cfg.proj_decay_start = 0;
  cfg.proj_decay_end = 10;
  auto t = [](double v) { return torch::tensor(v, torch::kDouble); };
  auto r = stage2_total({t(0.3), t(0.2), t(1.5), t(4.0)}, 5, cfg);
  EXPECT_NEAR(r.total.item<double>(), 0.3 + 0.2 + 0.05 * 1.5 + 0.01 * 4.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.report.total, r.total.item<double>());
  EXPECT_DOUBLE_EQ(r.report.lambda_proj, 0.05);
  auto end = stage2_total({t(0.3), t(0.2), t(1.5), t(4.0)}, 10, cfg);
  EXPECT_EQ(end.total.item<double>(), 0.3 + 0.2 + 0.01 * 4.0);
  EXPECT_EQ(stage2_total({t(0), t(0), t(0), t(0)}, 3, cfg).total.item<double>(), 0.0);
}

TEST(Stage1Total, OtherComponentsZero) {
  auto r = stage1_total(torch::tensor(0.25), 4).report;
  EXPECT_EQ(r.gs_render, 0.0);
  EXPECT_EQ(r.proj, 0.0);
  EXPECT_EQ(r.smooth, 0.0);
  EXPECT_EQ(r.total, 0.25);
  EXPECT_EQ(r.to_json().at("stage"), 1);
}

TEST(Projection, SelfProjectionIsZero) {
  const int W = 12, H = 10;
  auto img = torch::rand({3, H, W}, torch::kDouble);
  auto cam = single_camera(9.0, W, H, {0.9, 0.1, 0.2, 0.1}, {0.3, -0.1, 0.2});
  auto depth = torch::rand({H, W}, torch::kDouble) + 0.5;
  auto r = projection_loss(depth, img, img, cam, cam);
  EXPECT_FALSE(r.all_invalid);
  EXPECT_LT(r.value.item<double>(), 1e-20);
}

TEST(Projection, GroundTruthDepthBeatsPerturbedDepth) {
  const int W = 32, H = 24;
  const double f = 28.0, z = 2.0, baseline = 0.15;
  auto img_i = plane_image(W, H, f, 0.0, z), img_j = plane_image(W, H, f, baseline, z);
  auto cam_i = single_camera(f, W, H), cam_j = single_camera(f, W, H, {1, 0, 0, 0}, {baseline, 0, 0});
  const double gt = projection_loss(torch::full({H, W}, z, torch::kDouble), img_i, img_j, cam_i, cam_j)
                        .value.item<double>();
  for (double dz : {-0.3, 0.3}) {
    const double bad =
        projection_loss(torch::full({H, W}, z + dz, torch::kDouble), img_i, img_j, cam_i, cam_j)
            .value.item<double>();
    EXPECT_LT(gt, bad) << dz;
  }
  EXPECT_LT(gt, 1e-3);
}

TEST(Projection, InvalidPixelsDoNotChangeValue) {
  const int W = 12, H = 10;
  torch::manual_seed(5);
  auto img_i = torch::rand({3, H, W}, torch::kDouble), img_j = torch::rand({3, H, W}, torch::kDouble);
  auto cam_i = single_camera(10.0, W, H), cam_j = single_camera(10.0, W, H, {1, 0, 0, 0}, {0.1, 0.05, 0});
  auto depth = torch::full({H, W}, 1.5, torch::kDouble);
  auto mask = torch::ones({H, W}, torch::kBool);
  mask.slice(0, 0, 3).fill_(false);
  const auto base = projection_loss(depth, img_i, img_j, cam_i, cam_j, mask);
  auto depth2 = depth.clone();
  depth2.slice(0, 0, 3).fill_(0.2);
  auto img2 = img_i.clone();
  img2.slice(1, 0, 3).fill_(0.9);
  const auto other = projection_loss(depth2, img2, img_j, cam_i, cam_j, mask);
  EXPECT_EQ(base.value.item<double>(), other.value.item<double>());
  EXPECT_EQ(base.valid_pixels, other.valid_pixels);
}

TEST(Projection, AllInvalidGivesZeroAndFlag) {
  auto img = torch::rand({3, 6, 6}, torch::kDouble);
  auto cam = single_camera(5.0, 6, 6);
  auto r = projection_loss(torch::ones({6, 6}, torch::kDouble), img, img, cam, cam,
                           torch::zeros({6, 6}, torch::kBool));
  EXPECT_TRUE(r.all_invalid);
  EXPECT_EQ(r.value.item<double>(), 0.0);
}

TEST(Projection, DepthGradientMatchesFiniteDifferences) {
  const int W = 8, H = 8;
  const double f = 7.0;
  auto img_i = plane_image(W, H, f, 0.0, 2.0), img_j = plane_image(W, H, f, 0.23, 2.0);
  auto cam_i = single_camera(f, W, H);
  auto cam_j = single_camera(f, W, H, {0.999, 0.01, 0.03, -0.02}, {0.23, 0.04, 0.05});
  torch::manual_seed(6);
  auto depth = (1.9 + 0.3 * torch::rand({H, W}, torch::kDouble)).requires_grad_(true);
  auto r = projection_loss(depth, img_i, img_j, cam_i, cam_j);
  r.value.backward();
  auto grad = depth.grad();
  const double h = 1e-6;
  double worst = 0.0;
  int checked = 0;
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      auto dp = depth.detach().clone(), dm = depth.detach().clone();
      dp[v][u] += h;
      dm[v][u] -= h;
      const auto lp = projection_loss(dp, img_i, img_j, cam_i, cam_j);
      const auto lm = projection_loss(dm, img_i, img_j, cam_i, cam_j);
      if (lp.valid_pixels != r.valid_pixels || lm.valid_pixels != r.valid_pixels) continue;
      const double fd = (lp.value.item<double>() - lm.value.item<double>()) / (2 * h);
      const double an = grad[v][u].item<double>();
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
      ++checked;
    }
  EXPECT_GT(checked, 32);
  EXPECT_LT(worst, 1e-3);
}

}  // namespace
}  // namespace posefree::losses
