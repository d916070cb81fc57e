#include "posefree/error.hpp"
#include "posefree/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace posefree::model {
namespace {

namespace F = torch::nn::functional;
using geometry::CameraBatch;

ModelConfig tiny_config() {
  ModelConfig c;
  c.width = 32;
  c.height = 16;
  c.per_frame = {2, 32, 2};
  c.camera = {1, 32, 2};
  c.context = {1, 32, 2};
  c.view_synthesis = {2, 32, 2};
  c.feature_channels = 8;
  c.camera_mlp_hidden = 16;
  c.head_hidden = 8;
  return c;
}

PoseFreeModel tiny_model(uint64_t seed = 0) {
  torch::manual_seed(seed);
  return PoseFreeModel(tiny_config());
}

torch::Tensor clip(int64_t n, uint64_t seed) {
  torch::manual_seed(seed);
  return torch::rand({n, 3, 16, 32});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Patchify, TokenShape) {
  auto t = patchify(torch::rand({1, 3, 16, 16}), 8);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{1, 4, 192}));
}

TEST(Patchify, RoundTripIsExact) {
  auto x = torch::rand({2, 5, 24, 16});
  EXPECT_TRUE(torch::equal(unpatchify(patchify(x, 8), 8, 24, 16), x));
}

TEST(Patchify, NonDivisibleThrows) {
  EXPECT_THROW(patchify(torch::rand({1, 3, 12, 16}), 8), ConfigError);
}

TEST(Patchify, TokensCarryDisjointPatchPixels) {
  // Encode each pixel's linear index and check every token holds exactly the
  // pixels of its own patch.
  const int H = 16, W = 24, p = 8;
  auto idx = torch::arange(H * W, torch::kFloat64).view({1, 1, H, W});
  auto tok = patchify(idx, p);
  std::set<int64_t> seen;
  for (int64_t k = 0; k < tok.size(1); ++k) {
    const int64_t pr = k / (W / p), pc = k % (W / p);
    for (int64_t j = 0; j < tok.size(2); ++j) {
      const auto lin = static_cast<int64_t>(tok[0][k][j].item<double>());
      const int64_t v = lin / W, u = lin % W;
      EXPECT_EQ(v / p, pr);
      EXPECT_EQ(u / p, pc);
      EXPECT_TRUE(seen.insert(lin).second);
    }
  }
  EXPECT_EQ(static_cast<int>(seen.size()), H * W);
}

TEST(TransformerBlock, ZeroProjectionsAreIdentity) {
  torch::manual_seed(1);
  TransformerBlock b(32, 4);
  b->zero_output_projections();
  auto x = torch::randn({2, 7, 32});
  EXPECT_TRUE(torch::equal(b->forward(x), x));
}

TEST(TransformerBlock, SingleTokenAttendsToItself) {
  torch::manual_seed(2);
  TransformerBlock b(16, 2);
  auto x = torch::randn({1, 1, 16});
  auto v = b->qkv(b->norm1(x)).slice(-1, 32, 48);
  auto h = x + b->proj(v);
  auto expect = h + b->fc2(F::gelu(b->fc1(b->norm2(h))));
  EXPECT_TRUE(torch::allclose(b->forward(x), expect, 1e-5, 1e-6));
}

TEST(TransformerBlock, PermutationEquivariant) {
  torch::manual_seed(3);
  TransformerBlock b(32, 4);
  auto x = torch::randn({1, 9, 32});
  auto perm = torch::randperm(9);
  auto y = b->forward(x);
  auto yp = b->forward(x.index_select(1, perm));
  EXPECT_TRUE(torch::allclose(yp, y.index_select(1, perm), 1e-5, 1e-5));
}

TEST(TransformerBlock, PermutationEquivariantWithMatchingBias) {
  torch::manual_seed(4);
  TransformerBlock b(32, 4);
  auto x = torch::randn({1, 9, 32});
  auto bias = torch::randn({4, 9, 9});
  auto perm = torch::randperm(9);
  auto y = b->forward(x, bias);
  auto pb = bias.index_select(1, perm).index_select(2, perm);
  auto yp = b->forward(x.index_select(1, perm), pb);
  EXPECT_TRUE(torch::allclose(yp, y.index_select(1, perm), 1e-5, 1e-5));
}

TEST(PatchTransformer, RelativeBiasFollowsPatchOffsets) {
  PatchTransformer t(TransformerConfig{2, 32, 4}, 3, 3, 4, 3, 5);
  const int64_t T = 15, C = 5;
  auto idx = t->rel_index.contiguous();
  auto ia = idx.accessor<int64_t, 1>();
  auto table = t->rel_bias.contiguous();
  auto tb = table.accessor<float, 3>();
  for (int64_t a = 0; a < T; ++a)
    for (int64_t b = 0; b < T; ++b) {
      const int64_t dr = a / C - b / C, dc = a % C - b % C;
      EXPECT_EQ(ia[a * T + b], (dr + 2) * 9 + (dc + 4));
      EXPECT_EQ(tb[0][0][ia[a * T + b]], 0.0f);
      for (int h = 1; h < 4; ++h)
        EXPECT_FLOAT_EQ(tb[1][h][ia[a * T + b]], -0.5f * std::pow(4.0f, h - 1) * (dr * dr + dc * dc));
    }
  EXPECT_THROW(t->forward_tokens(torch::zeros({1, 14, 48})), InputError);
}

TEST(PatchTransformer, FramesOfAJointSequenceShareTheBias) {
  // Two identical frames in one sequence: under any bias that depends only on
  // within-frame positions, both copies produce identical outputs.
  torch::manual_seed(5);
  PatchTransformer t(TransformerConfig{2, 32, 4}, 3, 3, 4, 2, 2);
  {
    torch::NoGradGuard ng;
    t->rel_bias.normal_();
  }
  auto frame = torch::randn({1, 4, 48});
  auto out = t->forward_tokens(torch::cat({frame, frame}, 1));
  EXPECT_TRUE(torch::allclose(out.slice(1, 0, 4), out.slice(1, 4, 8), 1e-5, 1e-5));
}

TEST(ModelConfig, JsonRoundTripIsFixedPoint) {
  auto c = ModelConfig::toy();
  c.sh_degree = 1;
  auto j = c.to_json();
  auto back = ModelConfig::from_json(j);
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.to_json().dump(), j.dump());
}

TEST(ModelConfig, RejectsBadShapes) {
  auto c = ModelConfig::toy();
  c.width = 60;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig::toy();
  c.camera.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig::paper().validate());
  EXPECT_EQ(ModelConfig::paper().per_frame, (TransformerConfig{12, 768, 12}));
  EXPECT_EQ(ModelConfig::paper().view_synthesis, (TransformerConfig{8, 512, 8}));
  EXPECT_EQ(ModelConfig::paper().patch_size, 8);
}

TEST(PerFrame, FramesAreIsolated) {
  auto m = tiny_model();
  auto imgs = clip(3, 4);
  torch::NoGradGuard ng;
  auto all = m->per_frame_features(imgs);
  auto single = m->per_frame_features(imgs.slice(0, 1, 2));
  EXPECT_TRUE(torch::allclose(all.slice(0, 1, 2), single, 1e-5, 1e-6));
  auto swapped = imgs.clone();
  swapped[0] = torch::rand({3, 16, 32});
  EXPECT_TRUE(torch::allclose(m->per_frame_features(swapped).slice(0, 1, 3), all.slice(0, 1, 3),
                              1e-5, 1e-6));
}

TEST(PerFrame, ConstantImageStillHasSpatialVariation) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto f = m->per_frame_features(torch::full({1, 3, 16, 32}, 0.3));
  // Patches differ only through the positional channels.
  EXPECT_GT((f.slice(3, 0, 8) - f.slice(3, 8, 16)).abs().max().item<double>(), 1e-4);
}

TEST(PerFrame, NotShiftEquivariant) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto img = clip(1, 5);
  auto shifted = torch::roll(img, {8}, {3});
  auto f = m->per_frame_features(img), fs = m->per_frame_features(shifted);
  EXPECT_GT((torch::roll(f, {8}, {3}) - fs).abs().max().item<double>(), 1e-4);
}

TEST(Cameras, UntrainedHeadGivesIdentityRotation) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto cams = m->predict_cameras(m->per_frame_features(clip(4, 6)));
  auto eye = torch::tensor({1.0f, 0.0f, 0.0f, 0.0f});
  for (int64_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(torch::equal(cams.quat[i], eye));
    EXPECT_TRUE(torch::equal(cams.trans[i], torch::zeros({3})));
  }
}

TEST(Cameras, IntrinsicsSharedAcrossFrames) {
  auto m = tiny_model();
  {
    torch::NoGradGuard ng;
    // Randomize the head so per-frame focal predictions actually differ.
    for (auto& p : m->camera_mlp->parameters()) p.normal_(0.0, 0.5);
  }
  torch::NoGradGuard ng;
  auto cams = m->predict_cameras(m->per_frame_features(clip(5, 7)));
  for (int64_t i = 1; i < 5; ++i) EXPECT_TRUE(torch::equal(cams.focal[i], cams.focal[0]));
  EXPECT_GT(cams.focal.min().item<double>(), 0.0);
}

TEST(Cameras, InitialFocalNearConfiguredFraction) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto cams = m->predict_cameras(m->per_frame_features(clip(2, 8)));
  // Focal rows are random, so allow a loose window around 0.8 * 32.
  EXPECT_NEAR(cams.focal[0][0].item<double>(), 0.8 * 32, 0.3 * 32);
}

TEST(Cameras, DuplicateClipsGiveIdenticalOutputs) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto imgs = clip(3, 9);
  auto a = m->predict_cameras(m->per_frame_features(imgs));
  auto b = m->predict_cameras(m->per_frame_features(imgs.clone()));
  EXPECT_TRUE(torch::equal(a.quat, b.quat));
  EXPECT_TRUE(torch::equal(a.trans, b.trans));
  EXPECT_TRUE(torch::equal(a.focal, b.focal));
}

TEST(Cameras, SingleFrameRejected) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  EXPECT_THROW(m->predict_cameras(m->per_frame_features(clip(1, 1))), InputError);
}

TEST(Context, SingleFrameContextAndPerPixelPrimitives) {
  auto m = tiny_model();
  {
    torch::NoGradGuard ng;
    for (auto& p : m->head2->parameters()) p.normal_(0.0, 3.0);
  }
  torch::NoGradGuard ng;
  auto fs = m->per_frame_features(clip(2, 10));
  auto out = m->predict_context(fs.slice(0, 0, 1));
  EXPECT_EQ(out.features.sizes(), (std::vector<int64_t>{1, 8, 16, 32}));
  auto g = camera_frame_gaussians(out.primitives, 0, torch::tensor({20.0f, 20.0f}));
  EXPECT_EQ(g.size(), 16 * 32);
  EXPECT_GE(out.primitives.depth.min().item<double>(), 0.05);
  auto qn = out.primitives.quats.norm(2, -1);
  EXPECT_TRUE(torch::allclose(qn, torch::ones_like(qn), 1e-5, 1e-5));
  EXPECT_GE(out.primitives.opacity.min().item<double>(), 0.0);
  EXPECT_LE(out.primitives.opacity.max().item<double>(), 1.0);
  EXPECT_GT(out.primitives.scales.min().item<double>(), 0.0);
}

TEST(Context, PrimitiveMeansLieOnPixelRays) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto out = m->predict_context(m->per_frame_features(clip(1, 11)));
  auto focal = torch::tensor({18.0f, 22.0f});
  auto g = camera_frame_gaussians(out.primitives, 0, focal);
  // Pixel (u=5, v=3): mean = D * ((5-16)/18, (3-8)/22, 1).
  const int64_t k = 3 * 32 + 5;
  const double d = out.primitives.depth[0][3][5].item<double>();
  EXPECT_NEAR(g.means[k][0].item<double>(), d * (5 - 16) / 18.0, 1e-5);
  EXPECT_NEAR(g.means[k][1].item<double>(), d * (3 - 8) / 22.0, 1e-5);
  EXPECT_NEAR(g.means[k][2].item<double>(), d, 1e-5);
}

TEST(Context, EmptySubsetRejected) {
  auto m = tiny_model();
  EXPECT_THROW(m->predict_context(torch::zeros({0, 8, 16, 32})), InputError);
}

CameraBatch some_cameras(int64_t n, uint64_t seed) {
  torch::manual_seed(seed);
  CameraBatch c;
  c.focal = torch::full({n, 2}, 25.0f);
  c.quat = torch::randn({n, 4});
  c.quat = c.quat / c.quat.norm(2, -1, true);
  c.trans = torch::randn({n, 3}) * 0.3;
  c.width = 32;
  c.height = 16;
  return c;
}

TEST(ViewSynthesis, ShapeAndRange) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto fc = torch::randn({2, 8, 16, 32}) * 5;
  auto out = m->synthesize_view(fc, some_cameras(2, 1), some_cameras(3, 2));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 3, 16, 32}));
  EXPECT_GE(out.min().item<double>(), 0.0);
  EXPECT_LE(out.max().item<double>(), 1.0);
}

TEST(ViewSynthesis, ContextOrderInvariant) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto fc = torch::randn({3, 8, 16, 32});
  auto cams = some_cameras(3, 3), tgt = some_cameras(2, 4);
  auto a = m->synthesize_view(fc, cams, tgt);
  auto b = m->synthesize_view(fc.index_select(0, torch::tensor({2L, 0L, 1L})), cams.select({2, 0, 1}),
                              tgt);
  EXPECT_TRUE(torch::allclose(a, b, 1e-5, 1e-5));
}

TEST(ViewSynthesis, TargetsRenderedIndependently) {
  auto m = tiny_model();
  torch::NoGradGuard ng;
  auto fc = torch::randn({2, 8, 16, 32});
  auto cams = some_cameras(2, 5), tgt = some_cameras(3, 6);
  auto all = m->synthesize_view(fc, cams, tgt);
  auto one = m->synthesize_view(fc, cams, tgt.select({1}));
  EXPECT_TRUE(torch::allclose(all.slice(0, 1, 2), one, 1e-5, 1e-6));
}

TEST(GradientFlow, LatentRenderReachesEveryTransformerAndCamera) {
  auto m = tiny_model(12);
  auto imgs = clip(3, 13);
  auto fs = m->per_frame_features(imgs);
  auto cams = m->predict_cameras(fs);
  cams.quat.retain_grad();
  cams.trans.retain_grad();
  cams.focal.retain_grad();
  auto ctx = m->predict_context(fs.slice(0, 0, 2));
  auto render = m->synthesize_view(ctx.features, cams.select({0, 1}), cams);
  (render - imgs).pow(2).mean().backward();

  for (const auto& [name, p] : named_parameters(*m)) {
    const bool transformer = name.rfind("per_frame.", 0) == 0 || name.rfind("camera.", 0) == 0 ||
                             name.rfind("context.", 0) == 0 ||
                             name.rfind("view_synthesis.", 0) == 0;
    if (!transformer) continue;
    ASSERT_TRUE(p.grad().defined()) << name;
    EXPECT_GT(p.grad().abs().max().item<double>(), 0.0) << name;
  }
  for (int64_t i = 0; i < 3; ++i) {
    EXPECT_GT(cams.quat.grad()[i].abs().max().item<double>(), 0.0) << i;
    EXPECT_GT(cams.trans.grad()[i].abs().max().item<double>(), 0.0) << i;
  }
  EXPECT_GT(cams.focal.grad().abs().max().item<double>(), 0.0);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto m = tiny_model(14);
  Checkpoint c;
  c.config = m->config().to_json();
  c.stage = 2;
  c.step = 123;
  append_model_arrays(*m, c);
  c.arrays.emplace_back("extra.counter", torch::tensor({7.0f}));
  const auto dir = std::filesystem::temp_directory_path() / "posefree_ckpt_test";
  std::filesystem::remove_all(dir);
  c.save(dir / "a");
  auto loaded = Checkpoint::load(dir / "a");
  loaded.save(dir / "b");
  EXPECT_EQ(slurp(dir / "a" / "params.bin"), slurp(dir / "b" / "params.bin"));
  EXPECT_EQ(slurp(dir / "a" / "manifest.json"), slurp(dir / "b" / "manifest.json"));
  EXPECT_EQ(loaded.stage, 2);
  EXPECT_EQ(loaded.step, 123);

  auto fresh = tiny_model(99);
  load_model_arrays(*fresh, loaded);
  auto pa = named_parameters(*m), pb = named_parameters(*fresh);
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i].second, pb[i].second));
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  auto m = tiny_model();
  Checkpoint c;
  append_model_arrays(*m, c);
  c.arrays[0].second = torch::zeros({1});
  EXPECT_THROW(load_model_arrays(*m, c), InputError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/ckpt"), InputError);
}

TEST(GaussianHead, ResetKeepsShapesAndChangesWeights) {
  auto m = tiny_model();
  auto before = m->head1->weight.clone();
  m->reset_gaussian_head();
  EXPECT_EQ(m->head1->weight.sizes(), before.sizes());
  EXPECT_FALSE(torch::equal(m->head1->weight, before));
  EXPECT_EQ(m->head2->weight.size(0), 8 + 3);
}

}  // namespace
}  // namespace posefree::model
