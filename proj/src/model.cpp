#include "posefree/model.hpp"

#include "posefree/error.hpp"

#include <cmath>
#include <bit>
#include <cstring>
#include <fstream>

namespace posefree::model {

namespace F = torch::nn::functional;
using geometry::CameraBatch;

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.width = 64;
  c.height = 64;
  c.per_frame = {4, 128, 4};
  c.camera = {3, 128, 4};
  c.context = {3, 128, 4};
  c.view_synthesis = {3, 128, 4};
  c.feature_channels = 16;
  c.head_hidden = 32;
  return c;
}

void ModelConfig::validate() const {
  if (patch_size <= 0) throw ConfigError("patch_size must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("resolution must be positive");
  if (width % patch_size != 0 || height % patch_size != 0)
    throw ConfigError("resolution " + std::to_string(width) + "x" + std::to_string(height) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  for (const auto* t : {&per_frame, &camera, &context, &view_synthesis}) {
    if (t->blocks < 0 || t->hidden <= 0 || t->heads <= 0)
      throw ConfigError("transformer sizes must be positive");
    if (t->hidden % t->heads != 0)
      throw ConfigError("hidden " + std::to_string(t->hidden) + " not divisible by heads " +
                        std::to_string(t->heads));
  }
  if (feature_channels <= 0 || camera_mlp_hidden <= 0 || head_hidden <= 0)
    throw ConfigError("head sizes must be positive");
  if (sh_degree < 0 || sh_degree > 1) throw ConfigError("sh_degree must be 0 or 1");
  if (!(depth_min >= 0.0)) throw ConfigError("depth_min must be non-negative");
  if (!(focal_init > 0.0)) throw ConfigError("focal_init must be positive");
}

namespace {

json tf_json(const TransformerConfig& t) {
  return {{"blocks", t.blocks}, {"hidden", t.hidden}, {"heads", t.heads}};
}

TransformerConfig tf_from(const json& j) {
  return {j.at("blocks").get<int>(), j.at("hidden").get<int>(), j.at("heads").get<int>()};
}

}  // namespace

json ModelConfig::to_json() const {
  return {{"patch_size", patch_size},
          {"width", width},
          {"height", height},
          {"per_frame", tf_json(per_frame)},
          {"camera", tf_json(camera)},
          {"context", tf_json(context)},
          {"view_synthesis", tf_json(view_synthesis)},
          {"feature_channels", feature_channels},
          {"camera_mlp_hidden", camera_mlp_hidden},
          {"head_hidden", head_hidden},
          {"sh_degree", sh_degree},
          {"depth_min", depth_min},
          {"focal_init", focal_init}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    c.patch_size = j.value("patch_size", c.patch_size);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    if (j.contains("per_frame")) c.per_frame = tf_from(j.at("per_frame"));
    if (j.contains("camera")) c.camera = tf_from(j.at("camera"));
    if (j.contains("context")) c.context = tf_from(j.at("context"));
    if (j.contains("view_synthesis")) c.view_synthesis = tf_from(j.at("view_synthesis"));
    c.feature_channels = j.value("feature_channels", c.feature_channels);
    c.camera_mlp_hidden = j.value("camera_mlp_hidden", c.camera_mlp_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.sh_degree = j.value("sh_degree", c.sh_degree);
    c.depth_min = j.value("depth_min", c.depth_min);
    c.focal_init = j.value("focal_init", c.focal_init);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

torch::Tensor patchify(const torch::Tensor& map, int p) {
  const auto B = map.size(0), C = map.size(1), H = map.size(2), W = map.size(3);
  if (H % p != 0 || W % p != 0)
    throw ConfigError("patchify: " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible by " + std::to_string(p));
  return map.reshape({B, C, H / p, p, W / p, p})
      .permute({0, 2, 4, 1, 3, 5})
      .reshape({B, (H / p) * (W / p), C * p * p});
}

torch::Tensor unpatchify(const torch::Tensor& tokens, int p, int height, int width) {
  if (height % p != 0 || width % p != 0)
    throw ConfigError("unpatchify: resolution not divisible by patch size");
  const auto B = tokens.size(0), L = tokens.size(2);
  const int64_t C = L / (p * p);
  const int64_t gh = height / p, gw = width / p;
  if (tokens.size(1) != gh * gw || C * p * p != L)
    throw ContractViolation("unpatchify: token grid does not match resolution");
  return tokens.reshape({B, gh, gw, C, p, p}).permute({0, 3, 1, 4, 2, 5}).reshape(
      {B, C, height, width});
}

TransformerBlockImpl::TransformerBlockImpl(int hidden, int heads_) : heads(heads_) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({hidden})));
  qkv = register_module("qkv", torch::nn::Linear(hidden, 3 * hidden));
  proj = register_module("proj", torch::nn::Linear(hidden, hidden));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({hidden})));
  fc1 = register_module("fc1", torch::nn::Linear(hidden, 4 * hidden));
  fc2 = register_module("fc2", torch::nn::Linear(4 * hidden, hidden));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& attn_bias) {
  const auto B = x.size(0), T = x.size(1), D = x.size(2);
  auto qkv_out = qkv(norm1(x)).reshape({B, T, 3, heads, D / heads}).permute({2, 0, 3, 1, 4});
  auto mask = attn_bias.defined() ? std::optional<torch::Tensor>(attn_bias.to(x.dtype()))
                                  : std::nullopt;
  auto attn = at::scaled_dot_product_attention(qkv_out[0], qkv_out[1], qkv_out[2], mask);
  auto h = x + proj(attn.transpose(1, 2).reshape({B, T, D}));
  return h + fc2(F::gelu(fc1(norm2(h))));
}

void TransformerBlockImpl::zero_output_projections() {
  torch::NoGradGuard ng;
  for (auto* l : {&proj, &fc2}) {
    (*l)->weight.zero_();
    (*l)->bias.zero_();
  }
}

PatchTransformerImpl::PatchTransformerImpl(const TransformerConfig& cfg, int in_channels,
                                           int out_channels, int patch_, int grid_rows,
                                           int grid_cols)
    : patch(patch_), tokens_per_frame(int64_t{grid_rows} * grid_cols) {
  embed = register_module("embed", torch::nn::Linear(in_channels * patch * patch, cfg.hidden));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.blocks; ++i) blocks->push_back(TransformerBlock(cfg.hidden, cfg.heads));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.hidden})));
  out = register_module("out", torch::nn::Linear(cfg.hidden, out_channels * patch * patch));

  const int64_t R = grid_rows, C = grid_cols, T = tokens_per_frame, span = 2 * C - 1;
  std::vector<int64_t> index(T * T);
  for (int64_t a = 0; a < T; ++a)
    for (int64_t b = 0; b < T; ++b)
      index[a * T + b] = (a / C - b / C + R - 1) * span + (a % C - b % C + C - 1);
  rel_index = register_buffer("rel_index", torch::tensor(index, torch::kLong));

  auto dr = torch::arange(-(R - 1), R, torch::kFloat32).view({-1, 1});
  auto dc = torch::arange(-(C - 1), C, torch::kFloat32).view({1, -1});
  auto dist2 = (dr * dr + dc * dc).reshape({-1});
  auto slopes = torch::zeros({cfg.heads});
  for (int h = 1; h < cfg.heads; ++h) slopes[h] = std::pow(4.0, h - 1) * 0.5;
  auto table = -slopes.view({-1, 1}) * dist2.view({1, -1});
  rel_bias = register_parameter("rel_bias",
                                table.unsqueeze(0).repeat({cfg.blocks, 1, 1}).contiguous());
}

torch::Tensor PatchTransformerImpl::forward_tokens(const torch::Tensor& tokens) {
  const auto T = tokens_per_frame, L = tokens.size(1);
  if (L % T != 0)
    throw InputError("forward_tokens: sequence length is not a multiple of the frame token count");
  auto x = embed(tokens);
  int64_t i = 0;
  for (const auto& b : *blocks) {
    auto table = rel_bias[i++];
    auto bias = table.index_select(1, rel_index).view({table.size(0), T, T}).repeat({1, L / T, L / T});
    x = b->as<TransformerBlockImpl>()->forward(x, bias);
  }
  return out(norm(x));
}

splat::Gaussians camera_frame_gaussians(const PixelPrimitives& prims, int64_t m,
                                        const torch::Tensor& focal) {
  const auto H = prims.depth.size(1), W = prims.depth.size(2);
  auto rays = geometry::camera_rays(focal.unsqueeze(0), static_cast<int>(W),
                                    static_cast<int>(H))[0];  // [H,W,3]
  auto depth = prims.depth[m];
  splat::Gaussians g;
  g.means = (rays * depth.unsqueeze(-1)).reshape({-1, 3});
  g.opacity = prims.opacity[m].reshape({-1});
  g.quats = prims.quats[m].reshape({-1, 4});
  // Scales are in units of the pixel footprint at the predicted depth.
  g.scales = (prims.scales[m] * depth.unsqueeze(-1) / focal.view({1, 1, 2})).reshape({-1, 2});
  g.sh = prims.sh[m].reshape({H * W, 3, -1});
  g.sh_degree = prims.sh_degree;
  return g;
}

PoseFreeModelImpl::PoseFreeModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int C = cfg_.feature_channels, p = cfg_.patch_size;
  const int R = cfg_.height / p, G = cfg_.width / p;
  per_frame = register_module("per_frame", PatchTransformer(cfg_.per_frame, 5, C, p, R, G));
  camera = register_module("camera", PatchTransformer(cfg_.camera, C + 1, C, p, R, G));
  context = register_module("context", PatchTransformer(cfg_.context, C + 1, C, p, R, G));
  view_synthesis =
      register_module("view_synthesis", PatchTransformer(cfg_.view_synthesis, C + 6, 3, p, R, G));
  camera_mlp = register_module(
      "camera_mlp",
      torch::nn::Sequential(torch::nn::Linear(C, cfg_.camera_mlp_hidden), torch::nn::GELU(),
                            torch::nn::Linear(cfg_.camera_mlp_hidden, 9)));
  context_skip = register_module(
      "context_skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(C, C, 1)));
  head1 = register_module(
      "head1", torch::nn::Conv2d(torch::nn::Conv2dOptions(C, cfg_.head_hidden, 3).padding(1)));
  head2 = register_module(
      "head2", torch::nn::Conv2d(
                   torch::nn::Conv2dOptions(cfg_.head_hidden, cfg_.head_channels(), 3).padding(1)));
  init_camera_mlp();
  reset_gaussian_head();
}

void PoseFreeModelImpl::init_camera_mlp() {
  torch::NoGradGuard ng;
  auto last = camera_mlp[2]->as<torch::nn::LinearImpl>();
  // Rows 2..5 quaternion, 6..8 translation: start at the identity pose.
  last->weight.slice(0, 2, 9).zero_();
  last->bias.zero_();
  last->bias[2] = 1.0;
}

void PoseFreeModelImpl::reset_gaussian_head() {
  torch::NoGradGuard ng;
  head1->reset_parameters();
  head2->reset_parameters();
  head2->weight.mul_(0.1);
  auto b = head2->bias;
  b.zero_();
  b[0] = 1.0;                      // depth ~ d_min + softplus(1)
  b[2] = 1.0;                      // identity quaternion
  b.slice(0, 6, 8).fill_(0.5413);  // softplus^-1(1): one-pixel footprint
}

torch::Tensor PoseFreeModelImpl::pixel_coords() const {
  const int H = cfg_.height, W = cfg_.width;
  auto u = torch::arange(W, torch::kFloat32) / static_cast<float>(W);
  auto v = torch::arange(H, torch::kFloat32) / static_cast<float>(H);
  auto grid = torch::meshgrid({v, u}, "ij");
  return torch::stack({grid[1], grid[0]}).unsqueeze(0);  // [1,2,H,W]
}

torch::Tensor PoseFreeModelImpl::per_frame_features(const torch::Tensor& images) {
  const int H = cfg_.height, W = cfg_.width, p = cfg_.patch_size;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != H || images.size(3) != W)
    throw InputError("per_frame_features: expected [N,3," + std::to_string(H) + "," +
                     std::to_string(W) + "] images");
  const auto N = images.size(0);
  auto x = torch::cat({images, pixel_coords().to(images.dtype()).expand({N, 2, H, W})}, 1);
  return unpatchify(per_frame->forward_tokens(patchify(x, p)), p, H, W);
}

namespace {

// Appends a constant channel i/count to frame i and flattens every frame's
// tokens into one joint sequence [1, count*T, L].
torch::Tensor joint_tokens_with_index(const torch::Tensor& maps, int p) {
  const auto N = maps.size(0), H = maps.size(2), W = maps.size(3);
  auto idx = (torch::arange(N, maps.options()) / static_cast<double>(N)).view({N, 1, 1, 1});
  auto x = torch::cat({maps, idx.expand({N, 1, H, W})}, 1);
  auto tok = patchify(x, p);
  return tok.reshape({1, N * tok.size(1), tok.size(2)});
}

torch::Tensor split_frames(const torch::Tensor& joint, int64_t n) {
  return joint.reshape({n, joint.size(1) / n, joint.size(2)});
}

}  // namespace

CameraBatch PoseFreeModelImpl::predict_cameras(const torch::Tensor& fs) {
  const int H = cfg_.height, W = cfg_.width, p = cfg_.patch_size;
  const auto N = fs.size(0);
  if (N < 2) throw InputError("predict_cameras: need at least 2 frames, got " + std::to_string(N));
  auto out = camera->forward_tokens(joint_tokens_with_index(fs, p));
  auto maps = unpatchify(split_frames(out, N), p, H, W);
  auto raw = camera_mlp->forward(maps.mean({2, 3}));  // [N,9]
  const double base = std::max(H, W);
  const double bias0 = std::log(std::expm1(cfg_.focal_init));
  auto focal = F::softplus(raw.slice(1, 0, 2) + bias0) * base;
  CameraBatch cams;
  cams.focal = focal.mean(0, true).expand({N, 2});
  auto q = raw.slice(1, 2, 6);
  cams.quat = q / q.norm(2, -1, true).clamp_min(1e-12);
  cams.trans = raw.slice(1, 6, 9);
  cams.width = W;
  cams.height = H;
  return cams;
}

ContextOutput PoseFreeModelImpl::predict_context(const torch::Tensor& fs) {
  const int H = cfg_.height, W = cfg_.width, p = cfg_.patch_size;
  const auto M = fs.size(0);
  if (M < 1) throw InputError("predict_context: empty context set");
  auto out = context->forward_tokens(joint_tokens_with_index(fs, p));
  ContextOutput res;
  res.features = unpatchify(split_frames(out, M), p, H, W) + context_skip(fs);
  auto raw = head2(F::gelu(head1(res.features))).permute({0, 2, 3, 1});  // [M,H,W,ch]
  auto& g = res.primitives;
  g.sh_degree = cfg_.sh_degree;
  g.depth = cfg_.depth_min + F::softplus(raw.select(-1, 0));
  g.opacity = torch::sigmoid(raw.select(-1, 1));
  auto q = raw.slice(-1, 2, 6);
  g.quats = q / q.norm(2, -1, true).clamp_min(1e-12);
  g.scales = F::softplus(raw.slice(-1, 6, 8));
  const int K = splat::sh_coeff_count(cfg_.sh_degree);
  g.sh = raw.slice(-1, 8, 8 + 3 * K).reshape({M, H, W, 3, K});
  return res;
}

torch::Tensor PoseFreeModelImpl::synthesize_view(const torch::Tensor& fc,
                                                 const CameraBatch& ctx_cams,
                                                 const CameraBatch& targets) {
  const int H = cfg_.height, W = cfg_.width, p = cfg_.patch_size;
  const auto M = fc.size(0), Tn = targets.size();
  if (M < 1) throw InputError("synthesize_view: need at least one context frame");
  if (ctx_cams.size() != M) throw ContractViolation("synthesize_view: context camera count");
  auto ctx = patchify(torch::cat({fc, geometry::plucker_map(ctx_cams).to(fc.dtype())}, 1), p);
  ctx = ctx.reshape({1, M * ctx.size(1), ctx.size(2)}).expand({Tn, -1, -1});
  auto tgt_in = torch::cat({torch::zeros({Tn, fc.size(1), H, W}, fc.options()),
                            geometry::plucker_map(targets).to(fc.dtype())},
                           1);
  auto tgt = patchify(tgt_in, p);
  const auto T = tgt.size(1);
  auto out = view_synthesis->forward_tokens(torch::cat({ctx, tgt}, 1));
  return torch::sigmoid(unpatchify(out.slice(1, M * T), p, H, W));
}

std::vector<std::pair<std::string, torch::Tensor>> named_parameters(torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : m.named_parameters(true)) out.emplace_back(item.key(), item.value());
  return out;
}

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  json index = json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("checkpoint: cannot write " + (dir / "params.bin").string());
  int64_t offset = 0;
  for (const auto& [name, t] : arrays) {
    auto f = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    static_assert(std::endian::native == std::endian::little);
    bin.write(reinterpret_cast<const char*>(f.data_ptr<float>()),
              static_cast<std::streamsize>(f.numel() * sizeof(float)));
    index.push_back({{"name", name}, {"shape", f.sizes().vec()}, {"offset", offset}});
    offset += f.numel();
  }
  if (!bin) throw Error("checkpoint: write failed");
  json manifest{{"format", "posefree-checkpoint"}, {"version", 1}, {"config", config},
                {"stage", stage}, {"step", step}, {"arrays", index}};
  std::ofstream man(dir / "manifest.json", std::ios::trunc);
  man << manifest.dump(2) << "\n";
  if (!man) throw Error("checkpoint: cannot write manifest");
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.json");
  if (!man) throw InputError("checkpoint: missing " + (dir / "manifest.json").string());
  json manifest;
  try {
    man >> manifest;
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "posefree-checkpoint")
    throw InputError("checkpoint: unknown format in " + dir.string());
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw InputError("checkpoint: missing params.bin");
  std::vector<char> data((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const int64_t total = static_cast<int64_t>(data.size() / sizeof(float));

  Checkpoint c;
  c.config = manifest.at("config");
  c.stage = manifest.at("stage").get<int>();
  c.step = manifest.at("step").get<int64_t>();
  for (const auto& a : manifest.at("arrays")) {
    auto shape = a.at("shape").get<std::vector<int64_t>>();
    const int64_t offset = a.at("offset").get<int64_t>();
    int64_t n = 1;
    for (auto s : shape) n *= s;
    if (offset < 0 || offset + n > total) throw InputError("checkpoint: array out of range");
    auto t = torch::empty(shape, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), data.data() + offset * sizeof(float), n * sizeof(float));
    c.arrays.emplace_back(a.at("name").get<std::string>(), t);
  }
  return c;
}

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : arrays)
    if (n == name) return &t;
  return nullptr;
}

void load_model_arrays(torch::nn::Module& m, const Checkpoint& ckpt) {
  torch::NoGradGuard ng;
  for (auto& [name, p] : named_parameters(m)) {
    const auto* src = ckpt.find("model." + name);
    if (!src) throw InputError("checkpoint: missing parameter " + name);
    if (src->sizes() != p.sizes()) throw InputError("checkpoint: shape mismatch for " + name);
    p.copy_(*src);
  }
}

void append_model_arrays(torch::nn::Module& m, Checkpoint& ckpt) {
  for (auto& [name, p] : named_parameters(m)) ckpt.arrays.emplace_back("model." + name, p);
}

}  // namespace posefree::model
