#pragma once

// Network components: pre-norm transformer blocks over patch tokens, the four
// transformers (per-frame, camera, context, view synthesis) and their heads.
// Image-like tensors are [N,C,H,W] float; cameras are camera-to-world.

#include "posefree/geometry.hpp"
#include "posefree/splat.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace posefree::model {

using nlohmann::json;

struct TransformerConfig {
  int blocks = 8;
  int hidden = 512;
  int heads = 8;

  bool operator==(const TransformerConfig&) const = default;
};

struct ModelConfig {
  int patch_size = 8;
  int width = 256;
  int height = 256;
  TransformerConfig per_frame{12, 768, 12};
  TransformerConfig camera{8, 512, 8};
  TransformerConfig context{8, 512, 8};
  TransformerConfig view_synthesis{8, 512, 8};
  int feature_channels = 64;  // channels of the per-pixel F^s and F^c maps
  int camera_mlp_hidden = 256;
  int head_hidden = 128;
  int sh_degree = 0;
  double depth_min = 0.05;
  double focal_init = 0.8;  // initial focal as a fraction of max(H, W)

  static ModelConfig paper();
  static ModelConfig toy();

  // Throws ConfigError on violated invariants.
  void validate() const;
  int tokens_per_frame() const { return (height / patch_size) * (width / patch_size); }
  int head_channels() const { return 8 + 3 * splat::sh_coeff_count(sh_degree); }

  json to_json() const;
  static ModelConfig from_json(const json& j);
  bool operator==(const ModelConfig&) const = default;
};

// [B,C,H,W] -> [B, (H/p)(W/p), C p p], row-major over patches; each token holds
// its patch channel-major.
torch::Tensor patchify(const torch::Tensor& map, int patch);
// Inverse of patchify.
torch::Tensor unpatchify(const torch::Tensor& tokens, int patch, int height, int width);

struct TransformerBlockImpl : torch::nn::Module {
  TransformerBlockImpl(int hidden, int heads);
  // x [B,T,D]; attn_bias [heads,T,T] is added to the attention logits.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& attn_bias = {});
  // Zeroes the attention and MLP output projections (identity block).
  void zero_output_projections();

  int heads;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

// Patch embedding -> blocks -> final norm -> per-patch output projection.
// Every block adds a learned bias indexed by the 2D offset between the two
// tokens' patch positions within their frames, so a sequence of several
// frames sees the same bias between any pair of frames. The table starts as
// -slope_h * |offset|^2 with per-head slopes from 0 (global) upwards.
struct PatchTransformerImpl : torch::nn::Module {
  PatchTransformerImpl(const TransformerConfig& cfg, int in_channels, int out_channels, int patch,
                       int grid_rows, int grid_cols);
  // tokens [B,T,Cin p p] -> [B,T,Cout p p], T a multiple of grid_rows*grid_cols.
  torch::Tensor forward_tokens(const torch::Tensor& tokens);

  int patch;
  int64_t tokens_per_frame;
  torch::nn::Linear embed{nullptr};
  torch::Tensor rel_bias;   // [blocks, heads, (2R-1)(2C-1)]
  torch::Tensor rel_index;  // [T*T] into the last axis of rel_bias
  torch::nn::ModuleList blocks;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(PatchTransformer);

// Per-pixel primitive parameters of the context frames, camera frame.
struct PixelPrimitives {
  torch::Tensor depth;    // [M,H,W], >= depth_min
  torch::Tensor opacity;  // [M,H,W]
  torch::Tensor quats;    // [M,H,W,4], unit
  torch::Tensor scales;   // [M,H,W,2]
  torch::Tensor sh;       // [M,H,W,3,K]
  int sh_degree = 0;

  int64_t frames() const { return depth.size(0); }
};

// Primitives of context frame m lifted to points along its pixel rays, still
// in that camera's frame. `focal` is [2].
splat::Gaussians camera_frame_gaussians(const PixelPrimitives& prims, int64_t m,
                                        const torch::Tensor& focal);

struct ContextOutput {
  torch::Tensor features;  // F^c [M,C,H,W]
  PixelPrimitives primitives;
};

class PoseFreeModelImpl : public torch::nn::Module {
 public:
  explicit PoseFreeModelImpl(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // images [N,3,H,W] -> F^s [N,C,H,W]. Frames never attend to each other.
  torch::Tensor per_frame_features(const torch::Tensor& images);

  // F^s of one clip, N >= 2, in clip order. Focal lengths are shared.
  geometry::CameraBatch predict_cameras(const torch::Tensor& frame_features);

  // F^s of the context frames in context order.
  ContextOutput predict_context(const torch::Tensor& context_frame_features);

  // F^c [M,C,H,W] with cameras [M]; renders every camera in `targets` (each
  // target attends to all context tokens and its own tokens) -> [T,3,H,W].
  torch::Tensor synthesize_view(const torch::Tensor& context_features,
                                const geometry::CameraBatch& context_cams,
                                const geometry::CameraBatch& targets);

  // Fresh random weights for the Gaussian head.
  void reset_gaussian_head();

  PatchTransformer per_frame{nullptr}, camera{nullptr}, context{nullptr}, view_synthesis{nullptr};
  torch::nn::Sequential camera_mlp{nullptr};
  torch::nn::Conv2d context_skip{nullptr};
  torch::nn::Conv2d head1{nullptr}, head2{nullptr};

 private:
  torch::Tensor pixel_coords() const;
  void init_camera_mlp();
  ModelConfig cfg_;
};
TORCH_MODULE(PoseFreeModel);

// Named parameter list in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_parameters(torch::nn::Module& m);

// Self-describing checkpoint: manifest.json (config, stage, step, array index)
// plus params.bin (little-endian float32, concatenated in manifest order).
struct Checkpoint {
  json config;
  int stage = 1;
  int64_t step = 0;
  std::vector<std::pair<std::string, torch::Tensor>> arrays;

  void save(const std::filesystem::path& dir) const;
  static Checkpoint load(const std::filesystem::path& dir);
  const torch::Tensor* find(const std::string& name) const;
};

// Copies arrays named "model.<param>" into the model. Throws InputError on a
// missing name or a shape mismatch.
void load_model_arrays(torch::nn::Module& m, const Checkpoint& ckpt);
void append_model_arrays(torch::nn::Module& m, Checkpoint& ckpt);

}  // namespace posefree::model
