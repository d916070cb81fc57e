#pragma once

// Training objectives. Images are [N,3,H,W] (or [3,H,W] for single frames),
// depth maps [H,W]. All losses are means over pixels and views.

#include "posefree/geometry.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <vector>

namespace posefree::losses {

using nlohmann::json;

struct LossConfig {
  double w_low = 0.1;
  double lambda_perc = 0.5;
  double lambda_proj = 0.1;
  double lambda_ds = 0.01;
  double gamma = 10.0;
  int64_t proj_decay_start = 0;
  int64_t proj_decay_end = 1000;

  void validate() const;
  json to_json() const;
  static LossConfig from_json(const json& j);
  bool operator==(const LossConfig&) const = default;
};

// Perceptual distance between two images [N,3,H,W] -> per-image [N].
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual torch::Tensor per_image(const torch::Tensor& a, const torch::Tensor& b) const = 0;
};

// Three-level average-pooled pyramid; each level adds the MSE of the images
// and the MSE of their gradient magnitudes. Levels are averaged.
class PyramidPerceptual : public PerceptualDistance {
 public:
  explicit PyramidPerceptual(int levels = 3) : levels_(levels) {}
  torch::Tensor per_image(const torch::Tensor& a, const torch::Tensor& b) const override;

 private:
  int levels_;
};

const PerceptualDistance& default_perceptual();

// Scalar mean over the batch. Throws InputError on a resolution mismatch.
torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                                  const PerceptualDistance& backend = default_perceptual());

// sum_i w_i (MSE_i + lambda_perc perc_i) / sum_i w_i with w_i = w_low for
// context frames and 1 otherwise. Throws ContractViolation if every frame is a
// context frame.
torch::Tensor render_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                          const std::vector<bool>& is_context, const LossConfig& cfg,
                          const PerceptualDistance& backend = default_perceptual());

inline torch::Tensor latent_render_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                                        const std::vector<bool>& is_context,
                                        const LossConfig& cfg) {
  return render_loss(pred, gt, is_context, cfg);
}
inline torch::Tensor gs_render_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                                    const std::vector<bool>& is_context, const LossConfig& cfg) {
  return render_loss(pred, gt, is_context, cfg);
}

struct ProjectionLoss {
  torch::Tensor value;  // scalar
  int64_t valid_pixels = 0;
  bool all_invalid = false;
};

// Warps frame j into frame i through depth_i: back-project with cam_i, project
// into cam_j, sample image_j bilinearly and compare with image_i. Pixels that
// land behind camera j, outside image j or outside `mask_i` (optional [H,W]
// bool) are excluded from the mean. cam_i, cam_j are single-camera batches.
ProjectionLoss projection_loss(const torch::Tensor& depth_i, const torch::Tensor& image_i,
                               const torch::Tensor& image_j, const geometry::CameraBatch& cam_i,
                               const geometry::CameraBatch& cam_j,
                               const torch::Tensor& mask_i = {});

// mean |dx D| exp(-gamma |dx I|_1) + mean |dy D| exp(-gamma |dy I|_1), forward
// differences. depth [H,W], image [3,H,W].
torch::Tensor smoothness_loss(const torch::Tensor& depth, const torch::Tensor& image, double gamma);

// Projection weight at `step`: lambda_proj before the decay window, linear to
// zero across it, zero after.
double lambda_proj_at(const LossConfig& cfg, int64_t step);

struct LossComponents {
  torch::Tensor latent_render;
  torch::Tensor gs_render;
  torch::Tensor proj;
  torch::Tensor smooth;
};

struct LossReport {
  int64_t step = 0;
  int stage = 1;
  double latent_render = 0.0;
  double gs_render = 0.0;
  double proj = 0.0;
  double smooth = 0.0;
  double lambda_proj = 0.0;
  double total = 0.0;
  bool skipped = false;

  json to_json() const;
};

struct WeightedLoss {
  torch::Tensor total;
  LossReport report;
};

// Stage-1 objective: the latent render loss alone.
WeightedLoss stage1_total(const torch::Tensor& latent_render, int64_t step);
// L^M + L^G + lambda_proj(step) L_proj + lambda_ds L_ds. Undefined components
// count as zero.
WeightedLoss stage2_total(const LossComponents& c, int64_t step, const LossConfig& cfg);

}  // namespace posefree::losses
