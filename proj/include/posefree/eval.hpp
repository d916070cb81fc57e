#pragma once

// Image and pose metrics, the two evaluation protocols and test-pose
// refinement.

#include "posefree/data.hpp"
#include "posefree/geometry.hpp"
#include "posefree/model.hpp"
#include "posefree/splat.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace posefree::eval {

using geometry::Camera;
using nlohmann::json;

inline constexpr double kPsnrCap = 99.0;

// Images [3,H,W] in [0,1]. Throw InputError on a shape mismatch.
double psnr(const torch::Tensor& pred, const torch::Tensor& gt);
// 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, valid region only,
// averaged over channels.
double ssim(const torch::Tensor& pred, const torch::Tensor& gt);

struct ImageMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double perceptual = 0.0;
};
ImageMetrics image_metrics(const torch::Tensor& pred, const torch::Tensor& gt);

struct PoseError {
  double rotation_deg = 0.0;
  double translation_deg = 0.0;
};

// Errors of the relative pose of b with respect to a. The relative motion is
// R_b^T R_a and R_b^T (c_a - c_b) for camera-to-world poses; translation
// vectors shorter than 1e-8 are degenerate (0 deg if both are, 90 deg if one).
PoseError relative_pose_errors(const Camera& pred_a, const Camera& pred_b, const Camera& gt_a,
                               const Camera& gt_b);

struct PoseSummary {
  double rra5 = 0.0, rra15 = 0.0, rta5 = 0.0, rta15 = 0.0;  // percent
  double median_rotation_deg = 0.0;
  double median_translation_deg = 0.0;
  int64_t pairs = 0;
};
PoseSummary summarize(const std::vector<PoseError>& errors);

struct Alignment {
  Camera test;          // GT test pose expressed in the predicted frame
  double scale = 1.0;
  bool degenerate = false;  // GT baseline below 1e-8; scale forced to 1
};

// Similarity that carries the GT context pair onto the predicted pair: the
// rotation best aligning both orientations (closed form), the baseline-length
// ratio as scale, and the translation placing camera a's center exactly. The
// result keeps the GT test intrinsics' size with the predicted focal of a.
Alignment align_target_pose(const Camera& gt_a, const Camera& gt_b, const Camera& gt_test,
                            const Camera& pred_a, const Camera& pred_b);

struct RefineSettings {
  int steps = 40;
  double lr = 1e-3;
};

struct RefineResult {
  Camera pose;
  int steps = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;   // loss at the returned pose
  bool fell_back = false;    // optimized pose was worse; init returned
};

// Splat rendering loss of `image` [3,H,W] against `world` seen from `pose`.
double splat_render_loss(const splat::Gaussians& world, const Camera& pose,
                         const torch::Tensor& image);

// Adam on a 6-dof pose increment (q = q0 * normalize(1, w/2), c = c0 + dt),
// all other quantities frozen, for exactly settings.steps steps.
RefineResult refine_test_pose(const splat::Gaussians& world, const torch::Tensor& image,
                              const Camera& init, const RefineSettings& settings = {});

// One evaluation case: two context frames and one test frame of a clip.
struct EvalCase {
  std::string clip;
  int64_t a = 0, b = 0, test = 0;  // frame indices
  torch::Tensor images;            // [3,3,H,W] in order a, b, test
  std::vector<Camera> gt;          // a, b, test
};

// Test frame midway between a and b, `gap` frames apart, one case per window
// start stepping by `stride`.
std::vector<EvalCase> make_cases(const data::DatasetManifest& manifest, const std::string& split,
                                 int64_t gap, int64_t stride);

struct CaseResult {
  std::string clip;
  int64_t a = 0, b = 0, test = 0;
  PoseError pose;
  ImageMetrics latent;
  ImageMetrics splat;
  bool has_splat = false;
  bool refined = false;
  int refine_steps = 0;
  bool fell_back = false;
  torch::Tensor gt_image, latent_image, splat_image;  // [3,H,W]
};

// Cameras from all three frames, context features from a and b only, the
// test frame rendered at its own predicted camera.
CaseResult run_target_aware(model::PoseFreeModel& m, const EvalCase& c, bool splat_render);
// Cameras and context from a and b; the GT test pose aligned into the
// predicted frame and optionally refined against the splat render.
CaseResult run_target_aligned(model::PoseFreeModel& m, const EvalCase& c, bool splat_render,
                              bool refine, const RefineSettings& settings = {});

struct EvalReport {
  std::string protocol;
  std::vector<CaseResult> cases;
  PoseSummary pose;
  ImageMetrics latent;  // means over cases
  ImageMetrics splat;
  bool has_splat = false;
  RefineSettings refine;
  bool refined = false;

  json to_json() const;
  // report.json, pose_errors.csv and grid.png (rows of GT | latent | splat).
  void write(const std::filesystem::path& dir, int grid_cases = 8) const;
};

EvalReport build_report(const std::string& protocol, std::vector<CaseResult> cases);

// Ranks with ties averaged; Pearson correlation of the ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace posefree::eval
