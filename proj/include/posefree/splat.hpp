#pragma once

// 2D Gaussian surfels and a differentiable CPU rasterizer.
//
// Each surfel is a planar Gaussian disk with center mu, tangent axes given by
// the first two columns of R(q), per-axis standard deviations s, opacity and
// SH color. A pixel's weight comes from intersecting its ray with the surfel
// plane and evaluating the Gaussian in the surfel's local tangent frame.

#include "posefree/geometry.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace posefree::splat {

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Structure-of-arrays primitive set.
struct Gaussians {
  torch::Tensor means;    // [P,3]
  torch::Tensor opacity;  // [P], in [0,1]
  torch::Tensor quats;    // [P,4] (w,x,y,z), normalized at use
  torch::Tensor scales;   // [P,2], > 0
  torch::Tensor sh;       // [P,3,K], K = (degree+1)^2
  int sh_degree = 0;

  int64_t size() const { return means.defined() ? means.size(0) : 0; }
  Gaussians detach() const;
  Gaussians to(torch::ScalarType dtype) const;
  Gaussians select(const torch::Tensor& index) const;
  static Gaussians empty(int sh_degree = 0, torch::ScalarType dtype = torch::kFloat32);
  static Gaussians concat(const std::vector<Gaussians>& parts);
};

struct RenderOutput {
  torch::Tensor color;  // [H,W,3]
  torch::Tensor depth;  // [H,W], normalized expected depth
  torch::Tensor alpha;  // [H,W], accumulated opacity
};

struct RasterSettings {
  double near_plane = 1e-2;
  double cutoff_sigma = 3.0;
  // Width (in sigmas) of the smooth falloff ending at cutoff_sigma; the kernel
  // is the exact Gaussian inside cutoff_sigma - cutoff_taper.
  double cutoff_taper = 0.5;
  double depth_eps = 1e-8;
};

// Rigidly moves camera-frame primitives into the world: mu_w = R mu + t,
// q_w = q_pose * q. pose_quat [4], pose_trans [3].
Gaussians gaussians_to_world(const Gaussians& cam_frame, const torch::Tensor& pose_quat,
                             const torch::Tensor& pose_trans);

// Real SH color, offset by 0.5 so zero coefficients give mid gray.
// sh [P,3,K], dirs [P,3] unit view directions. Degrees 0 and 1 only.
torch::Tensor eval_sh(const torch::Tensor& sh, const torch::Tensor& dirs, int degree);

// Renders world-frame primitives into the camera (focal [2], pose_quat [4],
// pose_trans [3], camera-to-world). Differentiable w.r.t. every primitive
// field, the focal lengths and the pose. Background is black.
RenderOutput rasterize(const Gaussians& world, const torch::Tensor& focal,
                       const torch::Tensor& pose_quat, const torch::Tensor& pose_trans,
                       int width, int height, const RasterSettings& settings = {});

// Convenience: render from camera `index` of a batch.
RenderOutput rasterize(const Gaussians& world, const geometry::CameraBatch& cams,
                       int64_t index, const RasterSettings& settings = {});

// Low-level entry point on camera-frame quantities (tangent axes already
// rotated into the camera). Exposed for testing the analytic backward pass.
RenderOutput rasterize_camera_frame(const torch::Tensor& means_cam, const torch::Tensor& tangent_u,
                                    const torch::Tensor& tangent_v, const torch::Tensor& scales,
                                    const torch::Tensor& opacity, const torch::Tensor& colors,
                                    const torch::Tensor& focal, int width, int height,
                                    const RasterSettings& settings = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t checked = 0;
  // Largest error per parameter group (means, opacity, scales, quats,
  // pose_trans, pose_quat).
  std::vector<std::pair<std::string, double>> per_group;
};

// Compares analytic gradients of a fixed random linear image loss against
// central finite differences (double precision). `fd_step` is the
// perturbation size.
GradCheckResult rasterize_grad_check(const Gaussians& world, const geometry::Camera& camera,
                                     double fd_step = 1e-4, uint64_t seed = 0);

// Debug dump: ASCII PLY with x y z opacity scale_0 scale_1 rot_0..3 and DC
// color (after SH evaluation) per surfel.
void write_ply(const std::filesystem::path& path, const Gaussians& g);

}  // namespace posefree::splat
