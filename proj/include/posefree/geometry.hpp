#pragma once

// Pinhole cameras, quaternion algebra, (back-)projection, Plücker ray maps and
// differentiable bilinear sampling.
//
// Conventions shared by every module:
//   * extrinsics are camera-to-world: world = R * cam + t
//   * quaternions are stored (w, x, y, z) and normalized at use
//   * the principal point is exactly (width / 2, height / 2) and pixels are
//     addressed by raw integer coordinates, i.e. pixel (u, v) maps to the
//     homogeneous vector [u v 1]^T without a half-pixel offset.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace posefree::geometry {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kBehindEpsilon = 1e-6;
inline constexpr double kDegenerateQuatNorm = 1e-12;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  int width = 1;
  int height = 1;

  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }
  Mat3 matrix() const;
  Mat3 inverse() const;
  // Throws InputError unless fx, fy > 0 and width, height >= 1.
  void validate() const;

  bool operator==(const Intrinsics&) const = default;
};

struct Extrinsics {
  Vec4 q = Vec4(1.0, 0.0, 0.0, 0.0);  // (w, x, y, z)
  Vec3 t = Vec3::Zero();

  Mat3 rotation() const;
  Vec3 center() const { return t; }
  static Extrinsics from_rotation(const Mat3& R, const Vec3& t);

  bool operator==(const Extrinsics&) const = default;
};

struct Camera {
  Intrinsics intrinsics;
  Extrinsics extrinsics;

  bool operator==(const Camera&) const = default;
};

// R(q / |q|). Throws DegenerateError when |q| < 1e-12.
Mat3 quat_to_rotation(const Vec4& q);
// Returns the unit quaternion with w >= 0.
Vec4 rotation_to_quat(const Mat3& R);
Vec4 quat_multiply(const Vec4& a, const Vec4& b);
Vec4 normalize_quat(const Vec4& q);
Mat3 axis_angle_to_rotation(const Vec3& omega);
// Geodesic angle of a rotation matrix, in degrees.
double rotation_angle_deg(const Mat3& R);

// mu = R * (depth * K^-1 [u v 1]^T) + t
Vec3 back_project(double u, double v, double depth, const Intrinsics& K,
                  const Extrinsics& P);

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;  // depth along the optical axis
  bool valid = false;
};

// Inverse of back_project. `valid` is false when z <= eps_behind.
Projection project(const Vec3& point, const Intrinsics& K, const Extrinsics& P,
                   double eps_behind = kBehindEpsilon);

// Mean focal lengths and translation, sign-corrected normalized quaternion
// mean (the slerp midpoint for two rotations).
Camera average_cameras(const Camera& a, const Camera& b);

// ---------------------------------------------------------------------------
// Batched, differentiable tensor versions used by the networks and losses.
// ---------------------------------------------------------------------------

// N cameras sharing one image resolution. focal [N,2] (fx, fy), quat [N,4],
// trans [N,3].
struct CameraBatch {
  torch::Tensor focal;
  torch::Tensor quat;
  torch::Tensor trans;
  int width = 0;
  int height = 0;

  int64_t size() const { return focal.size(0); }
  torch::Tensor rotation() const;
  CameraBatch select(const std::vector<int64_t>& indices) const;
  CameraBatch detach() const;
  CameraBatch to(torch::ScalarType dtype) const;

  Camera camera(int64_t i) const;
  std::vector<Camera> cameras() const;
  static CameraBatch from_cameras(const std::vector<Camera>& cams,
                                  torch::ScalarType dtype = torch::kFloat32);
  static CameraBatch concat(const std::vector<CameraBatch>& parts);
};

// [..., 4] -> [..., 3, 3]; normalizes internally.
torch::Tensor quat_to_rotation(const torch::Tensor& q);
// Hamilton product over the last dimension.
torch::Tensor quat_multiply(const torch::Tensor& a, const torch::Tensor& b);

// Camera-frame ray directions K^-1 [u v 1]^T for every pixel: [N,H,W,3].
torch::Tensor camera_rays(const torch::Tensor& focal, int width, int height);

// depth [N,H,W] -> world points [N,H,W,3].
torch::Tensor back_project(const torch::Tensor& depth, const CameraBatch& cams);

struct TensorProjection {
  torch::Tensor uv;     // [N,...,2]
  torch::Tensor z;      // [N,...]
  torch::Tensor valid;  // [N,...] bool, z > eps_behind
};

// points [N,...,3] in world frame, projected into camera n of `cams`.
TensorProjection project(const torch::Tensor& points, const CameraBatch& cams,
                         double eps_behind = kBehindEpsilon);

// [N,6,H,W]: channels 0..2 unit direction d (world), 3..5 moment m = t x d.
torch::Tensor plucker_map(const CameraBatch& cams);

struct Sampled {
  torch::Tensor values;  // [N,C,H',W']
  torch::Tensor valid;   // [N,H',W'] bool
};

// image [N,C,H,W], coords [N,H',W',2] continuous pixel positions (u, v).
// Out-of-bounds samples are zero and flagged invalid.
Sampled bilinear_sample(const torch::Tensor& image, const torch::Tensor& coords);

}  // namespace posefree::geometry
