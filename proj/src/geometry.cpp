#include "posefree/geometry.hpp"

#include "posefree/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace posefree::geometry {

namespace F = torch::nn::functional;

Mat3 Intrinsics::matrix() const {
  Mat3 K;
  K << fx, 0.0, cx(), 0.0, fy, cy(), 0.0, 0.0, 1.0;
  return K;
}

Mat3 Intrinsics::inverse() const {
  Mat3 Kinv;
  Kinv << 1.0 / fx, 0.0, -cx() / fx, 0.0, 1.0 / fy, -cy() / fy, 0.0, 0.0, 1.0;
  return Kinv;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw InputError("intrinsics: focal lengths must be positive");
  }
  if (width < 1 || height < 1) {
    throw InputError("intrinsics: image size must be at least 1x1");
  }
}

Mat3 Extrinsics::rotation() const { return quat_to_rotation(q); }

Extrinsics Extrinsics::from_rotation(const Mat3& R, const Vec3& t) {
  return Extrinsics{rotation_to_quat(R), t};
}

Vec4 normalize_quat(const Vec4& q) {
  const double n = q.norm();
  if (!(n >= kDegenerateQuatNorm)) {
    throw DegenerateError("degenerate quaternion (norm " + std::to_string(n) + ")");
  }
  return q / n;
}

Mat3 quat_to_rotation(const Vec4& q_in) {
  const Vec4 q = normalize_quat(q_in);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Vec4 rotation_to_quat(const Mat3& R) {
  Eigen::Quaterniond e(R);
  e.normalize();
  Vec4 q(e.w(), e.x(), e.y(), e.z());
  if (q[0] < 0) q = -q;
  return q;
}

Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
  return Vec4(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Mat3 axis_angle_to_rotation(const Vec3& omega) {
  const double angle = omega.norm();
  if (angle < 1e-15) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

double rotation_angle_deg(const Mat3& R) {
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  // acos is ill-conditioned near 0; recover the sine from the skew part.
  const Vec3 skew(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double s = 0.5 * skew.norm();
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

Vec3 back_project(double u, double v, double depth, const Intrinsics& K,
                  const Extrinsics& P) {
  const Vec3 ray = K.inverse() * Vec3(u, v, 1.0);
  return P.rotation() * (depth * ray) + P.t;
}

Projection project(const Vec3& point, const Intrinsics& K, const Extrinsics& P,
                   double eps_behind) {
  const Vec3 cam = P.rotation().transpose() * (point - P.t);
  Projection out;
  out.z = cam.z();
  out.valid = cam.z() > eps_behind;
  if (out.valid) {
    out.u = K.fx * cam.x() / cam.z() + K.cx();
    out.v = K.fy * cam.y() / cam.z() + K.cy();
  }
  return out;
}

Camera average_cameras(const Camera& a, const Camera& b) {
  if (a.intrinsics.width != b.intrinsics.width ||
      a.intrinsics.height != b.intrinsics.height) {
    throw InputError("average_cameras: resolution mismatch");
  }
  const Vec4 qa = normalize_quat(a.extrinsics.q);
  Vec4 qb = normalize_quat(b.extrinsics.q);
  if (qa.dot(qb) < 0.0) qb = -qb;
  const Vec4 sum = qa + qb;
  if (sum.norm() < 1e-9) {
    throw DegenerateError("average_cameras: antipodal rotations");
  }
  Camera out;
  out.intrinsics = a.intrinsics;
  out.intrinsics.fx = 0.5 * (a.intrinsics.fx + b.intrinsics.fx);
  out.intrinsics.fy = 0.5 * (a.intrinsics.fy + b.intrinsics.fy);
  out.extrinsics.t = 0.5 * (a.extrinsics.t + b.extrinsics.t);
  out.extrinsics.q = sum.normalized();
  if (out.extrinsics.q[0] < 0.0) out.extrinsics.q = -out.extrinsics.q;
  if (a == b) out = a;
  return out;
}

// ---------------------------------------------------------------------------

torch::Tensor CameraBatch::rotation() const { return quat_to_rotation(quat); }

CameraBatch CameraBatch::select(const std::vector<int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kLong);
  return {focal.index_select(0, idx), quat.index_select(0, idx),
          trans.index_select(0, idx), width, height};
}

CameraBatch CameraBatch::detach() const {
  return {focal.detach(), quat.detach(), trans.detach(), width, height};
}

CameraBatch CameraBatch::to(torch::ScalarType dtype) const {
  return {focal.to(dtype), quat.to(dtype), trans.to(dtype), width, height};
}

Camera CameraBatch::camera(int64_t i) const {
  auto f = focal[i].detach().to(torch::kDouble).contiguous();
  auto q = quat[i].detach().to(torch::kDouble).contiguous();
  auto t = trans[i].detach().to(torch::kDouble).contiguous();
  const double* fp = f.data_ptr<double>();
  const double* qp = q.data_ptr<double>();
  const double* tp = t.data_ptr<double>();
  Camera cam;
  cam.intrinsics = Intrinsics{fp[0], fp[1], width, height};
  cam.extrinsics.q = Vec4(qp[0], qp[1], qp[2], qp[3]);
  cam.extrinsics.t = Vec3(tp[0], tp[1], tp[2]);
  return cam;
}

std::vector<Camera> CameraBatch::cameras() const {
  std::vector<Camera> out;
  for (int64_t i = 0; i < size(); ++i) out.push_back(camera(i));
  return out;
}

CameraBatch CameraBatch::from_cameras(const std::vector<Camera>& cams,
                                      torch::ScalarType dtype) {
  if (cams.empty()) throw InputError("CameraBatch::from_cameras: empty list");
  const auto n = static_cast<int64_t>(cams.size());
  auto focal = torch::empty({n, 2}, torch::kDouble);
  auto quat = torch::empty({n, 4}, torch::kDouble);
  auto trans = torch::empty({n, 3}, torch::kDouble);
  auto fa = focal.accessor<double, 2>();
  auto qa = quat.accessor<double, 2>();
  auto ta = trans.accessor<double, 2>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& c = cams[static_cast<size_t>(i)];
    if (c.intrinsics.width != cams[0].intrinsics.width ||
        c.intrinsics.height != cams[0].intrinsics.height) {
      throw InputError("CameraBatch::from_cameras: mixed resolutions");
    }
    fa[i][0] = c.intrinsics.fx;
    fa[i][1] = c.intrinsics.fy;
    for (int k = 0; k < 4; ++k) qa[i][k] = c.extrinsics.q[k];
    for (int k = 0; k < 3; ++k) ta[i][k] = c.extrinsics.t[k];
  }
  return {focal.to(dtype), quat.to(dtype), trans.to(dtype),
          cams[0].intrinsics.width, cams[0].intrinsics.height};
}

CameraBatch CameraBatch::concat(const std::vector<CameraBatch>& parts) {
  if (parts.empty()) throw InputError("CameraBatch::concat: empty list");
  std::vector<torch::Tensor> f, q, t;
  for (const auto& p : parts) {
    if (p.width != parts[0].width || p.height != parts[0].height) {
      throw InputError("CameraBatch::concat: mixed resolutions");
    }
    f.push_back(p.focal);
    q.push_back(p.quat);
    t.push_back(p.trans);
  }
  return {torch::cat(f), torch::cat(q), torch::cat(t), parts[0].width,
          parts[0].height};
}

torch::Tensor quat_to_rotation(const torch::Tensor& q_in) {
  TORCH_CHECK(q_in.size(-1) == 4, "quat_to_rotation: last dim must be 4");
  auto q = q_in / q_in.norm(2, -1, true).clamp_min(kDegenerateQuatNorm);
  auto w = q.select(-1, 0), x = q.select(-1, 1), y = q.select(-1, 2),
       z = q.select(-1, 3);
  auto rows = torch::stack(
      {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)},
      -1);
  auto shape = q.sizes().vec();
  shape.back() = 3;
  shape.push_back(3);
  return rows.reshape(shape);
}

torch::Tensor quat_multiply(const torch::Tensor& a, const torch::Tensor& b) {
  auto aw = a.select(-1, 0), ax = a.select(-1, 1), ay = a.select(-1, 2),
       az = a.select(-1, 3);
  auto bw = b.select(-1, 0), bx = b.select(-1, 1), by = b.select(-1, 2),
       bz = b.select(-1, 3);
  return torch::stack({aw * bw - ax * bx - ay * by - az * bz,
                       aw * bx + ax * bw + ay * bz - az * by,
                       aw * by - ax * bz + ay * bw + az * bx,
                       aw * bz + ax * by - ay * bx + az * bw},
                      -1);
}

torch::Tensor camera_rays(const torch::Tensor& focal, int width, int height) {
  auto opts = focal.options().requires_grad(false);
  auto u = torch::arange(width, opts) - 0.5 * width;
  auto v = torch::arange(height, opts) - 0.5 * height;
  auto grid = torch::meshgrid({v, u}, "ij");  // [H,W] each
  const auto n = focal.size(0);
  auto fx = focal.select(1, 0).view({n, 1, 1});
  auto fy = focal.select(1, 1).view({n, 1, 1});
  auto x = grid[1].unsqueeze(0) / fx;
  auto y = grid[0].unsqueeze(0) / fy;
  auto ones = torch::ones_like(x);
  return torch::stack({x, y, ones}, -1);
}

torch::Tensor back_project(const torch::Tensor& depth, const CameraBatch& cams) {
  TORCH_CHECK(depth.dim() == 3, "back_project: depth must be [N,H,W]");
  auto rays = camera_rays(cams.focal, cams.width, cams.height);
  auto cam_pts = depth.unsqueeze(-1) * rays;  // [N,H,W,3]
  auto R = cams.rotation();                   // [N,3,3]
  const auto n = depth.size(0);
  auto world = torch::matmul(cam_pts.reshape({n, -1, 3}), R.transpose(1, 2)) +
               cams.trans.unsqueeze(1);
  return world.reshape(cam_pts.sizes());
}

TensorProjection project(const torch::Tensor& points, const CameraBatch& cams,
                         double eps_behind) {
  const auto n = points.size(0);
  auto flat = points.reshape({n, -1, 3});
  auto R = cams.rotation();
  // cam = R^T (p - t), written row-wise as (p - t) R.
  auto cam = torch::matmul(flat - cams.trans.unsqueeze(1), R);
  auto z = cam.select(-1, 2);
  auto valid = z > eps_behind;
  auto safe_z = torch::where(valid, z, torch::ones_like(z));
  auto fx = cams.focal.select(1, 0).unsqueeze(1);
  auto fy = cams.focal.select(1, 1).unsqueeze(1);
  auto u = fx * cam.select(-1, 0) / safe_z + 0.5 * cams.width;
  auto v = fy * cam.select(-1, 1) / safe_z + 0.5 * cams.height;
  auto lead = points.sizes().vec();
  lead.pop_back();
  auto uv_shape = lead;
  uv_shape.push_back(2);
  return {torch::stack({u, v}, -1).reshape(uv_shape), z.reshape(lead),
          valid.reshape(lead)};
}

torch::Tensor plucker_map(const CameraBatch& cams) {
  auto rays = camera_rays(cams.focal, cams.width, cams.height);
  const auto n = cams.size();
  auto R = cams.rotation();
  auto d = torch::matmul(rays.reshape({n, -1, 3}), R.transpose(1, 2));
  d = d / d.norm(2, -1, true);
  auto o = cams.trans.unsqueeze(1).expand_as(d);
  auto m = torch::cross(o, d, -1);
  auto out = torch::cat({d, m}, -1).reshape({n, cams.height, cams.width, 6});
  return out.permute({0, 3, 1, 2}).contiguous();
}

Sampled bilinear_sample(const torch::Tensor& image, const torch::Tensor& coords) {
  TORCH_CHECK(image.dim() == 4 && coords.dim() == 4 && coords.size(-1) == 2,
              "bilinear_sample: expected image [N,C,H,W] and coords [N,H,W,2]");
  const auto h = image.size(2);
  const auto w = image.size(3);
  auto u = coords.select(-1, 0);
  auto v = coords.select(-1, 1);
  auto valid = (u >= 0) & (u <= static_cast<double>(w - 1)) & (v >= 0) &
               (v <= static_cast<double>(h - 1));
  auto nu = u * (2.0 / static_cast<double>(std::max<int64_t>(w - 1, 1))) - 1.0;
  auto nv = v * (2.0 / static_cast<double>(std::max<int64_t>(h - 1, 1))) - 1.0;
  auto grid = torch::stack({nu, nv}, -1).to(image.scalar_type());
  auto sampled = F::grid_sample(image, grid,
                                F::GridSampleFuncOptions()
                                    .mode(torch::kBilinear)
                                    .padding_mode(torch::kZeros)
                                    .align_corners(true));
  sampled = sampled * valid.unsqueeze(1).to(sampled.scalar_type());
  return {sampled, valid};
}

}  // namespace posefree::geometry
