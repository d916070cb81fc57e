#include "posefree/splat.hpp"

#include "posefree/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace posefree::splat {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

Gaussians Gaussians::detach() const {
  return {means.detach(), opacity.detach(), quats.detach(), scales.detach(), sh.detach(),
          sh_degree};
}

Gaussians Gaussians::to(torch::ScalarType dtype) const {
  return {means.to(dtype), opacity.to(dtype), quats.to(dtype), scales.to(dtype), sh.to(dtype),
          sh_degree};
}

Gaussians Gaussians::select(const torch::Tensor& index) const {
  return {means.index_select(0, index), opacity.index_select(0, index),
          quats.index_select(0, index),  scales.index_select(0, index),
          sh.index_select(0, index),     sh_degree};
}

Gaussians Gaussians::empty(int sh_degree, torch::ScalarType dtype) {
  auto opts = torch::TensorOptions().dtype(dtype);
  return {torch::zeros({0, 3}, opts), torch::zeros({0}, opts),
          torch::zeros({0, 4}, opts), torch::zeros({0, 2}, opts),
          torch::zeros({0, 3, sh_coeff_count(sh_degree)}, opts), sh_degree};
}

Gaussians Gaussians::concat(const std::vector<Gaussians>& parts) {
  if (parts.empty()) throw InputError("Gaussians::concat: empty list");
  std::vector<torch::Tensor> m, o, q, s, c;
  for (const auto& p : parts) {
    if (p.sh_degree != parts[0].sh_degree) {
      throw InputError("Gaussians::concat: mixed SH degrees");
    }
    m.push_back(p.means);
    o.push_back(p.opacity);
    q.push_back(p.quats);
    s.push_back(p.scales);
    c.push_back(p.sh);
  }
  return {torch::cat(m), torch::cat(o), torch::cat(q), torch::cat(s), torch::cat(c),
          parts[0].sh_degree};
}

Gaussians gaussians_to_world(const Gaussians& g, const torch::Tensor& pose_quat,
                             const torch::Tensor& pose_trans) {
  auto R = geometry::quat_to_rotation(pose_quat.reshape({4}));
  auto unit_pose = pose_quat.reshape({1, 4}) / pose_quat.norm().clamp_min(1e-12);
  Gaussians out = g;
  out.means = torch::matmul(g.means, R.transpose(0, 1)) + pose_trans.reshape({1, 3});
  out.quats = geometry::quat_multiply(unit_pose.expand_as(g.quats), g.quats);
  return out;
}

torch::Tensor eval_sh(const torch::Tensor& sh, const torch::Tensor& dirs, int degree) {
  if (degree < 0 || degree > 1) {
    throw ConfigError("eval_sh: unsupported SH degree " + std::to_string(degree));
  }
  if (sh.size(-1) < sh_coeff_count(degree)) {
    throw InputError("eval_sh: too few SH coefficients for degree");
  }
  auto rgb = kShC0 * sh.select(-1, 0);
  if (degree >= 1) {
    auto x = dirs.select(-1, 0).unsqueeze(-1);
    auto y = dirs.select(-1, 1).unsqueeze(-1);
    auto z = dirs.select(-1, 2).unsqueeze(-1);
    rgb = rgb - kShC1 * y * sh.select(-1, 1) + kShC1 * z * sh.select(-1, 2) -
          kShC1 * x * sh.select(-1, 3);
  }
  return rgb + 0.5;
}

namespace {

constexpr double kGradCheckMinCoverage = 1e-3;

struct Vec {
  double x = 0, y = 0, z = 0;
};
inline Vec operator+(Vec a, Vec b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec operator-(Vec a, Vec b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec operator*(double s, Vec a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec a, Vec b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec cross(Vec a, Vec b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline Vec& operator+=(Vec& a, Vec b) {
  a = a + b;
  return a;
}

struct Surfel {
  Vec p, tu, tv, n;
  double s1 = 1, s2 = 1, opacity = 0;
  std::array<double, 3> color{};
};

// Per-pixel ray/surfel evaluation shared by forward and backward.
struct Hit {
  double lambda = 0;  // ray parameter == camera-frame depth (ray z == 1)
  double a1 = 0, a2 = 0;
  double gauss = 0;
  double slope = 0;  // d gauss / d a_k == slope * a_k
  double num = 0, den = 0;
  Vec x;  // intersection minus center
};

// Gaussian kernel with a C1 smoothstep taper over [cutoff - taper, cutoff] so
// the weight reaches zero continuously at the cutoff radius.
struct Kernel {
  double cutoff = 3.0;
  double taper = 0.5;
  double cutoff_sq() const { return cutoff * cutoff; }
};

inline bool intersect(const Surfel& s, Vec ray, double near_plane, const Kernel& kernel, Hit& h) {
  h.num = dot(s.n, s.p);
  h.den = dot(s.n, ray);
  if (std::abs(h.den) < 1e-12) return false;
  h.lambda = h.num / h.den;
  if (!(h.lambda > near_plane)) return false;
  h.x = h.lambda * ray - s.p;
  h.a1 = dot(h.x, s.tu) / s.s1;
  h.a2 = dot(h.x, s.tv) / s.s2;
  const double r2 = h.a1 * h.a1 + h.a2 * h.a2;
  if (!(r2 < kernel.cutoff_sq())) return false;
  const double e = std::exp(-0.5 * r2);
  const double inner = kernel.cutoff - kernel.taper;
  if (kernel.taper <= 0.0 || r2 <= inner * inner) {
    h.gauss = e;
    h.slope = -e;
    return true;
  }
  const double r = std::sqrt(r2);
  const double x = (kernel.cutoff - r) / kernel.taper;
  const double w = x * x * (3.0 - 2.0 * x);
  const double dw_dr = -6.0 * x * (1.0 - x) / kernel.taper;
  h.gauss = e * w;
  h.slope = e * (-w + dw_dr / r);
  return true;
}

struct Frame {
  int width = 0, height = 0;
  double fx = 1, fy = 1;
  Vec ray(int u, int v) const {
    return {(u - 0.5 * width) / fx, (v - 0.5 * height) / fy, 1.0};
  }
};

std::vector<Surfel> load_surfels(const torch::Tensor& means, const torch::Tensor& tu,
                                 const torch::Tensor& tv, const torch::Tensor& scales,
                                 const torch::Tensor& opacity, const torch::Tensor& colors) {
  auto m = means.detach().to(torch::kDouble).contiguous();
  auto u = tu.detach().to(torch::kDouble).contiguous();
  auto v = tv.detach().to(torch::kDouble).contiguous();
  auto s = scales.detach().to(torch::kDouble).contiguous();
  auto o = opacity.detach().to(torch::kDouble).contiguous();
  auto c = colors.detach().to(torch::kDouble).contiguous();
  const auto* mp = m.data_ptr<double>();
  const auto* up = u.data_ptr<double>();
  const auto* vp = v.data_ptr<double>();
  const auto* sp = s.data_ptr<double>();
  const auto* op = o.data_ptr<double>();
  const auto* cp = c.data_ptr<double>();
  std::vector<Surfel> out(static_cast<size_t>(means.size(0)));
  for (size_t i = 0; i < out.size(); ++i) {
    Surfel& sf = out[i];
    sf.p = {mp[3 * i], mp[3 * i + 1], mp[3 * i + 2]};
    sf.tu = {up[3 * i], up[3 * i + 1], up[3 * i + 2]};
    sf.tv = {vp[3 * i], vp[3 * i + 1], vp[3 * i + 2]};
    sf.n = cross(sf.tu, sf.tv);
    sf.s1 = sp[2 * i];
    sf.s2 = sp[2 * i + 1];
    sf.opacity = op[i];
    sf.color = {cp[3 * i], cp[3 * i + 1], cp[3 * i + 2]};
  }
  return out;
}

// Screen-space bounding box of the cutoff rectangle; the whole image when any
// corner is behind the near plane.
std::array<int, 4> footprint(const Surfel& s, const Frame& f, double cutoff, double near_plane) {
  std::array<int, 4> full{0, f.width - 1, 0, f.height - 1};
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (int a : {-1, 1}) {
    for (int b : {-1, 1}) {
      const Vec c = s.p + (a * cutoff * s.s1) * s.tu + (b * cutoff * s.s2) * s.tv;
      if (!(c.z > near_plane)) return full;
      const double u = f.fx * c.x / c.z + 0.5 * f.width;
      const double v = f.fy * c.y / c.z + 0.5 * f.height;
      umin = std::min(umin, u);
      umax = std::max(umax, u);
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
  }
  const double lim = 1e7;
  umin = std::clamp(umin, -lim, lim);
  umax = std::clamp(umax, -lim, lim);
  vmin = std::clamp(vmin, -lim, lim);
  vmax = std::clamp(vmax, -lim, lim);
  return {std::max(0, static_cast<int>(std::floor(umin))),
          std::min(f.width - 1, static_cast<int>(std::ceil(umax))),
          std::max(0, static_cast<int>(std::floor(vmin))),
          std::min(f.height - 1, static_cast<int>(std::ceil(vmax)))};
}

class RasterizeFunction : public torch::autograd::Function<RasterizeFunction> {
 public:
  static variable_list forward(AutogradContext* ctx, torch::Tensor means, torch::Tensor tu,
                               torch::Tensor tv, torch::Tensor scales, torch::Tensor opacity,
                               torch::Tensor colors, torch::Tensor focal, int64_t width,
                               int64_t height, double near_plane, double cutoff_sigma,
                               double cutoff_taper, double depth_eps) {
    const auto dtype = means.scalar_type();
    auto fcl = focal.detach().to(torch::kDouble).contiguous();
    Frame frame{static_cast<int>(width), static_cast<int>(height), fcl.data_ptr<double>()[0],
                fcl.data_ptr<double>()[1]};
    const auto surfels = load_surfels(means, tu, tv, scales, opacity, colors);
    const Kernel kernel{cutoff_sigma, cutoff_taper};

    // Front-to-back by center depth, ties broken by input index.
    std::vector<int32_t> order;
    order.reserve(surfels.size());
    for (size_t i = 0; i < surfels.size(); ++i) {
      if (surfels[i].p.z > near_plane) order.push_back(static_cast<int32_t>(i));
    }
    std::stable_sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
      return surfels[static_cast<size_t>(a)].p.z < surfels[static_cast<size_t>(b)].p.z;
    });

    const size_t npix = static_cast<size_t>(width * height);
    std::vector<std::vector<int32_t>> lists(npix);
    Hit hit;
    for (int32_t idx : order) {
      const Surfel& s = surfels[static_cast<size_t>(idx)];
      if (!(s.opacity > 0.0)) continue;
      const auto box = footprint(s, frame, cutoff_sigma, near_plane);
      for (int v = box[2]; v <= box[3]; ++v) {
        for (int u = box[0]; u <= box[1]; ++u) {
          if (intersect(s, frame.ray(u, v), near_plane, kernel, hit)) {
            lists[static_cast<size_t>(v * width + u)].push_back(idx);
          }
        }
      }
    }

    auto color = torch::zeros({height, width, 3}, torch::kDouble);
    auto depth = torch::zeros({height, width}, torch::kDouble);
    auto alpha = torch::zeros({height, width}, torch::kDouble);
    auto* cp = color.data_ptr<double>();
    auto* dp = depth.data_ptr<double>();
    auto* ap = alpha.data_ptr<double>();
    std::vector<int64_t> offsets(npix + 1, 0);
    for (size_t p = 0; p < npix; ++p) offsets[p + 1] = offsets[p] + static_cast<int64_t>(lists[p].size());
    std::vector<int32_t> flat;
    flat.reserve(static_cast<size_t>(offsets.back()));
    for (int v = 0; v < height; ++v) {
      for (int u = 0; u < width; ++u) {
        const size_t pix = static_cast<size_t>(v * width + u);
        const Vec ray = frame.ray(u, v);
        double T = 1.0, acc = 0.0, dnum = 0.0;
        std::array<double, 3> c{0, 0, 0};
        for (int32_t idx : lists[pix]) {
          flat.push_back(idx);
          const Surfel& s = surfels[static_cast<size_t>(idx)];
          intersect(s, ray, near_plane, kernel, hit);
          const double a = s.opacity * hit.gauss;
          const double w = a * T;
          for (int k = 0; k < 3; ++k) c[k] += s.color[static_cast<size_t>(k)] * w;
          acc += w;
          dnum += hit.lambda * w;
          T *= (1.0 - a);
        }
        for (int k = 0; k < 3; ++k) cp[3 * pix + static_cast<size_t>(k)] = c[static_cast<size_t>(k)];
        ap[pix] = acc;
        dp[pix] = dnum / std::max(acc, depth_eps);
      }
    }

    ctx->save_for_backward({means, tu, tv, scales, opacity, colors, focal});
    ctx->saved_data["offsets"] = torch::tensor(offsets, torch::kLong);
    ctx->saved_data["flat"] = torch::tensor(flat, torch::kInt);
    ctx->saved_data["width"] = width;
    ctx->saved_data["height"] = height;
    ctx->saved_data["near"] = near_plane;
    ctx->saved_data["cutoff"] = cutoff_sigma;
    ctx->saved_data["taper"] = cutoff_taper;
    ctx->saved_data["eps"] = depth_eps;
    return {color.to(dtype), depth.to(dtype), alpha.to(dtype)};
  }

  static variable_list backward(AutogradContext* ctx, variable_list grads) {
    const auto saved = ctx->get_saved_variables();
    const auto& means = saved[0];
    const auto& tu = saved[1];
    const auto& tv = saved[2];
    const auto& scales = saved[3];
    const auto& opacity = saved[4];
    const auto& colors = saved[5];
    const auto& focal = saved[6];
    const int width = static_cast<int>(ctx->saved_data["width"].toInt());
    const int height = static_cast<int>(ctx->saved_data["height"].toInt());
    const double near_plane = ctx->saved_data["near"].toDouble();
    const Kernel kernel{ctx->saved_data["cutoff"].toDouble(),
                        ctx->saved_data["taper"].toDouble()};
    const double depth_eps = ctx->saved_data["eps"].toDouble();
    auto offsets_t = ctx->saved_data["offsets"].toTensor();
    auto flat_t = ctx->saved_data["flat"].toTensor();
    const auto* offsets = offsets_t.data_ptr<int64_t>();
    const auto* flat = flat_t.data_ptr<int32_t>();

    auto fcl = focal.detach().to(torch::kDouble).contiguous();
    Frame frame{width, height, fcl.data_ptr<double>()[0], fcl.data_ptr<double>()[1]};
    const auto surfels = load_surfels(means, tu, tv, scales, opacity, colors);
    const size_t np = surfels.size();

    auto zeros_like_d = [](const torch::Tensor& t) {
      return torch::zeros(t.sizes(), torch::kDouble);
    };
    auto g_color_in = grads[0].defined() ? grads[0].to(torch::kDouble).contiguous()
                                         : torch::zeros({height, width, 3}, torch::kDouble);
    auto g_depth_in = grads[1].defined() ? grads[1].to(torch::kDouble).contiguous()
                                         : torch::zeros({height, width}, torch::kDouble);
    auto g_alpha_in = grads[2].defined() ? grads[2].to(torch::kDouble).contiguous()
                                         : torch::zeros({height, width}, torch::kDouble);
    const auto* gC = g_color_in.data_ptr<double>();
    const auto* gD = g_depth_in.data_ptr<double>();
    const auto* gA = g_alpha_in.data_ptr<double>();

    std::vector<Vec> d_means(np), d_tu(np), d_tv(np);
    std::vector<double> d_s1(np, 0.0), d_s2(np, 0.0), d_op(np, 0.0);
    std::vector<std::array<double, 3>> d_col(np, {0, 0, 0});
    double d_fx = 0.0, d_fy = 0.0;

    struct Item {
      int32_t idx;
      Hit hit;
      double a, T;
    };
    std::vector<Item> items;
    for (int v = 0; v < height; ++v) {
      for (int u = 0; u < width; ++u) {
        const size_t pix = static_cast<size_t>(v * width + u);
        const int64_t begin = offsets[pix], end = offsets[pix + 1];
        if (begin == end) continue;
        const Vec ray = frame.ray(u, v);
        items.clear();
        double T = 1.0, acc = 0.0, dnum = 0.0;
        for (int64_t k = begin; k < end; ++k) {
          Item it;
          it.idx = flat[k];
          const Surfel& s = surfels[static_cast<size_t>(it.idx)];
          intersect(s, ray, near_plane, kernel, it.hit);
          it.a = s.opacity * it.hit.gauss;
          it.T = T;
          acc += it.a * T;
          dnum += it.hit.lambda * it.a * T;
          T *= (1.0 - it.a);
          items.push_back(it);
        }
        const double denom = std::max(acc, depth_eps);
        const double g_dnum = gD[pix] / denom;
        const double g_acc = gA[pix] + (acc > depth_eps ? -gD[pix] * dnum / (acc * acc) : 0.0);
        const double gc[3] = {gC[3 * pix], gC[3 * pix + 1], gC[3 * pix + 2]};

        Vec d_ray{0, 0, 0};
        double suffix = 0.0;
        for (auto it = items.rbegin(); it != items.rend(); ++it) {
          const auto i = static_cast<size_t>(it->idx);
          const Surfel& s = surfels[i];
          const Hit& h = it->hit;
          const double w = it->a * it->T;
          const double val = gc[0] * s.color[0] + gc[1] * s.color[1] + gc[2] * s.color[2] +
                             g_acc + g_dnum * h.lambda;
          const double d_a = it->T * (val - suffix);
          suffix = val * it->a + (1.0 - it->a) * suffix;

          for (int k = 0; k < 3; ++k) d_col[i][static_cast<size_t>(k)] += gc[k] * w;
          d_op[i] += d_a * h.gauss;
          const double d_g = d_a * s.opacity;
          const double d_a1 = h.slope * h.a1 * d_g;
          const double d_a2 = h.slope * h.a2 * d_g;
          // a1 = x.tu / s1, a2 = x.tv / s2
          const Vec d_x = (d_a1 / s.s1) * s.tu + (d_a2 / s.s2) * s.tv;
          d_tu[i] += (d_a1 / s.s1) * h.x;
          d_tv[i] += (d_a2 / s.s2) * h.x;
          d_s1[i] += -h.a1 / s.s1 * d_a1;
          d_s2[i] += -h.a2 / s.s2 * d_a2;
          // x = lambda * ray - p
          double d_lambda = dot(ray, d_x) + g_dnum * w;
          d_ray += h.lambda * d_x;
          d_means[i] += -1.0 * d_x;
          // lambda = (n.p) / (n.ray)
          const double d_num = d_lambda / h.den;
          const double d_den = -d_lambda * h.lambda / h.den;
          const Vec d_n = d_num * s.p + d_den * ray;
          d_means[i] += d_num * s.n;
          d_ray += d_den * s.n;
          // n = tu x tv
          d_tu[i] += cross(s.tv, d_n);
          d_tv[i] += cross(d_n, s.tu);
        }
        // ray = ((u - cx) / fx, (v - cy) / fy, 1)
        d_fx += -d_ray.x * (u - 0.5 * width) / (frame.fx * frame.fx);
        d_fy += -d_ray.y * (v - 0.5 * height) / (frame.fy * frame.fy);
      }
    }

    auto g_means = zeros_like_d(means), g_tu = zeros_like_d(tu), g_tv = zeros_like_d(tv);
    auto g_scales = zeros_like_d(scales), g_op = zeros_like_d(opacity),
         g_col = zeros_like_d(colors);
    auto* pm = g_means.data_ptr<double>();
    auto* pu = g_tu.data_ptr<double>();
    auto* pv = g_tv.data_ptr<double>();
    auto* ps = g_scales.data_ptr<double>();
    auto* po = g_op.data_ptr<double>();
    auto* pc = g_col.data_ptr<double>();
    for (size_t i = 0; i < np; ++i) {
      pm[3 * i] = d_means[i].x, pm[3 * i + 1] = d_means[i].y, pm[3 * i + 2] = d_means[i].z;
      pu[3 * i] = d_tu[i].x, pu[3 * i + 1] = d_tu[i].y, pu[3 * i + 2] = d_tu[i].z;
      pv[3 * i] = d_tv[i].x, pv[3 * i + 1] = d_tv[i].y, pv[3 * i + 2] = d_tv[i].z;
      ps[2 * i] = d_s1[i], ps[2 * i + 1] = d_s2[i];
      po[i] = d_op[i];
      for (size_t k = 0; k < 3; ++k) pc[3 * i + k] = d_col[i][k];
    }
    auto g_focal = torch::tensor({d_fx, d_fy}, torch::kDouble);
    const auto dt = means.scalar_type();
    return {g_means.to(dt),           g_tu.to(dt),  g_tv.to(dt),        g_scales.to(dt),
            g_op.to(dt),              g_col.to(dt), g_focal.to(focal.scalar_type()).view(focal.sizes()),
            torch::Tensor(),          torch::Tensor(), torch::Tensor(), torch::Tensor(),
            torch::Tensor(),          torch::Tensor()};
  }
};

}  // namespace

RenderOutput rasterize_camera_frame(const torch::Tensor& means_cam, const torch::Tensor& tangent_u,
                                    const torch::Tensor& tangent_v, const torch::Tensor& scales,
                                    const torch::Tensor& opacity, const torch::Tensor& colors,
                                    const torch::Tensor& focal, int width, int height,
                                    const RasterSettings& settings) {
  auto out = RasterizeFunction::apply(means_cam.contiguous(), tangent_u.contiguous(),
                                      tangent_v.contiguous(), scales.contiguous(),
                                      opacity.contiguous(), colors.contiguous(),
                                      focal.reshape({2}), width, height, settings.near_plane,
                                      settings.cutoff_sigma, settings.cutoff_taper,
                                      settings.depth_eps);
  return {out[0], out[1], out[2]};
}

RenderOutput rasterize(const Gaussians& world, const torch::Tensor& focal,
                       const torch::Tensor& pose_quat, const torch::Tensor& pose_trans,
                       int width, int height, const RasterSettings& settings) {
  if (width < 1 || height < 1) throw InputError("rasterize: empty image");
  auto R = geometry::quat_to_rotation(pose_quat.reshape({4}));  // camera-to-world
  auto t = pose_trans.reshape({1, 3});
  if (world.size() == 0) {
    auto opts = focal.options();
    return {torch::zeros({height, width, 3}, opts), torch::zeros({height, width}, opts),
            torch::zeros({height, width}, opts)};
  }
  auto means_cam = torch::matmul(world.means - t, R);
  auto Rp = geometry::quat_to_rotation(world.quats);  // [P,3,3]
  auto tu = torch::matmul(Rp.select(2, 0), R);
  auto tv = torch::matmul(Rp.select(2, 1), R);
  torch::Tensor dirs;
  if (world.sh_degree > 0) {
    auto v = world.means - t;
    dirs = v / v.norm(2, -1, true).clamp_min(1e-12);
  } else {
    dirs = torch::zeros_like(world.means);
  }
  auto colors = eval_sh(world.sh, dirs, world.sh_degree).clamp(0.0, 1.0);
  return rasterize_camera_frame(means_cam, tu, tv, world.scales, world.opacity, colors, focal,
                                width, height, settings);
}

RenderOutput rasterize(const Gaussians& world, const geometry::CameraBatch& cams, int64_t index,
                       const RasterSettings& settings) {
  return rasterize(world, cams.focal[index], cams.quat[index], cams.trans[index], cams.width,
                   cams.height, settings);
}

GradCheckResult rasterize_grad_check(const Gaussians& world_in, const geometry::Camera& camera,
                                     double fd_step, uint64_t seed) {
  const int W = camera.intrinsics.width, H = camera.intrinsics.height;
  torch::Generator gen = at::detail::createCPUGenerator(seed);
  auto weights_c = torch::rand({H, W, 3}, gen, torch::kDouble);
  auto weights_d = torch::rand({H, W}, gen, torch::kDouble) * 0.1;
  auto weights_a = torch::rand({H, W}, gen, torch::kDouble);

  Gaussians base = world_in.detach().to(torch::kDouble);
  auto focal = torch::tensor({camera.intrinsics.fx, camera.intrinsics.fy}, torch::kDouble);
  const auto& q = camera.extrinsics.q;
  const auto& t = camera.extrinsics.t;
  auto pose_q = torch::tensor({q[0], q[1], q[2], q[3]}, torch::kDouble);
  auto pose_t = torch::tensor({t[0], t[1], t[2]}, torch::kDouble);

  std::vector<std::pair<std::string, torch::Tensor>> params{
      {"means", base.means.clone()},  {"opacity", base.opacity.clone()},
      {"scales", base.scales.clone()}, {"quats", base.quats.clone()},
      {"pose_trans", pose_t.clone()},  {"pose_quat", pose_q.clone()}};

  auto loss_of = [&](const std::vector<std::pair<std::string, torch::Tensor>>& p) {
    Gaussians g = base;
    g.means = p[0].second;
    g.opacity = p[1].second;
    g.scales = p[2].second;
    g.quats = p[3].second;
    auto out = rasterize(g, focal, p[5].second, p[4].second, W, H);
    return (out.color * weights_c).sum() + (out.depth * weights_d).sum() +
           (out.alpha * weights_a).sum();
  };

  // Normalized depth steps from 0 to the surface depth while coverage passes
  // through depth_eps, far below what a finite step resolves. Only pixels
  // with real coverage contribute depth to the loss.
  {
    torch::NoGradGuard ng;
    Gaussians g = base;
    auto out = rasterize(g, focal, pose_q, pose_t, W, H);
    weights_d = weights_d * (out.alpha > kGradCheckMinCoverage).to(torch::kDouble);
  }

  for (auto& [name, tensor] : params) tensor.requires_grad_(true);
  auto loss = loss_of(params);
  loss.backward();

  GradCheckResult result;
  for (size_t gi = 0; gi < params.size(); ++gi) {
    auto analytic = params[gi].second.grad().contiguous();
    auto values = params[gi].second.detach().clone();
    double worst = 0.0;
    for (int64_t k = 0; k < values.numel(); ++k) {
      auto probe = params;
      for (auto& [n, tt] : probe) tt = tt.detach();
      auto plus = values.clone(), minus = values.clone();
      plus.view(-1)[k] += fd_step;
      minus.view(-1)[k] -= fd_step;
      probe[gi].second = plus;
      const double lp = loss_of(probe).item<double>();
      probe[gi].second = minus;
      const double lm = loss_of(probe).item<double>();
      const double fd = (lp - lm) / (2.0 * fd_step);
      const double an = analytic.view(-1)[k].item<double>();
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-2});
      worst = std::max(worst, std::abs(fd - an) / scale);
      ++result.checked;
    }
    result.per_group.emplace_back(params[gi].first, worst);
    result.max_rel_error = std::max(result.max_rel_error, worst);
  }
  return result;
}

void write_ply(const std::filesystem::path& path, const Gaussians& g) {
  std::ofstream out(path);
  if (!out) throw Error("write_ply: cannot open " + path.string());
  auto gd = g.detach().to(torch::kDouble);
  auto dc = (kShC0 * gd.sh.select(-1, 0) + 0.5).clamp(0.0, 1.0).contiguous();
  auto m = gd.means.contiguous(), o = gd.opacity.contiguous(), s = gd.scales.contiguous(),
       q = gd.quats.contiguous();
  const auto n = g.size();
  out << "ply\nformat ascii 1.0\nelement vertex " << n << "\n";
  for (const char* p : {"x", "y", "z", "opacity", "scale_0", "scale_1", "rot_0", "rot_1", "rot_2",
                        "rot_3", "red", "green", "blue"}) {
    out << "property float " << p << "\n";
  }
  out << "end_header\n";
  auto ma = m.accessor<double, 2>();
  auto oa = o.accessor<double, 1>();
  auto sa = s.accessor<double, 2>();
  auto qa = q.accessor<double, 2>();
  auto ca = dc.accessor<double, 2>();
  for (int64_t i = 0; i < n; ++i) {
    out << ma[i][0] << ' ' << ma[i][1] << ' ' << ma[i][2] << ' ' << oa[i] << ' ' << sa[i][0]
        << ' ' << sa[i][1] << ' ' << qa[i][0] << ' ' << qa[i][1] << ' ' << qa[i][2] << ' '
        << qa[i][3] << ' ' << ca[i][0] << ' ' << ca[i][1] << ' ' << ca[i][2] << '\n';
  }
}

}  // namespace posefree::splat
