#include "posefree/losses.hpp"

#include "posefree/error.hpp"

#include <algorithm>

namespace posefree::losses {

namespace F = torch::nn::functional;

void LossConfig::validate() const {
  if (!(w_low > 0.0 && w_low <= 1.0)) throw ConfigError("w_low must lie in (0, 1]");
  if (lambda_perc < 0 || lambda_proj < 0 || lambda_ds < 0)
    throw ConfigError("loss weights must be non-negative");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (proj_decay_start < 0 || proj_decay_end < proj_decay_start)
    throw ConfigError("projection decay window must satisfy 0 <= start <= end");
}

json LossConfig::to_json() const {
  return {{"w_low", w_low},
          {"lambda_perc", lambda_perc},
          {"lambda_proj", lambda_proj},
          {"lambda_ds", lambda_ds},
          {"gamma", gamma},
          {"proj_decay_start", proj_decay_start},
          {"proj_decay_end", proj_decay_end}};
}

LossConfig LossConfig::from_json(const json& j) {
  LossConfig c;
  try {
    c.w_low = j.value("w_low", c.w_low);
    c.lambda_perc = j.value("lambda_perc", c.lambda_perc);
    c.lambda_proj = j.value("lambda_proj", c.lambda_proj);
    c.lambda_ds = j.value("lambda_ds", c.lambda_ds);
    c.gamma = j.value("gamma", c.gamma);
    c.proj_decay_start = j.value("proj_decay_start", c.proj_decay_start);
    c.proj_decay_end = j.value("proj_decay_end", c.proj_decay_end);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("loss config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes())
    throw InputError(std::string(what) + ": shape mismatch " + std::to_string(a.dim()) + "-d");
}

// Per-pixel gradient magnitude of [N,C,H,W] over the shared interior.
torch::Tensor grad_magnitude(const torch::Tensor& x) {
  auto dx = x.slice(3, 1) - x.slice(3, 0, -1);
  auto dy = x.slice(2, 1) - x.slice(2, 0, -1);
  dx = dx.slice(2, 0, -1);
  dy = dy.slice(3, 0, -1);
  return (dx.pow(2) + dy.pow(2) + 1e-12).sqrt();
}

}  // namespace

torch::Tensor PyramidPerceptual::per_image(const torch::Tensor& a, const torch::Tensor& b) const {
  check_same_shape(a, b, "perceptual_distance");
  auto x = a, y = b;
  torch::Tensor total = torch::zeros({a.size(0)}, a.options());
  int used = 0;
  for (int l = 0; l < levels_; ++l) {
    if (l > 0) {
      if (x.size(2) < 4 || x.size(3) < 4) break;
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2));
    }
    auto term = (x - y).pow(2).mean({1, 2, 3});
    if (x.size(2) > 1 && x.size(3) > 1)
      term = term + (grad_magnitude(x) - grad_magnitude(y)).pow(2).mean({1, 2, 3});
    total = total + term;
    ++used;
  }
  return total / used;
}

const PerceptualDistance& default_perceptual() {
  static const PyramidPerceptual backend(3);
  return backend;
}

torch::Tensor perceptual_distance(const torch::Tensor& a, const torch::Tensor& b,
                                  const PerceptualDistance& backend) {
  auto a4 = a.dim() == 3 ? a.unsqueeze(0) : a;
  auto b4 = b.dim() == 3 ? b.unsqueeze(0) : b;
  check_same_shape(a4, b4, "perceptual_distance");
  return backend.per_image(a4, b4).mean();
}

torch::Tensor render_loss(const torch::Tensor& pred, const torch::Tensor& gt,
                          const std::vector<bool>& is_context, const LossConfig& cfg,
                          const PerceptualDistance& backend) {
  check_same_shape(pred, gt, "render_loss");
  const auto N = pred.size(0);
  if (static_cast<int64_t>(is_context.size()) != N)
    throw ContractViolation("render_loss: context mask size differs from frame count");
  if (std::all_of(is_context.begin(), is_context.end(), [](bool b) { return b; }))
    throw ContractViolation("render_loss: every frame is a context frame");
  std::vector<double> w(N);
  for (int64_t i = 0; i < N; ++i) w[i] = is_context[i] ? cfg.w_low : 1.0;
  auto weights = torch::tensor(w, pred.options());
  auto per = (pred - gt).pow(2).mean({1, 2, 3});
  if (cfg.lambda_perc > 0.0) per = per + cfg.lambda_perc * backend.per_image(pred, gt);
  return (weights * per).sum() / weights.sum();
}

ProjectionLoss projection_loss(const torch::Tensor& depth_i, const torch::Tensor& image_i,
                               const torch::Tensor& image_j, const geometry::CameraBatch& cam_i,
                               const geometry::CameraBatch& cam_j, const torch::Tensor& mask_i) {
  check_same_shape(image_i, image_j, "projection_loss");
  const auto H = depth_i.size(0), W = depth_i.size(1);
  if (image_i.size(1) != H || image_i.size(2) != W)
    throw InputError("projection_loss: depth/image resolution mismatch");
  auto points = geometry::back_project(depth_i.unsqueeze(0), cam_i);  // [1,H,W,3]
  auto proj = geometry::project(points, cam_j);
  auto sampled = geometry::bilinear_sample(image_j.unsqueeze(0), proj.uv);
  auto valid = (proj.valid & sampled.valid)[0];
  if (mask_i.defined()) valid = valid & mask_i.to(torch::kBool);
  auto vf = valid.to(image_i.dtype());
  ProjectionLoss out;
  out.valid_pixels = valid.sum().item<int64_t>();
  const auto diff2 = (sampled.values[0] - image_i).pow(2) * vf.unsqueeze(0);
  if (out.valid_pixels == 0) {
    out.all_invalid = true;
    out.value = diff2.sum() * 0.0;
    return out;
  }
  out.value = diff2.sum() / static_cast<double>(3 * out.valid_pixels);
  return out;
}

torch::Tensor smoothness_loss(const torch::Tensor& depth, const torch::Tensor& image,
                              double gamma) {
  if (image.size(1) != depth.size(0) || image.size(2) != depth.size(1))
    throw InputError("smoothness_loss: depth/image resolution mismatch");
  auto zero = depth.sum() * 0.0;
  auto term_x = zero, term_y = zero;
  if (depth.size(1) > 1) {
    auto dd = (depth.slice(1, 1) - depth.slice(1, 0, -1)).abs();
    auto di = (image.slice(2, 1) - image.slice(2, 0, -1)).abs().sum(0);
    term_x = (dd * torch::exp(-gamma * di)).mean();
  }
  if (depth.size(0) > 1) {
    auto dd = (depth.slice(0, 1) - depth.slice(0, 0, -1)).abs();
    auto di = (image.slice(1, 1) - image.slice(1, 0, -1)).abs().sum(0);
    term_y = (dd * torch::exp(-gamma * di)).mean();
  }
  return term_x + term_y;
}

double lambda_proj_at(const LossConfig& cfg, int64_t step) {
  if (step <= cfg.proj_decay_start) return cfg.lambda_proj;
  if (step >= cfg.proj_decay_end) return 0.0;
  const double frac = static_cast<double>(step - cfg.proj_decay_start) /
                      static_cast<double>(cfg.proj_decay_end - cfg.proj_decay_start);
  return cfg.lambda_proj * (1.0 - frac);
}

json LossReport::to_json() const {
  return {{"step", step},         {"stage", stage},   {"latent_render", latent_render},
          {"gs_render", gs_render}, {"proj", proj},     {"smooth", smooth},
          {"lambda_proj", lambda_proj}, {"total", total}, {"skipped", skipped}};
}

namespace {

double scalar(const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; }

}  // namespace

WeightedLoss stage1_total(const torch::Tensor& latent_render, int64_t step) {
  WeightedLoss out;
  out.total = latent_render;
  out.report.step = step;
  out.report.stage = 1;
  out.report.latent_render = scalar(latent_render);
  out.report.total = out.report.latent_render;
  return out;
}

WeightedLoss stage2_total(const LossComponents& c, int64_t step, const LossConfig& cfg) {
  const double lp = lambda_proj_at(cfg, step);
  torch::Tensor total;
  auto add = [&](const torch::Tensor& t, double w) {
    if (!t.defined() || w == 0.0) return;
    auto term = w == 1.0 ? t : t * w;
    total = total.defined() ? total + term : term;
  };
  add(c.latent_render, 1.0);
  add(c.gs_render, 1.0);
  add(c.proj, lp);
  add(c.smooth, cfg.lambda_ds);
  WeightedLoss out;
  out.total = total.defined() ? total : torch::zeros({});
  auto& r = out.report;
  r.step = step;
  r.stage = 2;
  r.latent_render = scalar(c.latent_render);
  r.gs_render = scalar(c.gs_render);
  r.proj = scalar(c.proj);
  r.smooth = scalar(c.smooth);
  r.lambda_proj = lp;
  r.total = scalar(out.total);
  return out;
}

}  // namespace posefree::losses
