#include "posefree/eval.hpp"

#include "posefree/error.hpp"
#include "posefree/losses.hpp"
#include "posefree/pipeline.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace posefree::eval {

namespace F = torch::nn::functional;
using geometry::CameraBatch;
using geometry::Mat3;
using geometry::Vec3;

namespace {

void check_pair(const torch::Tensor& pred, const torch::Tensor& gt, const char* what) {
  if (pred.dim() != 3 || pred.size(0) != 3 || pred.sizes() != gt.sizes())
    throw InputError(std::string(what) + ": expected two [3,H,W] images of equal size");
}

torch::Tensor gaussian_window() {
  auto x = torch::arange(-5, 6, torch::kDouble);
  auto g = torch::exp(-x * x / (2.0 * 1.5 * 1.5));
  g = g / g.sum();
  return torch::outer(g, g);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

double psnr(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_pair(pred, gt, "psnr");
  const double mse = (pred.to(torch::kDouble) - gt.to(torch::kDouble)).pow(2).mean().item<double>();
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_pair(pred, gt, "ssim");
  if (pred.size(1) < 11 || pred.size(2) < 11) throw InputError("ssim: images smaller than 11x11");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  auto w = gaussian_window().view({1, 1, 11, 11}).repeat({3, 1, 1, 1});
  auto x = pred.to(torch::kDouble).unsqueeze(0), y = gt.to(torch::kDouble).unsqueeze(0);
  auto filt = [&](const torch::Tensor& t) {
    return F::conv2d(t, w, F::Conv2dFuncOptions().groups(3));
  };
  auto mx = filt(x), my = filt(y);
  auto sxx = filt(x * x) - mx * mx, syy = filt(y * y) - my * my, sxy = filt(x * y) - mx * my;
  auto map = ((2 * mx * my + C1) * (2 * sxy + C2)) / ((mx * mx + my * my + C1) * (sxx + syy + C2));
  return map.mean().item<double>();
}

ImageMetrics image_metrics(const torch::Tensor& pred, const torch::Tensor& gt) {
  check_pair(pred, gt, "image_metrics");
  ImageMetrics m;
  m.psnr = psnr(pred, gt);
  m.ssim = ssim(pred, gt);
  torch::NoGradGuard ng;
  m.perceptual = losses::perceptual_distance(pred.unsqueeze(0).to(torch::kDouble),
                                             gt.unsqueeze(0).to(torch::kDouble))
                     .item<double>();
  return m;
}

PoseError relative_pose_errors(const Camera& pred_a, const Camera& pred_b, const Camera& gt_a,
                               const Camera& gt_b) {
  auto rel = [](const Camera& a, const Camera& b) {
    const Mat3 Ra = a.extrinsics.rotation(), Rb = b.extrinsics.rotation();
    return std::pair<Mat3, Vec3>(Rb.transpose() * Ra,
                                 Rb.transpose() * (a.extrinsics.t - b.extrinsics.t));
  };
  const auto [Rp, tp] = rel(pred_a, pred_b);
  const auto [Rg, tg] = rel(gt_a, gt_b);
  PoseError e;
  e.rotation_deg = geometry::rotation_angle_deg(Rp * Rg.transpose());
  const bool dp = tp.norm() < 1e-8, dg = tg.norm() < 1e-8;
  if (dp && dg) {
    e.translation_deg = 0.0;
  } else if (dp || dg) {
    e.translation_deg = 90.0;
  } else {
    const double c = std::clamp(tp.normalized().dot(tg.normalized()), -1.0, 1.0);
    // atan2 keeps precision near 0 and 180 degrees.
    const double s = tp.normalized().cross(tg.normalized()).norm();
    e.translation_deg = std::atan2(s, c) * 180.0 / M_PI;
  }
  return e;
}

PoseSummary summarize(const std::vector<PoseError>& errors) {
  PoseSummary s;
  s.pairs = static_cast<int64_t>(errors.size());
  if (errors.empty()) return s;
  std::vector<double> r, t;
  for (const auto& e : errors) {
    r.push_back(e.rotation_deg);
    t.push_back(e.translation_deg);
    s.rra5 += e.rotation_deg < 5.0;
    s.rra15 += e.rotation_deg < 15.0;
    s.rta5 += e.translation_deg < 5.0;
    s.rta15 += e.translation_deg < 15.0;
  }
  const double scale = 100.0 / static_cast<double>(errors.size());
  s.rra5 *= scale;
  s.rra15 *= scale;
  s.rta5 *= scale;
  s.rta15 *= scale;
  s.median_rotation_deg = median(r);
  s.median_translation_deg = median(t);
  return s;
}

Alignment align_target_pose(const Camera& gt_a, const Camera& gt_b, const Camera& gt_test,
                            const Camera& pred_a, const Camera& pred_b) {
  const Mat3 M = pred_a.extrinsics.rotation() * gt_a.extrinsics.rotation().transpose() +
                 pred_b.extrinsics.rotation() * gt_b.extrinsics.rotation().transpose();
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 R = svd.matrixU() * D * svd.matrixV().transpose();

  Alignment out;
  const double gt_base = (gt_b.extrinsics.t - gt_a.extrinsics.t).norm();
  if (gt_base < 1e-8) {
    out.degenerate = true;
    out.scale = 1.0;
  } else {
    out.scale = (pred_b.extrinsics.t - pred_a.extrinsics.t).norm() / gt_base;
  }
  const Vec3 t = pred_a.extrinsics.t - out.scale * R * gt_a.extrinsics.t;
  out.test.extrinsics = geometry::Extrinsics::from_rotation(
      R * gt_test.extrinsics.rotation(), out.scale * R * gt_test.extrinsics.t + t);
  out.test.intrinsics = pred_a.intrinsics;
  out.test.intrinsics.width = gt_test.intrinsics.width;
  out.test.intrinsics.height = gt_test.intrinsics.height;
  return out;
}

namespace {

torch::Tensor render_loss_at(const splat::Gaussians& world, const torch::Tensor& focal,
                             const torch::Tensor& q, const torch::Tensor& t,
                             const torch::Tensor& image) {
  const int H = static_cast<int>(image.size(1)), W = static_cast<int>(image.size(2));
  auto r = splat::rasterize(world, focal, q, t, W, H);
  auto pred = r.color.permute({2, 0, 1}).unsqueeze(0);
  return losses::render_loss(pred, image.unsqueeze(0).to(pred.dtype()), {false},
                             losses::LossConfig{});
}

torch::Tensor focal_of(const Camera& c, torch::ScalarType dt) {
  return torch::tensor({c.intrinsics.fx, c.intrinsics.fy}, torch::kDouble).to(dt);
}

torch::Tensor vec_tensor(const Eigen::VectorXd& v, torch::ScalarType dt) {
  return torch::from_blob(const_cast<double*>(v.data()), {v.size()}, torch::kDouble).clone().to(dt);
}

}  // namespace

double splat_render_loss(const splat::Gaussians& world, const Camera& pose,
                         const torch::Tensor& image) {
  torch::NoGradGuard ng;
  const auto dt = world.means.scalar_type();
  return render_loss_at(world, focal_of(pose, dt), vec_tensor(pose.extrinsics.q, dt),
                        vec_tensor(pose.extrinsics.t, dt), image)
      .item<double>();
}

RefineResult refine_test_pose(const splat::Gaussians& world_in, const torch::Tensor& image,
                              const Camera& init, const RefineSettings& settings) {
  const auto world = world_in.detach();
  const auto dt = world.means.scalar_type();
  const auto focal = focal_of(init, dt);
  const auto q0 = vec_tensor(geometry::normalize_quat(init.extrinsics.q), dt);
  const auto t0 = vec_tensor(init.extrinsics.t, dt);
  auto omega = torch::zeros({3}, dt).requires_grad_(true);
  auto dtrans = torch::zeros({3}, dt).requires_grad_(true);
  torch::optim::Adam opt({omega, dtrans}, torch::optim::AdamOptions(settings.lr));
  auto pose = [&]() {
    auto inc = torch::cat({torch::ones({1}, dt), omega * 0.5});
    inc = inc / inc.norm();
    return std::pair(geometry::quat_multiply(q0.unsqueeze(0), inc.unsqueeze(0))[0], t0 + dtrans);
  };
  RefineResult res;
  res.initial_loss = splat_render_loss(world, init, image);
  for (int s = 0; s < settings.steps; ++s) {
    opt.zero_grad();
    auto [q, t] = pose();
    auto loss = render_loss_at(world, focal, q, t, image);
    loss.backward();
    opt.step();
    ++res.steps;
  }
  torch::NoGradGuard ng;
  auto [q, t] = pose();
  auto qd = q.to(torch::kDouble).contiguous(), td = t.to(torch::kDouble).contiguous();
  Camera refined = init;
  refined.extrinsics.q =
      geometry::normalize_quat(geometry::Vec4(qd[0].item<double>(), qd[1].item<double>(),
                                              qd[2].item<double>(), qd[3].item<double>()));
  refined.extrinsics.t = Vec3(td[0].item<double>(), td[1].item<double>(), td[2].item<double>());
  const double final_loss = splat_render_loss(world, refined, image);
  if (!(final_loss <= res.initial_loss)) {
    res.pose = init;
    res.final_loss = res.initial_loss;
    res.fell_back = true;
  } else {
    res.pose = refined;
    res.final_loss = final_loss;
  }
  return res;
}

std::vector<EvalCase> make_cases(const data::DatasetManifest& manifest, const std::string& split,
                                 int64_t gap, int64_t stride) {
  if (gap < 2) throw InputError("make_cases: gap must be at least 2");
  if (stride < 1) throw InputError("make_cases: stride must be positive");
  data::GroundTruthStore gt(manifest);
  std::vector<EvalCase> out;
  for (const auto* clip : manifest.split(split)) {
    const auto cams = gt.cameras(clip->id);
    const auto n = static_cast<int64_t>(clip->frames.size());
    for (int64_t a = 0; a + gap < n; a += stride) {
      EvalCase c;
      c.clip = clip->id;
      c.a = a;
      c.b = a + gap;
      c.test = a + gap / 2;
      std::vector<torch::Tensor> img;
      for (auto f : {c.a, c.b, c.test}) {
        img.push_back(data::read_png_resized(manifest.root / clip->frames[f], clip->width,
                                             clip->height, data::FileKind::Frame));
        c.gt.push_back(cams.at(static_cast<size_t>(f)));
      }
      c.images = torch::stack(img);
      out.push_back(std::move(c));
    }
  }
  return out;
}

namespace {

CaseResult blank_result(const EvalCase& c) {
  CaseResult r;
  r.clip = c.clip;
  r.a = c.a;
  r.b = c.b;
  r.test = c.test;
  return r;
}

}  // namespace

CaseResult run_target_aware(model::PoseFreeModel& m, const EvalCase& c, bool splat_render) {
  torch::NoGradGuard ng;
  m->eval();
  auto r = blank_result(c);
  // Temporal order a, test, b for the joint camera transformer.
  auto three = torch::stack({c.images[0], c.images[2], c.images[1]});
  auto fs = m->per_frame_features(three);
  auto cams = m->predict_cameras(fs);
  auto ctx = m->predict_context(fs.index_select(0, torch::tensor({0L, 2L})));
  auto ctx_cams = cams.select({0, 2});
  auto target = cams.select({1});
  r.pose = relative_pose_errors(cams.camera(0), cams.camera(2), c.gt[0], c.gt[1]);
  r.gt_image = c.images[2];
  r.latent_image = m->synthesize_view(ctx.features, ctx_cams, target)[0];
  r.latent = image_metrics(r.latent_image, c.images[2]);
  if (splat_render) {
    auto world = pipeline::world_gaussians(ctx, ctx_cams);
    r.splat_image = splat::rasterize(world, target, 0).color.permute({2, 0, 1});
    r.splat = image_metrics(r.splat_image, c.images[2]);
    r.has_splat = true;
  }
  return r;
}

CaseResult run_target_aligned(model::PoseFreeModel& m, const EvalCase& c, bool splat_render,
                              bool refine, const RefineSettings& settings) {
  m->eval();
  if (refine && !splat_render) throw ConfigError("refinement needs the splat renderer");
  auto r = blank_result(c);
  auto pred = pipeline::two_view_inference(m, c.images.slice(0, 0, 2));
  const auto pa = pred.cameras.camera(0), pb = pred.cameras.camera(1);
  r.pose = relative_pose_errors(pa, pb, c.gt[0], c.gt[1]);
  auto test_cam = align_target_pose(c.gt[0], c.gt[1], c.gt[2], pa, pb).test;
  splat::Gaussians world;
  if (splat_render) {
    torch::NoGradGuard ng;
    world = pipeline::world_gaussians(pred.context, pred.cameras);
  }
  if (refine) {
    auto rr = refine_test_pose(world, c.images[2], test_cam, settings);
    test_cam = rr.pose;
    r.refined = true;
    r.refine_steps = rr.steps;
    r.fell_back = rr.fell_back;
  }
  torch::NoGradGuard ng;
  auto target = CameraBatch::from_cameras({test_cam}, c.images.scalar_type());
  r.gt_image = c.images[2];
  r.latent_image = m->synthesize_view(pred.context.features, pred.cameras, target)[0];
  r.latent = image_metrics(r.latent_image, c.images[2]);
  if (splat_render) {
    r.splat_image = splat::rasterize(world, target, 0).color.permute({2, 0, 1});
    r.splat = image_metrics(r.splat_image, c.images[2]);
    r.has_splat = true;
  }
  return r;
}

EvalReport build_report(const std::string& protocol, std::vector<CaseResult> cases) {
  EvalReport rep;
  rep.protocol = protocol;
  std::vector<PoseError> errs;
  for (const auto& c : cases) {
    errs.push_back(c.pose);
    rep.latent.psnr += c.latent.psnr;
    rep.latent.ssim += c.latent.ssim;
    rep.latent.perceptual += c.latent.perceptual;
    if (c.has_splat) {
      rep.has_splat = true;
      rep.splat.psnr += c.splat.psnr;
      rep.splat.ssim += c.splat.ssim;
      rep.splat.perceptual += c.splat.perceptual;
    }
    rep.refined = rep.refined || c.refined;
  }
  if (!cases.empty()) {
    const double n = static_cast<double>(cases.size());
    for (auto* m : {&rep.latent, &rep.splat}) {
      m->psnr /= n;
      m->ssim /= n;
      m->perceptual /= n;
    }
  }
  rep.pose = summarize(errs);
  rep.cases = std::move(cases);
  return rep;
}

namespace {

json metrics_json(const ImageMetrics& m) {
  return {{"psnr", m.psnr}, {"ssim", m.ssim}, {"perceptual", m.perceptual}};
}

}  // namespace

json EvalReport::to_json() const {
  json cs = json::array();
  for (const auto& c : cases) {
    json j{{"clip", c.clip},
           {"frames", {c.a, c.b, c.test}},
           {"rotation_error_deg", c.pose.rotation_deg},
           {"translation_error_deg", c.pose.translation_deg},
           {"latent", metrics_json(c.latent)}};
    if (c.has_splat) j["splat"] = metrics_json(c.splat);
    if (c.refined) {
      j["refine_steps"] = c.refine_steps;
      j["refine_fell_back"] = c.fell_back;
    }
    cs.push_back(j);
  }
  json j{{"protocol", protocol},
         {"cases", cs},
         {"pose",
          {{"pairs", pose.pairs},
           {"rra5", pose.rra5},
           {"rra15", pose.rra15},
           {"rta5", pose.rta5},
           {"rta15", pose.rta15},
           {"median_rotation_deg", pose.median_rotation_deg},
           {"median_translation_deg", pose.median_translation_deg}}},
         {"latent", metrics_json(latent)}};
  if (has_splat) j["splat"] = metrics_json(splat);
  if (refined)
    j["refinement"] = {{"optimizer", "adam"}, {"steps", refine.steps}, {"lr", refine.lr},
                       {"parameterization", "quaternion increment + translation (6 dof)"}};
  return j;
}

void EvalReport::write(const std::filesystem::path& dir, int grid_cases) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json", std::ios::trunc);
    out << to_json().dump(2) << "\n";
    if (!out) throw Error("cannot write " + (dir / "report.json").string());
  }
  {
    std::ofstream csv(dir / "pose_errors.csv", std::ios::trunc);
    csv << "clip,frame_a,frame_b,rotation_error_deg,translation_error_deg\n";
    for (const auto& c : cases)
      csv << c.clip << "," << c.a << "," << c.b << "," << c.pose.rotation_deg << ","
          << c.pose.translation_deg << "\n";
    if (!csv) throw Error("cannot write " + (dir / "pose_errors.csv").string());
  }
  std::vector<torch::Tensor> rows;
  for (const auto& c : cases) {
    if (static_cast<int>(rows.size()) >= grid_cases) break;
    if (!c.latent_image.defined()) continue;
    auto splat_col = c.splat_image.defined() ? c.splat_image : torch::zeros_like(c.latent_image);
    rows.push_back(torch::cat({c.gt_image.to(c.latent_image.dtype()), c.latent_image, splat_col}, 2));
  }
  if (!rows.empty()) data::write_png(dir / "grid.png", torch::cat(rows, 1).clamp(0.0, 1.0));
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (size_t i = 0; i < idx.size();) {
      size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j);
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace posefree::eval
