#include "posefree/pipeline.hpp"

#include "posefree/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace posefree::pipeline {

using geometry::CameraBatch;

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("train.stage must be 1 or 2");
  if (steps < 0) throw ConfigError("train.steps must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (warmup_frac < 0.0 || warmup_frac > 1.0) throw ConfigError("train.warmup_frac must be in [0,1]");
  if (min_lr_frac < 0.0 || min_lr_frac > 1.0) throw ConfigError("train.min_lr_frac must be in [0,1]");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (n_max < 2) throw ConfigError("train.n_max must be at least 2");
  if (ckpt_every < 0) throw ConfigError("train.ckpt_every must be non-negative");
}

json ExperimentConfig::to_json() const {
  const auto& t = train;
  return {{"schema_version", kSchemaVersion},
          {"model", model.to_json()},
          {"loss", loss.to_json()},
          {"train",
           {{"stage", t.stage},
            {"steps", t.steps},
            {"lr", t.lr},
            {"weight_decay", t.weight_decay},
            {"warmup_frac", t.warmup_frac},
            {"min_lr_frac", t.min_lr_frac},
            {"grad_clip", t.grad_clip},
            {"n_max", t.n_max},
            {"seed", t.seed},
            {"ckpt_every", t.ckpt_every},
            {"depth_alpha_threshold", t.depth_alpha_threshold}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    const int version = j.value("schema_version", kSchemaVersion);
    if (version != kSchemaVersion)
      throw ConfigError("unsupported config schema_version " + std::to_string(version));
    if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
    if (j.contains("loss")) c.loss = losses::LossConfig::from_json(j.at("loss"));
    if (j.contains("train")) {
      const auto& t = j.at("train");
      auto& o = c.train;
      o.stage = t.value("stage", o.stage);
      o.steps = t.value("steps", o.steps);
      o.lr = t.value("lr", o.lr);
      o.weight_decay = t.value("weight_decay", o.weight_decay);
      o.warmup_frac = t.value("warmup_frac", o.warmup_frac);
      o.min_lr_frac = t.value("min_lr_frac", o.min_lr_frac);
      o.grad_clip = t.value("grad_clip", o.grad_clip);
      o.n_max = t.value("n_max", o.n_max);
      o.seed = t.value("seed", o.seed);
      o.ckpt_every = t.value("ckpt_every", o.ckpt_every);
      o.depth_alpha_threshold = t.value("depth_alpha_threshold", o.depth_alpha_threshold);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.train.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  out << to_json().dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<bool> Episode::context_mask() const {
  std::vector<bool> m(frames.size(), false);
  for (auto c : context) m[static_cast<size_t>(c)] = true;
  return m;
}

namespace {

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

}  // namespace

Episode sample_episode(const std::vector<int64_t>& lengths, int n_max, std::mt19937_64& rng) {
  if (lengths.empty()) throw InputError("sample_episode: empty dataset");
  Episode e;
  e.seed = rng();
  e.clip = static_cast<size_t>(uniform_int(rng, 0, static_cast<int64_t>(lengths.size()) - 1));
  const int64_t len = lengths[e.clip];
  if (len < 2) throw InputError("sample_episode: clip shorter than 2 frames");
  const int64_t n = std::min<int64_t>(uniform_int(rng, 2, n_max), len);
  const int64_t start = uniform_int(rng, 0, len - n);
  e.frames.resize(n);
  std::iota(e.frames.begin(), e.frames.end(), start);
  std::shuffle(e.frames.begin(), e.frames.end(), rng);

  const int64_t k = uniform_int(rng, 1, n - 1);
  std::vector<int64_t> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  std::shuffle(pos.begin(), pos.end(), rng);
  e.context.assign(pos.begin(), pos.begin() + k);
  std::sort(e.context.begin(), e.context.end());

  e.partner.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    int64_t j = uniform_int(rng, 0, n - 2);
    e.partner[i] = j >= i ? j + 1 : j;
  }
  return e;
}

void check_strict_subset(const Episode& e) {
  if (e.context.empty()) throw ContractViolation("episode has an empty context set");
  if (static_cast<int64_t>(e.context.size()) >= e.size())
    throw ContractViolation("episode context is not a strict subset of its frames");
  std::vector<bool> seen(e.frames.size(), false);
  for (auto c : e.context) {
    if (c < 0 || c >= e.size() || seen[c]) throw ContractViolation("episode context index invalid");
    seen[c] = true;
  }
}

splat::Gaussians world_gaussians(const model::ContextOutput& ctx, const CameraBatch& cams) {
  std::vector<splat::Gaussians> parts;
  for (int64_t m = 0; m < ctx.primitives.frames(); ++m) {
    auto g = model::camera_frame_gaussians(ctx.primitives, m, cams.focal[m]);
    parts.push_back(splat::gaussians_to_world(g, cams.quat[m], cams.trans[m]));
  }
  return splat::Gaussians::concat(parts);
}

void render_all(const splat::Gaussians& world, const CameraBatch& cams, torch::Tensor& color,
                torch::Tensor& depth, torch::Tensor& alpha) {
  std::vector<torch::Tensor> c, d, a;
  for (int64_t n = 0; n < cams.size(); ++n) {
    auto r = splat::rasterize(world, cams, n);
    c.push_back(r.color.permute({2, 0, 1}));
    d.push_back(r.depth);
    a.push_back(r.alpha);
  }
  color = torch::stack(c);
  depth = torch::stack(d);
  alpha = torch::stack(a);
}

ForwardOutput forward(model::PoseFreeModel& m, const torch::Tensor& images,
                      const std::vector<int64_t>& context, int stage) {
  if (context.empty()) throw InputError("forward: empty context set");
  ForwardOutput out;
  out.frame_features = m->per_frame_features(images);
  out.cameras = m->predict_cameras(out.frame_features);
  auto idx = torch::tensor(context, torch::kLong);
  out.context = m->predict_context(out.frame_features.index_select(0, idx));
  auto ctx_cams = out.cameras.select(context);
  out.latent = m->synthesize_view(out.context.features, ctx_cams, out.cameras);
  if (stage == 2) {
    out.world = world_gaussians(out.context, ctx_cams);
    render_all(out.world, out.cameras, out.splat_color, out.splat_depth, out.splat_alpha);
  }
  return out;
}

namespace {

// Depth divided by its mean so the smoothness term does not reward shrinking
// the scene.
torch::Tensor mean_normalized(const torch::Tensor& d) { return d / d.mean().clamp_min(1e-6); }

}  // namespace

losses::WeightedLoss episode_loss(const ForwardOutput& out, const torch::Tensor& images,
                                  const Episode& e, int stage, int64_t step,
                                  const ExperimentConfig& cfg) {
  const auto mask = e.context_mask();
  auto latent = losses::latent_render_loss(out.latent, images, mask, cfg.loss);
  if (stage == 1) return losses::stage1_total(latent, step);

  losses::LossComponents c;
  c.latent_render = latent;
  c.gs_render = losses::gs_render_loss(out.splat_color, images, mask, cfg.loss);

  const int64_t n = e.size();
  auto cam = [&](int64_t i) { return out.cameras.select({i}); };
  torch::Tensor proj_pred = torch::zeros({}, images.options());
  torch::Tensor smooth_pred = torch::zeros({}, images.options());
  for (size_t k = 0; k < e.context.size(); ++k) {
    const int64_t i = e.context[k], j = e.partner[i];
    auto d = out.context.primitives.depth[static_cast<int64_t>(k)];
    proj_pred = proj_pred + losses::projection_loss(d, images[i], images[j], cam(i), cam(j)).value;
    smooth_pred = smooth_pred + losses::smoothness_loss(mean_normalized(d), images[i], cfg.loss.gamma);
  }
  const double kc = static_cast<double>(e.context.size());
  torch::Tensor proj_rend = torch::zeros({}, images.options());
  torch::Tensor smooth_rend = torch::zeros({}, images.options());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t j = e.partner[i];
    auto d = out.splat_depth[i];
    auto covered = out.splat_alpha[i].detach() > cfg.train.depth_alpha_threshold;
    proj_rend = proj_rend +
                losses::projection_loss(d, images[i], images[j], cam(i), cam(j), covered).value;
    smooth_rend = smooth_rend + losses::smoothness_loss(mean_normalized(d), images[i], cfg.loss.gamma);
  }
  c.proj = proj_pred / kc + proj_rend / static_cast<double>(n);
  c.smooth = smooth_pred / kc + smooth_rend / static_cast<double>(n);
  return losses::stage2_total(c, step, cfg.loss);
}

double learning_rate(const TrainConfig& cfg, int64_t step) {
  const auto warm = std::max<int64_t>(1, std::llround(cfg.warmup_frac * cfg.steps));
  if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double span = std::max<int64_t>(1, cfg.steps - warm);
  const double p = std::min(1.0, static_cast<double>(step - warm) / span);
  const double floor = cfg.min_lr_frac * cfg.lr;
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

// ---------------------------------------------------------------------------

Trainer::Trainer(const ExperimentConfig& cfg, data::FrameDataset& dataset)
    : cfg_(cfg), data_(dataset), rng_(cfg.train.seed ^ 0x5851F42D4C957F2Dull) {
  cfg_.train.validate();
  torch::manual_seed(cfg_.train.seed);
  model_ = model::PoseFreeModel(cfg_.model);
  for (size_t c = 0; c < data_.clips(); ++c) lengths_.push_back(data_.length(c));
  stage_ = 1;
  make_optimizer();
}

void Trainer::make_optimizer() {
  opt_ = std::make_unique<torch::optim::AdamW>(
      model_->parameters(),
      torch::optim::AdamWOptions(cfg_.train.lr).weight_decay(cfg_.train.weight_decay));
}

void Trainer::begin_stage2(const std::optional<std::filesystem::path>& stage1_ckpt,
                           bool from_scratch) {
  if (stage1_ckpt) {
    auto ck = model::Checkpoint::load(*stage1_ckpt);
    if (ck.stage != 1)
      throw ConfigError("stage 2 must start from a stage-1 checkpoint, got stage " +
                        std::to_string(ck.stage));
    model::load_model_arrays(*model_, ck);
  } else if (!from_scratch) {
    throw ConfigError("stage 2 needs a stage-1 checkpoint (--resume); pass --from-scratch to "
                      "train stage 2 from random weights");
  } else {
    std::cerr << "warning: training stage 2 from scratch without latent pretraining\n";
  }
  torch::manual_seed(cfg_.train.seed + 1);
  model_->reset_gaussian_head();
  stage_ = 2;
  cfg_.train.stage = 2;
  step_ = 0;
  skipped_ = 0;
  make_optimizer();
}

namespace {

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

}  // namespace

void Trainer::save(const std::filesystem::path& path) const {
  model::Checkpoint ck;
  auto exp = cfg_;
  exp.train.stage = stage_;
  ck.config = {{"experiment", exp.to_json()}, {"rng_state", rng_state(rng_)},
               {"skipped_steps", skipped_}};
  ck.stage = stage_;
  ck.step = step_;
  auto m = model_;
  model::append_model_arrays(*m, ck);
  for (auto& [name, p] : model::named_parameters(*m)) {
    auto it = opt_->state().find(p.unsafeGetTensorImpl());
    if (it == opt_->state().end()) continue;
    auto& st = static_cast<torch::optim::AdamWParamState&>(*it->second);
    ck.arrays.emplace_back("optim." + name + ".exp_avg", st.exp_avg());
    ck.arrays.emplace_back("optim." + name + ".exp_avg_sq", st.exp_avg_sq());
    ck.arrays.emplace_back("optim." + name + ".step",
                           torch::full({1}, static_cast<float>(st.step())));
  }
  ck.save(path);
}

void Trainer::resume(const std::filesystem::path& path) {
  auto ck = model::Checkpoint::load(path);
  model::load_model_arrays(*model_, ck);
  stage_ = ck.stage;
  cfg_.train.stage = ck.stage;
  step_ = ck.step;
  skipped_ = ck.config.value("skipped_steps", int64_t{0});
  make_optimizer();
  for (auto& [name, p] : model::named_parameters(*model_)) {
    const auto* m1 = ck.find("optim." + name + ".exp_avg");
    const auto* m2 = ck.find("optim." + name + ".exp_avg_sq");
    const auto* st = ck.find("optim." + name + ".step");
    if (!m1 || !m2 || !st) continue;
    auto s = std::make_unique<torch::optim::AdamWParamState>();
    s->step(static_cast<int64_t>(st->item<float>()));
    s->exp_avg(m1->clone().to(p.dtype()));
    s->exp_avg_sq(m2->clone().to(p.dtype()));
    opt_->state()[p.unsafeGetTensorImpl()] = std::move(s);
  }
  if (ck.config.contains("rng_state")) {
    std::istringstream s(ck.config["rng_state"].get<std::string>());
    s >> rng_;
  }
}

losses::LossReport Trainer::train_step(const Episode& e) {
  check_strict_subset(e);
  auto images = data_.frames(e.clip, e.frames);
  model_->train();
  const double lr = learning_rate(cfg_.train, step_);
  for (auto& g : opt_->param_groups())
    static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
  opt_->zero_grad();
  auto out = forward(model_, images, e.context, stage_);
  auto loss = episode_loss(out, images, e, stage_, step_, cfg_);
  auto report = loss.report;
  if (!std::isfinite(report.total)) {
    std::cerr << "anomaly: non-finite loss at step " << step_ << "; step skipped\n";
    opt_->zero_grad();
    report.skipped = true;
    ++skipped_;
    ++step_;
    return report;
  }
  loss.total.backward();
  torch::nn::utils::clip_grad_norm_(model_->parameters(), cfg_.train.grad_clip);
  opt_->step();
  ++step_;
  return report;
}

losses::LossReport Trainer::step() {
  auto e = sample_episode(lengths_, cfg_.train.n_max, rng_);
  return train_step(e);
}

void Trainer::run(std::ostream* log, const std::optional<std::filesystem::path>& ckpt_path) {
  while (step_ < cfg_.train.steps) {
    auto r = step();
    if (log) *log << r.to_json().dump() << "\n";
    if (ckpt_path && cfg_.train.ckpt_every > 0 && step_ % cfg_.train.ckpt_every == 0)
      save(*ckpt_path);
  }
  if (log) log->flush();
  if (ckpt_path) save(*ckpt_path);
}

model::PoseFreeModel load_model(const std::filesystem::path& path, ExperimentConfig* cfg_out,
                                int* stage) {
  auto ck = model::Checkpoint::load(path);
  auto cfg = ExperimentConfig::from_json(ck.config.at("experiment"));
  model::PoseFreeModel m(cfg.model);
  model::load_model_arrays(*m, ck);
  m->eval();
  if (cfg_out) *cfg_out = cfg;
  if (stage) *stage = ck.stage;
  return m;
}

// ---------------------------------------------------------------------------

FramePredictions two_view_inference(model::PoseFreeModel& m, const torch::Tensor& images) {
  if (images.size(0) != 2) throw InputError("two-view inference needs exactly 2 frames");
  torch::NoGradGuard ng;
  FramePredictions p;
  auto fs = m->per_frame_features(images);
  p.cameras = m->predict_cameras(fs);
  p.context = m->predict_context(fs);
  return p;
}

FramePredictions interpolated_inference(model::PoseFreeModel& m, const torch::Tensor& images) {
  if (images.size(0) != 2) throw InputError("interpolated inference needs exactly 2 frames");
  torch::NoGradGuard ng;
  auto fs = m->per_frame_features(images);
  auto cams = m->predict_cameras(fs);
  geometry::Camera mid;
  try {
    mid = geometry::average_cameras(cams.camera(0), cams.camera(1));
  } catch (const DegenerateError&) {
    auto p = two_view_inference(m, images);
    p.fallback = true;
    return p;
  }
  auto ctx = m->predict_context(fs);
  auto mid_batch = CameraBatch::from_cameras({mid}, images.scalar_type());
  auto mid_img = m->synthesize_view(ctx.features, cams, mid_batch)[0];

  auto three = torch::stack({images[0], mid_img, images[1]});
  auto fs3 = m->per_frame_features(three);
  auto cams3 = m->predict_cameras(fs3);
  FramePredictions p;
  p.cameras = cams3.select({0, 2});
  p.context = m->predict_context(fs3.index_select(0, torch::tensor({0L, 2L})));
  p.middle = mid;
  p.middle_image = mid_img;
  return p;
}

}  // namespace posefree::pipeline
