#include "cli.hpp"

#include "posefree/data.hpp"
#include "posefree/error.hpp"
#include "posefree/eval.hpp"
#include "posefree/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace posefree::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;

  // gen-data / ingest
  fs::path out;
  fs::path input;
  int scenes = 4, frames = 8, width = 64, height = 64, clip_length = 30;
  std::string split = "train";

  // train
  int stage = 1;
  fs::path config;
  fs::path data;
  std::optional<fs::path> resume;
  bool from_scratch = false;
  int64_t steps = -1;
  fs::path log;

  // render / eval / interp
  fs::path ckpt;
  std::string clip;
  std::vector<int64_t> context{0, 1};
  std::string target_pose = "interp";
  std::string renderer = "latent";
  std::string protocol = "aware";
  bool refine = false;
  bool no_splat = false;
  int64_t gap = 4, stride = 2;
  std::vector<fs::path> frame_paths;
};

pipeline::ExperimentConfig load_config(const Options& o) {
  auto cfg = o.config.empty() ? pipeline::ExperimentConfig{} : pipeline::ExperimentConfig::load(o.config);
  if (o.seed_given) cfg.train.seed = o.seed;
  if (o.steps >= 0) cfg.train.steps = o.steps;
  cfg.train.stage = o.stage;
  cfg.train.validate();
  return cfg;
}

int gen_data(const Options& o, std::ostream& out) {
  data::SyntheticSpec s;
  s.scenes = o.scenes;
  s.frames_per_scene = o.frames;
  s.width = o.width;
  s.height = o.height;
  s.seed = o.seed;
  s.split = o.split;
  auto m = data::generate_synthetic(s, o.out);
  out << "wrote " << m.clips.size() << " clips to " << o.out.string() << "\n";
  return 0;
}

int ingest(const Options& o, std::ostream& out, std::ostream& err) {
  data::IngestSpec s;
  s.clip_length = o.clip_length;
  s.width = o.width;
  s.height = o.height;
  s.split = o.split;
  auto r = data::ingest_frames(o.input, o.out, s);
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  out << "wrote " << r.manifest.clips.size() << " clips to " << o.out.string() << "\n";
  return 0;
}

int train(const Options& o, std::ostream& out) {
  auto cfg = load_config(o);
  auto manifest = data::DatasetManifest::load(o.data);
  data::FrameDataset ds(manifest, cfg.model.width, cfg.model.height, "train");
  pipeline::Trainer t(cfg, ds);
  if (o.stage == 1) {
    if (o.resume) {
      t.resume(*o.resume);
      if (t.stage() != 1) throw ConfigError("--resume for stage 1 needs a stage-1 checkpoint");
    }
  } else {
    std::optional<int> resume_stage;
    if (o.resume) resume_stage = model::Checkpoint::load(*o.resume).stage;
    if (resume_stage == 2) {
      t.resume(*o.resume);
    } else {
      t.begin_stage2(o.resume, o.from_scratch);
    }
  }
  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!o.log.empty()) {
    log_file.open(o.log, std::ios::trunc);
    if (!log_file) throw Error("cannot write " + o.log.string());
    log = &log_file;
  }
  t.run(log, o.out);
  out << "stage " << t.stage() << ": " << t.step_count() << " steps, " << t.skipped_steps()
      << " skipped; checkpoint " << o.out.string() << "\n";
  return 0;
}

geometry::Camera camera_from_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InputError("cannot read " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(p.string() + ": " + e.what());
  }
  return data::camera_from_json(j);
}

int render(const Options& o, std::ostream& out) {
  int stage = 1;
  pipeline::ExperimentConfig cfg;
  auto m = pipeline::load_model(o.ckpt, &cfg, &stage);
  auto manifest = data::DatasetManifest::load(o.data);
  const auto& clip = manifest.clip(o.clip);
  std::vector<torch::Tensor> imgs;
  for (auto i : o.context) {
    if (i < 0 || i >= static_cast<int64_t>(clip.frames.size()))
      throw InputError("context frame " + std::to_string(i) + " out of range");
    imgs.push_back(data::read_png_resized(manifest.root / clip.frames[i], cfg.model.width,
                                          cfg.model.height, data::FileKind::Frame));
  }
  if (imgs.size() < 2) throw InputError("render needs at least two context frames");
  torch::NoGradGuard ng;
  auto images = torch::stack(imgs);
  auto fs_ = m->per_frame_features(images);
  auto cams = m->predict_cameras(fs_);
  auto ctx = m->predict_context(fs_);
  geometry::Camera target = o.target_pose == "interp"
                                ? geometry::average_cameras(cams.camera(0), cams.camera(1))
                                : camera_from_file(o.target_pose);
  auto tb = geometry::CameraBatch::from_cameras({target}, images.scalar_type());
  torch::Tensor img;
  if (o.renderer == "latent") {
    img = m->synthesize_view(ctx.features, cams, tb)[0];
  } else {
    if (stage != 2) throw ConfigError("the splat renderer needs a stage-2 checkpoint");
    auto world = pipeline::world_gaussians(ctx, cams);
    img = splat::rasterize(world, tb, 0).color.permute({2, 0, 1});
  }
  data::write_png(o.out, img.clamp(0.0, 1.0));
  out << data::camera_to_json(target).dump() << "\n";
  return 0;
}

int evaluate(const Options& o, std::ostream& out) {
  int stage = 1;
  auto m = pipeline::load_model(o.ckpt, nullptr, &stage);
  const bool splat_render = stage == 2 && !o.no_splat;
  if (o.refine && o.protocol != "aligned") throw ConfigError("--refine applies to --protocol aligned");
  if (o.refine && !splat_render) throw ConfigError("--refine needs a stage-2 checkpoint");
  auto manifest = data::DatasetManifest::load(o.data);
  auto cases = eval::make_cases(manifest, o.split, o.gap, o.stride);
  if (cases.empty()) throw InputError("no evaluation cases in split '" + o.split + "'");
  std::vector<eval::CaseResult> results;
  eval::RefineSettings rs;
  for (const auto& c : cases)
    results.push_back(o.protocol == "aware" ? eval::run_target_aware(m, c, splat_render)
                                            : eval::run_target_aligned(m, c, splat_render, o.refine, rs));
  auto rep = eval::build_report(o.protocol, std::move(results));
  rep.refine = rs;
  rep.write(o.out);
  auto j = rep.to_json();
  j.erase("cases");
  out << j.dump(2) << "\n";
  return 0;
}

int interp(const Options& o, std::ostream& out) {
  if (o.frame_paths.size() != 2) throw InputError("interp needs exactly two frames");
  pipeline::ExperimentConfig cfg;
  auto m = pipeline::load_model(o.ckpt, &cfg);
  std::vector<torch::Tensor> imgs;
  for (const auto& p : o.frame_paths)
    imgs.push_back(data::read_png_resized(p, cfg.model.width, cfg.model.height));
  auto p = pipeline::interpolated_inference(m, torch::stack(imgs));
  json j{{"fallback", p.fallback},
         {"cameras", {data::camera_to_json(p.cameras.camera(0)),
                      data::camera_to_json(p.cameras.camera(1))}}};
  if (!p.fallback) {
    j["middle"] = data::camera_to_json(p.middle);
    if (!o.out.empty()) data::write_png(o.out, p.middle_image.clamp(0.0, 1.0));
  }
  out << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Pose-free view synthesis: data generation, training, rendering and evaluation",
               "posefree"};
  app.require_subcommand(1);
  auto* seed = app.add_option("--seed", o.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", o.threads, "Intra-op threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset with ground truth");
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--scenes", o.scenes)->check(CLI::PositiveNumber);
  gen->add_option("--frames", o.frames)->check(CLI::Range(2, 100000));
  gen->add_option("--width", o.width)->check(CLI::PositiveNumber);
  gen->add_option("--height", o.height)->check(CLI::PositiveNumber);
  gen->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* ing = app.add_subcommand("ingest", "Turn a directory of frames into a dataset");
  ing->add_option("--input", o.input, "Frame directory")->required()->check(CLI::ExistingDirectory);
  ing->add_option("--out", o.out, "Output directory")->required();
  ing->add_option("--clip-length", o.clip_length)->check(CLI::Range(2, 100000));
  ing->add_option("--width", o.width)->check(CLI::PositiveNumber);
  ing->add_option("--height", o.height)->check(CLI::PositiveNumber);
  ing->add_option("--split", o.split)->check(CLI::IsMember({"train", "val", "test"}));

  auto* tr = app.add_subcommand("train", "Train stage 1 or stage 2");
  tr->add_option("--stage", o.stage)->required()->check(CLI::IsMember({1, 2}));
  tr->add_option("--config", o.config, "Experiment config JSON")->check(CLI::ExistingFile);
  tr->add_option("--data", o.data, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", o.out, "Checkpoint directory to write")->required();
  tr->add_option("--resume", o.resume,
                 "Checkpoint to continue from (stage 2: a stage-1 checkpoint starts stage 2)");
  tr->add_flag("--from-scratch", o.from_scratch, "Allow stage 2 without a stage-1 checkpoint");
  tr->add_option("--steps", o.steps, "Override train.steps")->check(CLI::NonNegativeNumber);
  tr->add_option("--log", o.log, "Line-delimited JSON loss log");

  auto* rd = app.add_subcommand("render", "Render a view of a clip from a checkpoint");
  rd->add_option("--ckpt", o.ckpt)->required()->check(CLI::ExistingDirectory);
  rd->add_option("--data", o.data)->required()->check(CLI::ExistingFile);
  rd->add_option("--clip", o.clip)->required();
  rd->add_option("--context", o.context, "Context frame indices")->expected(2, 16);
  rd->add_option("--target-pose", o.target_pose, "Camera JSON file or 'interp'");
  rd->add_option("--renderer", o.renderer)->check(CLI::IsMember({"latent", "splat"}));
  rd->add_option("--out", o.out, "Output PNG")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", o.ckpt)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", o.data)->required()->check(CLI::ExistingFile);
  ev->add_option("--protocol", o.protocol)->check(CLI::IsMember({"aware", "aligned"}));
  ev->add_flag("--refine", o.refine, "40-step test-pose refinement (aligned only)");
  ev->add_flag("--no-splat", o.no_splat, "Skip the splat renderer");
  ev->add_option("--split", o.split);
  ev->add_option("--gap", o.gap, "Frames between the two context frames")->check(CLI::Range(2, 100000));
  ev->add_option("--stride", o.stride)->check(CLI::PositiveNumber);
  ev->add_option("--out", o.out, "Report directory")->required();

  auto* ip = app.add_subcommand("interp", "Two-view cameras through an interpolated middle frame");
  ip->add_option("--ckpt", o.ckpt)->required()->check(CLI::ExistingDirectory);
  ip->add_option("frames", o.frame_paths, "Frame A and frame B")->required()->expected(2)
      ->check(CLI::ExistingFile);
  ip->add_option("--out", o.out, "PNG for the synthesized middle frame");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  o.seed_given = seed->count() > 0;
  at::set_num_threads(o.threads);
  torch::manual_seed(o.seed);

  try {
    if (gen->parsed()) return gen_data(o, out);
    if (ing->parsed()) return ingest(o, out, err);
    if (tr->parsed()) return train(o, out);
    if (rd->parsed()) return render(o, out);
    if (ev->parsed()) return evaluate(o, out);
    if (ip->parsed()) return interp(o, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace posefree::cli
