#pragma once

// Episode sampling, the two training stages and full-model inference.

#include "posefree/data.hpp"
#include "posefree/losses.hpp"
#include "posefree/model.hpp"
#include "posefree/splat.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

namespace posefree::pipeline {

using nlohmann::json;

struct TrainConfig {
  int stage = 1;
  int64_t steps = 2000;
  double lr = 3e-4;
  double weight_decay = 0.05;
  double warmup_frac = 0.02;
  double min_lr_frac = 0.05;
  double grad_clip = 1.0;
  int n_max = 4;
  uint64_t seed = 0;
  int64_t ckpt_every = 0;  // 0: only at the end
  // Pixels of a rendered depth map enter the depth losses when their
  // accumulated opacity exceeds this.
  double depth_alpha_threshold = 0.5;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct ExperimentConfig {
  static constexpr int kSchemaVersion = 1;
  model::ModelConfig model = model::ModelConfig::toy();
  losses::LossConfig loss;
  TrainConfig train;

  json to_json() const;
  static ExperimentConfig from_json(const json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct Episode {
  size_t clip = 0;
  std::vector<int64_t> frames;   // video frame indices, in presentation order
  std::vector<int64_t> context;  // positions into `frames`, ascending
  std::vector<int64_t> partner;  // per position: projection partner != self
  uint64_t seed = 0;

  int64_t size() const { return static_cast<int64_t>(frames.size()); }
  std::vector<bool> context_mask() const;
};

// N ~ U{2..n_max} (truncated to the clip length), a contiguous window from a
// uniformly chosen clip, shuffled, and |context| ~ U{1..N-1}.
Episode sample_episode(const std::vector<int64_t>& clip_lengths, int n_max, std::mt19937_64& rng);

// Throws ContractViolation unless context is a nonempty strict subset.
void check_strict_subset(const Episode& e);

struct ForwardOutput {
  torch::Tensor frame_features;  // F^s [N,C,H,W]
  geometry::CameraBatch cameras;   // all N frames
  model::ContextOutput context;    // context frames only
  torch::Tensor latent;            // [N,3,H,W] latent renders at each frame's camera
  // Stage 2 only.
  splat::Gaussians world;
  torch::Tensor splat_color;  // [N,3,H,W]
  torch::Tensor splat_depth;  // [N,H,W]
  torch::Tensor splat_alpha;  // [N,H,W]
};

// images [N,3,H,W]; `context` holds positions into the clip.
ForwardOutput forward(model::PoseFreeModel& m, const torch::Tensor& images,
                      const std::vector<int64_t>& context, int stage);

// World-frame primitives of every context frame, concatenated.
splat::Gaussians world_gaussians(const model::ContextOutput& ctx,
                                 const geometry::CameraBatch& context_cams);

// Splat-renders every camera of `cams`.
void render_all(const splat::Gaussians& world, const geometry::CameraBatch& cams,
                torch::Tensor& color, torch::Tensor& depth, torch::Tensor& alpha);

// Objective for one episode; images in episode order.
losses::WeightedLoss episode_loss(const ForwardOutput& out, const torch::Tensor& images,
                                  const Episode& e, int stage, int64_t step,
                                  const ExperimentConfig& cfg);

// Cosine decay with linear warmup.
double learning_rate(const TrainConfig& cfg, int64_t step);

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, data::FrameDataset& dataset);

  // Stage 2 normally starts from a stage-1 checkpoint; otherwise
  // `from_scratch` must be set. Throws ConfigError on refusal.
  void begin_stage2(const std::optional<std::filesystem::path>& stage1_ckpt, bool from_scratch);
  // Restores model, optimizer and step from a checkpoint of the same stage.
  void resume(const std::filesystem::path& ckpt);
  void save(const std::filesystem::path& ckpt) const;

  losses::LossReport train_step(const Episode& e);
  // Samples the next episode from the trainer's RNG and trains on it.
  losses::LossReport step();
  // Runs until cfg.train.steps, writing one JSON line per step to `log`.
  void run(std::ostream* log, const std::optional<std::filesystem::path>& ckpt_path = {});

  model::PoseFreeModel& model() { return model_; }
  int64_t step_count() const { return step_; }
  int stage() const { return stage_; }
  const ExperimentConfig& config() const { return cfg_; }
  int64_t skipped_steps() const { return skipped_; }

 private:
  void make_optimizer();
  ExperimentConfig cfg_;
  data::FrameDataset& data_;
  model::PoseFreeModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> opt_;
  std::mt19937_64 rng_;
  std::vector<int64_t> lengths_;
  int64_t step_ = 0;
  int64_t skipped_ = 0;
  int stage_ = 1;
};

// Loads a model (and its config) from a checkpoint directory.
model::PoseFreeModel load_model(const std::filesystem::path& ckpt, ExperimentConfig* cfg = nullptr,
                                int* stage = nullptr);

struct FramePredictions {
  geometry::CameraBatch cameras;  // one per returned frame
  model::ContextOutput context;
  bool fallback = false;  // set when the interpolation step was skipped
  geometry::Camera middle;         // averaged camera used for the middle frame
  torch::Tensor middle_image;      // [3,H,W]
};

// Two-view prediction through a synthesized middle frame. images [2,3,H,W].
FramePredictions interpolated_inference(model::PoseFreeModel& m, const torch::Tensor& images);
// Plain two-view prediction: cameras from both frames, both frames as context.
FramePredictions two_view_inference(model::PoseFreeModel& m, const torch::Tensor& images);

}  // namespace posefree::pipeline
