#pragma once

// Datasets on disk: PNG frames, per-clip ground-truth camera JSON and depth,
// and a manifest tying them together. Training code only ever sees
// FrameDataset; ground truth is reachable through GroundTruthStore alone.

#include "posefree/geometry.hpp"

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace posefree::data {

namespace fs = std::filesystem;
using nlohmann::json;

enum class FileKind { Frame, GtCamera, GtDepth, Other };

// Records every dataset file opened through this module.
class AccessLog {
 public:
  static AccessLog& instance();
  void record(const fs::path& path, FileKind kind);
  int64_t count(FileKind kind) const;
  void clear();

 private:
  mutable std::mutex mu_;
  std::vector<std::pair<std::string, FileKind>> entries_;
};

// 8-bit PNG <-> float [3,H,W] in [0,1].
torch::Tensor read_png(const fs::path& path, FileKind kind = FileKind::Other);
void write_png(const fs::path& path, const torch::Tensor& image);
// Center crop to the target aspect ratio, then area-resample.
torch::Tensor read_png_resized(const fs::path& path, int width, int height,
                               FileKind kind = FileKind::Frame);

// Raw little-endian float32 depth maps with a small header (H, W as int32).
void write_depth(const fs::path& path, const torch::Tensor& depth);
torch::Tensor read_depth(const fs::path& path);

// {fx, fy, width, height, q:[w,x,y,z], t:[x,y,z]} per frame, camera-to-world.
json camera_to_json(const geometry::Camera& c);
geometry::Camera camera_from_json(const json& j);
void write_cameras(const fs::path& path, const std::vector<geometry::Camera>& cams);
std::vector<geometry::Camera> read_cameras(const fs::path& path);

struct ClipEntry {
  std::string id;
  std::vector<std::string> frames;  // relative to the manifest directory
  std::string gt_cameras;           // empty when unavailable
  std::vector<std::string> gt_depth;
  int width = 0;
  int height = 0;
  std::string split = "train";
};

struct DatasetManifest {
  std::vector<ClipEntry> clips;
  fs::path root;  // directory holding the manifest

  void save(const fs::path& path) const;
  static DatasetManifest load(const fs::path& path);
  std::vector<const ClipEntry*> split(const std::string& name) const;
  const ClipEntry& clip(const std::string& id) const;
};

// Frame-only view of a dataset; images cached after first load.
class FrameDataset {
 public:
  FrameDataset(const DatasetManifest& manifest, int width, int height,
               const std::string& split = "train");
  size_t clips() const { return clips_.size(); }
  int64_t length(size_t clip) const;
  const std::string& clip_id(size_t clip) const { return clips_[clip].id; }
  // Frames [N,3,H,W] in the requested order.
  torch::Tensor frames(size_t clip, const std::vector<int64_t>& indices);

 private:
  struct Clip {
    std::string id;
    std::vector<fs::path> paths;
    std::vector<torch::Tensor> cache;
  };
  std::vector<Clip> clips_;
  int width_, height_;
};

// Ground-truth cameras and depth for evaluation and oracle tests.
class GroundTruthStore {
 public:
  explicit GroundTruthStore(const DatasetManifest& manifest) : manifest_(manifest) {}
  std::vector<geometry::Camera> cameras(const std::string& clip_id) const;
  torch::Tensor depth(const std::string& clip_id, int64_t frame) const;

 private:
  DatasetManifest manifest_;
};

struct SyntheticSpec {
  int scenes = 4;
  int frames_per_scene = 8;
  int width = 64;
  int height = 64;
  uint64_t seed = 0;
  std::string split = "train";
  double min_coverage = 0.3;
};

// Room-shell scenes of textured rectangles seen along a smooth trajectory.
struct SyntheticScene {
  struct Rect {
    geometry::Vec3 center, axis_u, axis_v;  // unit in-plane axes
    double half_u = 1.0, half_v = 1.0;
    // Texture: per channel base + sum of plane waves.
    std::array<double, 3> base{};
    std::vector<std::array<double, 6>> waves;  // ku, kv, phase, amp_r, amp_g, amp_b
  };
  std::vector<Rect> rects;
  std::vector<geometry::Camera> cameras;

  static SyntheticScene random(uint64_t seed, int frames, int width, int height);

  struct View {
    torch::Tensor image;     // [3,H,W] double
    torch::Tensor depth;     // [H,W] double, 0 where nothing is hit
    double coverage = 0.0;   // fraction of pixels on a textured surface
  };
  View render(const geometry::Camera& camera) const;
};

// Writes frames, GT cameras/depth and manifest.json under `out`. Returns the
// manifest. Throws Error when a scene keeps failing the coverage check.
DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out);

struct IngestSpec {
  int clip_length = 30;
  int width = 64;
  int height = 64;
  std::string split = "train";
};

struct IngestResult {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

// Sorted frames in `input` (png/jpg) are chunked into clips of clip_length,
// normalized and written under `out`. A RealEstate10K camera file named
// cameras.txt next to the frames is converted to GT cameras.
IngestResult ingest_frames(const fs::path& input, const fs::path& out, const IngestSpec& spec);

// RealEstate10K camera text: a URL line, then per frame
// "timestamp fx fy cx cy k1 k2 r00 r01 r02 t0 r10 ... t2" with normalized
// intrinsics and a world-to-camera matrix.
struct RealEstateFrame {
  int64_t timestamp = 0;
  double fx = 0, fy = 0, cx = 0.5, cy = 0.5;
  std::array<double, 12> w2c{};
};
struct RealEstateFile {
  std::string url;
  std::vector<RealEstateFrame> frames;
};
RealEstateFile parse_realestate(const std::string& text);
std::string format_realestate(const RealEstateFile& f);
// Camera for a frame of size orig_w x orig_h after the ingest center crop and
// resize to width x height. The principal point is taken as the image center.
geometry::Camera realestate_camera(const RealEstateFrame& f, int orig_w, int orig_h, int width,
                                   int height);

}  // namespace posefree::data
