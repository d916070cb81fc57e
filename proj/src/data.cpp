#include "posefree/data.hpp"

#include "posefree/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace posefree::data {

using geometry::Camera;
using geometry::Mat3;
using geometry::Vec3;

AccessLog& AccessLog::instance() {
  static AccessLog log;
  return log;
}

void AccessLog::record(const fs::path& path, FileKind kind) {
  std::lock_guard lock(mu_);
  entries_.emplace_back(path.string(), kind);
}

int64_t AccessLog::count(FileKind kind) const {
  std::lock_guard lock(mu_);
  return std::count_if(entries_.begin(), entries_.end(),
                       [kind](const auto& e) { return e.second == kind; });
}

void AccessLog::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, 1.0 / 255.0);
  auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).contiguous();
}

cv::Mat load_bgr(const fs::path& path, FileKind kind) {
  AccessLog::instance().record(path, kind);
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw InputError("cannot read image " + path.string());
  return img;
}

cv::Mat center_crop_resize(const cv::Mat& img, int width, int height) {
  const double target = static_cast<double>(width) / height;
  int cw = img.cols, ch = img.rows;
  if (static_cast<double>(cw) / ch > target)
    cw = static_cast<int>(std::lround(ch * target));
  else
    ch = static_cast<int>(std::lround(cw / target));
  cv::Mat crop = img(cv::Rect((img.cols - cw) / 2, (img.rows - ch) / 2, cw, ch));
  if (cw == width && ch == height) return crop.clone();
  cv::Mat out;
  cv::resize(crop, out, cv::Size(width, height), 0, 0,
             cw > width ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

}  // namespace

torch::Tensor read_png(const fs::path& path, FileKind kind) {
  return mat_to_tensor(load_bgr(path, kind));
}

torch::Tensor read_png_resized(const fs::path& path, int width, int height, FileKind kind) {
  return mat_to_tensor(center_crop_resize(load_bgr(path, kind), width, height));
}

void write_png(const fs::path& path, const torch::Tensor& image) {
  auto t = image.detach().to(torch::kCPU, torch::kDouble).clamp(0.0, 1.0);
  if (t.dim() != 3 || t.size(0) != 3) throw InputError("write_png: expected [3,H,W]");
  auto u8 = (t * 255.0 + 0.5).floor().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write " + path.string());
}

void write_depth(const fs::path& path, const torch::Tensor& depth) {
  auto d = depth.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const int32_t hw[2] = {static_cast<int32_t>(d.size(0)), static_cast<int32_t>(d.size(1))};
  out.write("PFD1", 4);
  out.write(reinterpret_cast<const char*>(hw), sizeof(hw));
  out.write(reinterpret_cast<const char*>(d.data_ptr<float>()),
            static_cast<std::streamsize>(d.numel() * sizeof(float)));
}

torch::Tensor read_depth(const fs::path& path) {
  AccessLog::instance().record(path, FileKind::GtDepth);
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  int32_t hw[2];
  if (!in.read(magic, 4) || std::string(magic, 4) != "PFD1" ||
      !in.read(reinterpret_cast<char*>(hw), sizeof(hw)) || hw[0] <= 0 || hw[1] <= 0)
    throw InputError("bad depth file " + path.string());
  auto d = torch::empty({hw[0], hw[1]}, torch::kFloat32);
  if (!in.read(reinterpret_cast<char*>(d.data_ptr<float>()),
               static_cast<std::streamsize>(d.numel() * sizeof(float))))
    throw InputError("truncated depth file " + path.string());
  return d;
}

json camera_to_json(const Camera& c) {
  const auto& q = c.extrinsics.q;
  const auto& t = c.extrinsics.t;
  return {{"fx", c.intrinsics.fx},         {"fy", c.intrinsics.fy},
          {"width", c.intrinsics.width},   {"height", c.intrinsics.height},
          {"q", {q[0], q[1], q[2], q[3]}}, {"t", {t[0], t[1], t[2]}}};
}

Camera camera_from_json(const json& j) {
  try {
    Camera c;
    c.intrinsics = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("width").get<int>(),
                    j.at("height").get<int>()};
    c.intrinsics.validate();
    auto q = j.at("q").get<std::vector<double>>();
    auto t = j.at("t").get<std::vector<double>>();
    if (q.size() != 4 || t.size() != 3) throw InputError("camera: q needs 4 values, t needs 3");
    c.extrinsics.q = geometry::Vec4(q[0], q[1], q[2], q[3]);
    c.extrinsics.t = Vec3(t[0], t[1], t[2]);
    return c;
  } catch (const json::exception& e) {
    throw InputError(std::string("camera json: ") + e.what());
  }
}

void write_cameras(const fs::path& path, const std::vector<Camera>& cams) {
  json frames = json::array();
  for (const auto& c : cams) frames.push_back(camera_to_json(c));
  std::ofstream out(path, std::ios::trunc);
  out << json{{"frames", frames}}.dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

std::vector<Camera> read_cameras(const fs::path& path) {
  AccessLog::instance().record(path, FileKind::GtCamera);
  std::ifstream in(path);
  if (!in) throw InputError("cannot read cameras " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError("camera file " + path.string() + ": " + e.what());
  }
  std::vector<Camera> out;
  for (const auto& f : j.at("frames")) out.push_back(camera_from_json(f));
  return out;
}

void DatasetManifest::save(const fs::path& path) const {
  json clips_j = json::array();
  for (const auto& c : clips)
    clips_j.push_back({{"id", c.id},
                       {"frames", c.frames},
                       {"gt_cameras", c.gt_cameras},
                       {"gt_depth", c.gt_depth},
                       {"width", c.width},
                       {"height", c.height},
                       {"split", c.split}});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << json{{"schema_version", 1}, {"clips", clips_j}}.dump(2) << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    json j;
    in >> j;
    for (const auto& c : j.at("clips")) {
      ClipEntry e;
      e.id = c.at("id").get<std::string>();
      e.frames = c.at("frames").get<std::vector<std::string>>();
      e.gt_cameras = c.value("gt_cameras", "");
      e.gt_depth = c.value("gt_depth", std::vector<std::string>{});
      e.width = c.value("width", 0);
      e.height = c.value("height", 0);
      e.split = c.value("split", "train");
      m.clips.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw InputError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

std::vector<const ClipEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ClipEntry*> out;
  for (const auto& c : clips)
    if (c.split == name) out.push_back(&c);
  return out;
}

const ClipEntry& DatasetManifest::clip(const std::string& id) const {
  for (const auto& c : clips)
    if (c.id == id) return c;
  throw InputError("no clip '" + id + "' in manifest");
}

FrameDataset::FrameDataset(const DatasetManifest& manifest, int width, int height,
                           const std::string& split)
    : width_(width), height_(height) {
  for (const auto* c : manifest.split(split)) {
    if (c->frames.size() < 2) continue;
    Clip clip;
    clip.id = c->id;
    for (const auto& f : c->frames) clip.paths.push_back(manifest.root / f);
    clip.cache.resize(clip.paths.size());
    clips_.push_back(std::move(clip));
  }
  if (clips_.empty()) throw InputError("dataset split '" + split + "' has no usable clips");
}

int64_t FrameDataset::length(size_t clip) const {
  return static_cast<int64_t>(clips_.at(clip).paths.size());
}

torch::Tensor FrameDataset::frames(size_t clip, const std::vector<int64_t>& indices) {
  auto& c = clips_.at(clip);
  std::vector<torch::Tensor> out;
  for (auto i : indices) {
    auto& slot = c.cache.at(static_cast<size_t>(i));
    if (!slot.defined()) slot = read_png_resized(c.paths[i], width_, height_, FileKind::Frame);
    out.push_back(slot);
  }
  return torch::stack(out);
}

std::vector<Camera> GroundTruthStore::cameras(const std::string& clip_id) const {
  const auto& c = manifest_.clip(clip_id);
  if (c.gt_cameras.empty()) throw InputError("clip '" + clip_id + "' has no GT cameras");
  return read_cameras(manifest_.root / c.gt_cameras);
}

torch::Tensor GroundTruthStore::depth(const std::string& clip_id, int64_t frame) const {
  const auto& c = manifest_.clip(clip_id);
  if (frame < 0 || frame >= static_cast<int64_t>(c.gt_depth.size()))
    throw InputError("clip '" + clip_id + "' has no GT depth for frame " + std::to_string(frame));
  return read_depth(manifest_.root / c.gt_depth[frame]);
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Mat3 yaw_pitch(double yaw, double pitch) {
  // Camera looks along +z with y down; yaw about world y, pitch about camera x.
  Mat3 ry, rx;
  ry << std::cos(yaw), 0, std::sin(yaw), 0, 1, 0, -std::sin(yaw), 0, std::cos(yaw);
  rx << 1, 0, 0, 0, std::cos(pitch), -std::sin(pitch), 0, std::sin(pitch), std::cos(pitch);
  return ry * rx;
}

SyntheticScene::Rect make_rect(std::mt19937_64& rng, const Vec3& center, const Vec3& u,
                               const Vec3& v, double hu, double hv, double kmax) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  SyntheticScene::Rect r;
  r.center = center;
  r.axis_u = u.normalized();
  r.axis_v = v.normalized();
  r.half_u = hu;
  r.half_v = hv;
  for (auto& b : r.base) b = 0.25 + 0.5 * U(rng);
  for (int k = 0; k < 4; ++k) {
    const double mag = (0.3 + 0.7 * U(rng)) * kmax, ang = 2.0 * std::numbers::pi * U(rng);
    r.waves.push_back({mag * std::cos(ang), mag * std::sin(ang), 2.0 * std::numbers::pi * U(rng),
                       0.3 * (U(rng) - 0.5), 0.3 * (U(rng) - 0.5), 0.3 * (U(rng) - 0.5)});
  }
  return r;
}

}  // namespace

SyntheticScene SyntheticScene::random(uint64_t seed, int frames, int width, int height) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(rng); };
  SyntheticScene s;

  // Room shell (no ceiling): floor, back, left, right and front walls.
  const Vec3 ex(1, 0, 0), ey(0, 1, 0), ez(0, 0, 1);
  const double floor_y = uni(0.9, 1.3), back_z = uni(5.0, 6.5), side = uni(3.0, 4.0);
  s.rects.push_back(make_rect(rng, {0, floor_y, 1.5}, ex, ez, side, 5.5, 4.0));
  s.rects.push_back(make_rect(rng, {0, floor_y - 2.0, back_z}, ex, ey, side, 2.0, 3.0));
  s.rects.push_back(make_rect(rng, {-side, floor_y - 2.0, 1.5}, ez, ey, 5.5, 2.0, 3.0));
  s.rects.push_back(make_rect(rng, {side, floor_y - 2.0, 1.5}, ez, ey, 5.5, 2.0, 3.0));
  s.rects.push_back(make_rect(rng, {0, floor_y - 2.0, -3.5}, ex, ey, side, 2.0, 3.0));

  // Free-standing boards in front of the start position.
  const int boards = 2 + static_cast<int>(U(rng) * 3);
  for (int b = 0; b < boards; ++b) {
    const Vec3 c(uni(-1.8, 1.8), uni(-0.6, 0.5), uni(2.0, 4.2));
    const Mat3 tilt = yaw_pitch(uni(-35, 35) * kDeg, uni(-20, 20) * kDeg);
    s.rects.push_back(
        make_rect(rng, c, tilt * ex, tilt * ey, uni(0.3, 0.8), uni(0.25, 0.6), 6.0));
  }

  // Smooth trajectory: drift plus a slow sinusoidal sway.
  const double f = width * uni(0.75, 0.95);
  const Vec3 p0(uni(-0.5, 0.5), uni(-0.3, 0.1), uni(-0.6, 0.2));
  const double heading = uni(-40, 40) * kDeg, speed = uni(0.04, 0.09);
  const Vec3 vel(speed * std::sin(heading), uni(-0.01, 0.01), speed * std::cos(heading));
  const double yaw0 = uni(-15, 15) * kDeg, yaw_rate = uni(-2.0, 2.0) * kDeg;
  const double pitch0 = uni(-6, 6) * kDeg, sway = uni(0.0, 0.05), sway_freq = uni(0.2, 0.5);
  for (int k = 0; k < frames; ++k) {
    Camera c;
    c.intrinsics = {f, f, width, height};
    const Vec3 p = p0 + k * vel + Vec3(sway * std::sin(sway_freq * k), 0, 0);
    const double pitch = pitch0 + 1.5 * kDeg * std::sin(0.3 * k);
    c.extrinsics = geometry::Extrinsics::from_rotation(yaw_pitch(yaw0 + yaw_rate * k, pitch), p);
    s.cameras.push_back(c);
  }
  return s;
}

SyntheticScene::View SyntheticScene::render(const Camera& camera) const {
  const int W = camera.intrinsics.width, H = camera.intrinsics.height;
  const Mat3 R = camera.extrinsics.rotation();
  const Vec3 o = camera.extrinsics.t;
  View v;
  v.image = torch::zeros({3, H, W}, torch::kDouble);
  v.depth = torch::zeros({H, W}, torch::kDouble);
  auto img = v.image.accessor<double, 3>();
  auto dep = v.depth.accessor<double, 2>();
  int64_t hits = 0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Vec3 dc((x - camera.intrinsics.cx()) / camera.intrinsics.fx,
                    (y - camera.intrinsics.cy()) / camera.intrinsics.fy, 1.0);
      const Vec3 d = R * dc;
      double best = 1e300;
      const Rect* hit = nullptr;
      double hs = 0, ht = 0;
      for (const auto& r : rects) {
        const Vec3 n = r.axis_u.cross(r.axis_v);
        const double denom = n.dot(d);
        if (std::abs(denom) < 1e-12) continue;
        const double lam = n.dot(r.center - o) / denom;
        if (lam <= 1e-6 || lam >= best) continue;
        const Vec3 p = o + lam * d - r.center;
        const double su = p.dot(r.axis_u), sv = p.dot(r.axis_v);
        if (std::abs(su) > r.half_u || std::abs(sv) > r.half_v) continue;
        best = lam;
        hit = &r;
        hs = su;
        ht = sv;
      }
      if (!hit) {
        for (int ch = 0; ch < 3; ++ch) img[ch][y][x] = 0.55;  // untextured sky
        continue;
      }
      ++hits;
      dep[y][x] = best;  // ray z-component is 1, so lambda is the z-depth
      for (int ch = 0; ch < 3; ++ch) {
        double val = hit->base[ch];
        for (const auto& w : hit->waves) val += w[3 + ch] * std::sin(w[0] * hs + w[1] * ht + w[2]);
        img[ch][y][x] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  v.coverage = static_cast<double>(hits) / (static_cast<double>(W) * H);
  return v;
}

namespace {

std::string frame_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d", k);
  return buf;
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSpec& spec, const fs::path& out) {
  if (spec.scenes < 1 || spec.frames_per_scene < 2 || spec.width < 1 || spec.height < 1)
    throw ConfigError("gen-data: need >= 1 scene, >= 2 frames and a positive resolution");
  fs::create_directories(out);
  DatasetManifest m;
  m.root = out;
  std::mt19937_64 seeder(spec.seed);
  for (int s = 0; s < spec.scenes; ++s) {
    const uint64_t scene_seed = seeder();
    std::vector<SyntheticScene::View> views;
    SyntheticScene scene;
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
      scene = SyntheticScene::random(scene_seed + 0x9E3779B97F4A7C15ull * attempt,
                                     spec.frames_per_scene, spec.width, spec.height);
      views.clear();
      ok = true;
      for (const auto& cam : scene.cameras) {
        views.push_back(scene.render(cam));
        if (views.back().coverage < spec.min_coverage) {
          ok = false;
          break;
        }
      }
    }
    if (!ok)
      throw Error("gen-data: scene " + std::to_string(s) +
                  " failed the texture coverage check after 10 attempts");
    ClipEntry e;
    e.id = spec.split + "_" + frame_name(s);
    e.width = spec.width;
    e.height = spec.height;
    e.split = spec.split;
    const fs::path dir = out / e.id;
    fs::create_directories(dir);
    for (int k = 0; k < spec.frames_per_scene; ++k) {
      const std::string img = e.id + "/" + frame_name(k) + ".png";
      const std::string dep = e.id + "/depth_" + frame_name(k) + ".bin";
      write_png(out / img, views[k].image);
      write_depth(out / dep, views[k].depth);
      e.frames.push_back(img);
      e.gt_depth.push_back(dep);
    }
    e.gt_cameras = e.id + "/cameras.json";
    write_cameras(out / e.gt_cameras, scene.cameras);
    m.clips.push_back(std::move(e));
  }
  m.save(out / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// Ingestion and RealEstate10K cameras
// ---------------------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

RealEstateFile parse_realestate(const std::string& text) {
  std::istringstream in(text);
  RealEstateFile f;
  if (!std::getline(in, f.url)) throw InputError("realestate: empty camera file");
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    RealEstateFrame fr;
    double k1 = 0, k2 = 0;
    ls >> fr.timestamp >> fr.fx >> fr.fy >> fr.cx >> fr.cy >> k1 >> k2;
    for (auto& v : fr.w2c) ls >> v;
    if (!ls) throw InputError("realestate: malformed line " + std::to_string(lineno));
    f.frames.push_back(fr);
  }
  return f;
}

std::string format_realestate(const RealEstateFile& f) {
  std::string out = f.url + "\n";
  for (const auto& fr : f.frames) {
    out += std::to_string(fr.timestamp);
    for (double v : {fr.fx, fr.fy, fr.cx, fr.cy}) out += " " + fmt_double(v);
    out += " 0 0";
    for (double v : fr.w2c) out += " " + fmt_double(v);
    out += "\n";
  }
  return out;
}

Camera realestate_camera(const RealEstateFrame& f, int orig_w, int orig_h, int width, int height) {
  const double target = static_cast<double>(width) / height;
  double cw = orig_w;
  if (static_cast<double>(orig_w) / orig_h > target) cw = std::round(orig_h * target);
  const double scale = width / cw;
  Camera c;
  c.intrinsics = {f.fx * orig_w * scale, f.fy * orig_h * scale, width, height};
  Mat3 R;
  Vec3 t;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) R(r, k) = f.w2c[4 * r + k];
    t[r] = f.w2c[4 * r + 3];
  }
  c.extrinsics = geometry::Extrinsics::from_rotation(R.transpose(), -R.transpose() * t);
  return c;
}

IngestResult ingest_frames(const fs::path& input, const fs::path& out, const IngestSpec& spec) {
  if (spec.clip_length < 2) throw ConfigError("ingest: clip length must be >= 2");
  if (!fs::is_directory(input)) throw InputError("ingest: not a directory: " + input.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg"))
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  IngestResult res;
  std::optional<RealEstateFile> cams;
  if (fs::exists(input / "cameras.txt")) {
    std::ifstream in(input / "cameras.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    cams = parse_realestate(ss.str());
    if (cams->frames.size() != files.size()) {
      res.warnings.push_back("cameras.txt has " + std::to_string(cams->frames.size()) +
                             " rows for " + std::to_string(files.size()) + " frames; ignored");
      cams.reset();
    }
  }

  fs::create_directories(out);
  res.manifest.root = out;
  ClipEntry current;
  std::vector<Camera> current_cams;
  int clip_index = 0;
  auto flush = [&]() {
    if (current.frames.size() >= 2) {
      if (cams) {
        current.gt_cameras = current.id + "/cameras.json";
        write_cameras(out / current.gt_cameras, current_cams);
      }
      res.manifest.clips.push_back(current);
    } else if (!current.frames.empty()) {
      res.warnings.push_back("clip " + current.id + " has fewer than 2 frames; excluded");
    }
    current = ClipEntry{};
    current_cams.clear();
  };
  for (size_t i = 0; i < files.size(); ++i) {
    cv::Mat img = cv::imread(files[i].string(), cv::IMREAD_COLOR);
    if (img.empty()) {
      res.warnings.push_back("unreadable frame skipped: " + files[i].string());
      continue;
    }
    if (current.frames.empty()) {
      current.id = spec.split + "_" + frame_name(clip_index++);
      current.width = spec.width;
      current.height = spec.height;
      current.split = spec.split;
    }
    const std::string rel = current.id + "/" + frame_name(static_cast<int>(current.frames.size())) + ".png";
    write_png(out / rel, mat_to_tensor(center_crop_resize(img, spec.width, spec.height)));
    current.frames.push_back(rel);
    if (cams) current_cams.push_back(realestate_camera(cams->frames[i], img.cols, img.rows,
                                                       spec.width, spec.height));
    if (static_cast<int>(current.frames.size()) == spec.clip_length) flush();
  }
  flush();
  res.manifest.save(out / "manifest.json");
  return res;
}

}  // namespace posefree::data
