#include "bg/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bg/image_io.hpp"
#include "bg/rng.hpp"

namespace bg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

struct ShapeStyle {
  std::array<double, 3> color;
  double radius;
  double angle;
  double phase;
};

// Inside tests for the four shape families (class proxies: elongated blob,
// spiky disc, fan, star). dx/dy are pixel offsets from the shape center.
bool inside_shape(int family, double dx, double dy, const ShapeStyle& st) {
  const double ca = std::cos(st.angle), sa = std::sin(st.angle);
  const double u = ca * dx + sa * dy;
  const double v = -sa * dx + ca * dy;
  const double r = std::sqrt(u * u + v * v);
  const double phi = std::atan2(v, u);
  switch (family) {
    case 0: {  // elongated wavy blob
      const double a = st.radius, b = 0.45 * st.radius;
      const double e = (u * u) / (a * a) + (v * v) / (b * b);
      const double wobble = 1.0 + 0.12 * std::sin(5.0 * phi + st.phase);
      return e <= wobble * wobble;
    }
    case 1: {  // spiky disc
      const double lobe = std::abs(std::cos(4.5 * phi + st.phase));
      return r <= st.radius * (0.60 + 0.40 * std::pow(lobe, 1.5));
    }
    case 2: {  // fan / half disc with ridged rim
      double d = std::fmod(phi - st.phase, kTwoPi);
      if (d < 0) d += kTwoPi;
      if (d > kTwoPi / 2) return false;
      const double rim = 1.0 - 0.06 * std::abs(std::sin(8.0 * phi));
      return r <= st.radius * rim;
    }
    default: {  // five-point star
      double t = (phi + st.phase) * 5.0 / kTwoPi;
      t -= std::floor(t);
      const double zig = std::abs(2.0 * t - 1.0);
      return r <= st.radius * (0.42 + 0.58 * std::pow(zig, 1.3));
    }
  }
}

std::array<double, 3> family_color(int family, Rng& rng) {
  static const std::array<std::array<double, 3>, 4> base = {{
      {0.55, 0.42, 0.30},  // blob: sandy brown
      {0.22, 0.10, 0.24},  // spiky: dark purple
      {0.82, 0.62, 0.42},  // fan: light tan
      {0.85, 0.45, 0.25},  // star: orange
  }};
  std::array<double, 3> c = base[static_cast<std::size_t>(family % 4)];
  for (auto& v : c) v = std::clamp(v + rng.uniform(-0.08, 0.08), 0.0, 1.0);
  return c;
}

void gaussian_blur_inplace(Tensor& img, double sigma) {
  if (sigma <= 0) return;
  const int h = img.dim(1), w = img.dim(2);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * (i * i) / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;

  auto reflect = [](int i, int n) {
    // reflect-101: -1 -> 1, n -> n-2
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };

  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int c = 0; c < 3; ++c) {
    double* plane = img.data() + static_cast<std::size_t>(c) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 plane[y * w + reflect(x + i, w)];
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<std::size_t>(i + radius)] *
                 tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
        plane[y * w + x] = acc;
      }
  }
}

json degradation_to_json(const DegradationParams& p) {
  return json{{"beta", p.beta},       {"depth", p.depth},
              {"ambient", p.ambient}, {"blur_sigma", p.blur_sigma},
              {"noise_sigma", p.noise_sigma}, {"contrast", p.contrast}};
}

std::string scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img%06d", index);
  return std::string(buf);
}

}  // namespace

void DegradationParams::validate() const {
  for (double b : beta)
    if (!(b >= 0.0) || !std::isfinite(b))
      throw ConfigError("degradation: beta must be >= 0 and finite");
  if (!(depth >= 0.0) || !std::isfinite(depth))
    throw ConfigError("degradation: depth must be >= 0 and finite");
  for (double a : ambient)
    if (a < 0.0 || a > 1.0)
      throw ConfigError("degradation: ambient must lie in [0,1]");
  if (blur_sigma < 0 || noise_sigma < 0)
    throw ConfigError("degradation: blur/noise sigma must be >= 0");
  if (!(contrast > 0.0 && contrast <= 1.0))
    throw ConfigError("degradation: contrast must lie in (0,1]");
}

DegradationParams DegradationParams::mild() const {
  DegradationParams m = *this;
  for (auto& b : m.beta) b *= 0.15;
  m.blur_sigma *= 0.25;
  m.noise_sigma *= 0.2;
  m.contrast = 1.0 - (1.0 - contrast) * 0.25;
  return m;
}

void DatasetSpec::validate() const {
  if (n_train <= 0 || n_test <= 0)
    throw ConfigError("dataset: counts must be positive");
  if (image_h % 32 != 0 || image_w % 32 != 0 || image_h <= 0 || image_w <= 0)
    throw ConfigError("dataset: image size must be divisible by 32");
  if (classes.empty()) throw ConfigError("dataset: class list is empty");
  if (objects_min < 1 || objects_max < objects_min)
    throw ConfigError("dataset: bad objects_per_image range");
}

ImageSample render_scene(const DatasetSpec& spec, int index) {
  spec.validate();
  if (index < 0 || index >= spec.n_train + spec.n_test)
    throw ConfigError("render_scene: index out of range");
  Rng rng = Rng(spec.seed).fork("scene:" + std::to_string(index));

  const int h = spec.image_h, w = spec.image_w;
  ImageSample s;
  s.pixels = Tensor({3, h, w});
  s.domain = Domain::clear;
  s.id = scene_id(index);

  // Background: tinted gradient plus low-frequency waves and light grain.
  const std::array<double, 3> bg = {rng.uniform(0.30, 0.45),
                                    rng.uniform(0.38, 0.52),
                                    rng.uniform(0.42, 0.58)};
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  const double ph = rng.uniform(0.0, kTwoPi);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double wave =
          0.05 * std::sin(kTwoPi * fx * x / w + ph) +
          0.04 * std::sin(kTwoPi * fy * y / h - ph);
      const double grad = 0.08 * (static_cast<double>(y) / h - 0.5);
      const double grain = rng.uniform(-0.015, 0.015);
      for (int c = 0; c < 3; ++c)
        s.pixels[(static_cast<std::size_t>(c) * h + y) * w + x] =
            std::clamp(bg[static_cast<std::size_t>(c)] + wave + grad + grain,
                       0.0, 1.0);
    }
  }

  const int n_obj = rng.randint(spec.objects_min, spec.objects_max);
  const int nc = static_cast<int>(spec.classes.size());
  const double rmax = 0.17 * std::min(h, w);
  for (int k = 0; k < n_obj; ++k) {
    const int class_id = rng.randint(0, nc - 1);
    for (int attempt = 0; attempt < 8; ++attempt) {
      ShapeStyle st;
      st.radius = rng.uniform(0.45 * rmax, rmax);
      st.angle = rng.uniform(0.0, kTwoPi);
      st.phase = rng.uniform(0.0, kTwoPi);
      st.color = family_color(class_id, rng);
      const double cx = rng.uniform(0.18, 0.82) * w;
      const double cy = rng.uniform(0.18, 0.82) * h;

      int min_x = w, max_x = -1, min_y = h, max_y = -1;
      const int bound = static_cast<int>(std::ceil(st.radius)) + 2;
      for (int y = std::max(0, static_cast<int>(cy) - bound);
           y <= std::min(h - 1, static_cast<int>(cy) + bound); ++y) {
        for (int x = std::max(0, static_cast<int>(cx) - bound);
             x <= std::min(w - 1, static_cast<int>(cx) + bound); ++x) {
          const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
          if (!inside_shape(class_id % 4, dx, dy, st)) continue;
          const double r = std::sqrt(dx * dx + dy * dy) / (st.radius + 1e-9);
          const double shade = 1.0 - 0.30 * r + rng.uniform(-0.04, 0.04);
          for (int c = 0; c < 3; ++c)
            s.pixels[(static_cast<std::size_t>(c) * h + y) * w + x] =
                std::clamp(st.color[static_cast<std::size_t>(c)] * shade, 0.0,
                           1.0);
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
        }
      }
      if (max_x - min_x < 3 || max_y - min_y < 3) continue;  // degenerate

      BoxAnnotation box;
      box.class_id = class_id;
      const double x1 = static_cast<double>(min_x) / w;
      const double x2 = static_cast<double>(max_x + 1) / w;
      const double y1 = static_cast<double>(min_y) / h;
      const double y2 = static_cast<double>(max_y + 1) / h;
      box.cx = (x1 + x2) / 2;
      box.cy = (y1 + y2) / 2;
      box.w = x2 - x1;
      box.h = y2 - y1;
      s.boxes.push_back(box);
      break;
    }
  }
  return s;
}

ImageSample degrade(const ImageSample& img, const DegradationParams& p) {
  p.validate();
  if (img.domain != Domain::clear)
    throw ContractError("degrade: input must be a clear-domain image");
  ImageSample out;
  out.boxes = img.boxes;
  out.domain = Domain::underwater;
  out.id = img.id;
  out.pixels = img.pixels;

  const int h = img.height(), w = img.width();
  for (int c = 0; c < 3; ++c) {
    const double t = std::exp(-p.beta[static_cast<std::size_t>(c)] * p.depth);
    const double a = p.ambient[static_cast<std::size_t>(c)];
    double* plane = out.pixels.data() + static_cast<std::size_t>(c) * h * w;
    for (int i = 0; i < h * w; ++i)
      plane[i] = plane[i] * t + a * (1.0 - t);
  }

  gaussian_blur_inplace(out.pixels, p.blur_sigma);

  if (p.noise_sigma > 0) {
    Rng rng(fnv1a64(img.id.data(), img.id.size(), 0x6e6f697365ull));
    for (std::size_t i = 0; i < out.pixels.numel(); ++i)
      out.pixels[i] = std::clamp(
          out.pixels[i] + rng.normal(0.0, p.noise_sigma), 0.0, 1.0);
  }

  if (p.contrast != 1.0) {
    for (std::size_t i = 0; i < out.pixels.numel(); ++i)
      out.pixels[i] =
          std::clamp(0.5 + p.contrast * (out.pixels[i] - 0.5), 0.0, 1.0);
  }
  return out;
}

std::string format_annotations(const std::vector<BoxAnnotation>& boxes) {
  std::string out;
  char line[128];
  for (const auto& b : boxes) {
    std::snprintf(line, sizeof(line), "%d %.6f %.6f %.6f %.6f\n", b.class_id,
                  b.cx, b.cy, b.w, b.h);
    out += line;
  }
  return out;
}

std::vector<BoxAnnotation> parse_annotations(const std::string& text,
                                             const std::string& filename) {
  std::vector<BoxAnnotation> boxes;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    BoxAnnotation b;
    double cls;
    if (!(ls >> cls >> b.cx >> b.cy >> b.w >> b.h) || cls < 0 ||
        cls != std::floor(cls) || !std::isfinite(b.cx) ||
        !std::isfinite(b.cy) || b.w <= 0 || b.h <= 0) {
      throw ArtifactError("malformed annotation in " + filename + " line " +
                          std::to_string(line_no) + ": '" + line + "'");
    }
    std::string rest;
    if (ls >> rest)
      throw ArtifactError("malformed annotation in " + filename + " line " +
                          std::to_string(line_no) + ": trailing tokens");
    b.class_id = static_cast<int>(cls);
    // Clip corners into the unit square.
    const double x1 = std::clamp(b.cx - b.w / 2, 0.0, 1.0);
    const double x2 = std::clamp(b.cx + b.w / 2, 0.0, 1.0);
    const double y1 = std::clamp(b.cy - b.h / 2, 0.0, 1.0);
    const double y2 = std::clamp(b.cy + b.h / 2, 0.0, 1.0);
    if (x2 - x1 <= 0 || y2 - y1 <= 0) continue;  // fully outside
    b.cx = (x1 + x2) / 2;
    b.cy = (y1 + y2) / 2;
    b.w = x2 - x1;
    b.h = y2 - y1;
    boxes.push_back(b);
  }
  return boxes;
}

const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

DatasetManifest generate_dataset(const DatasetSpec& spec,
                                 const DegradationParams& p,
                                 const DegradationParams& clear_p,
                                 const std::filesystem::path& out_dir) {
  spec.validate();
  p.validate();
  clear_p.validate();

  for (const char* sub : {"images/train", "images/test", "labels/train",
                          "labels/test"}) {
    std::error_code ec;
    fs::create_directories(out_dir / sub, ec);
    if (ec)
      throw ArtifactError("generate_dataset: cannot create " +
                          (out_dir / sub).string() + ": " + ec.message());
  }

  json split_ids = {{"train", json::array()}, {"test", json::array()}};
  for (int index = 0; index < spec.n_train + spec.n_test; ++index) {
    const ImageSample scene = render_scene(spec, index);
    const char* split = index < spec.n_train ? "train" : "test";
    ImageSample under = degrade(scene, p);
    ImageSample clear = degrade(scene, clear_p);
    clear.domain = Domain::clear;

    const std::string labels = format_annotations(scene.boxes);
    for (const auto& [suffix, sample] :
         {std::pair<const char*, const ImageSample*>{"_u", &under},
          std::pair<const char*, const ImageSample*>{"_c", &clear}}) {
      const std::string id = scene.id + suffix;
      write_png(out_dir / "images" / split / (id + ".png"), sample->pixels);
      std::ofstream lf(out_dir / "labels" / split / (id + ".txt"));
      if (!lf)
        throw ArtifactError("generate_dataset: cannot write labels for " + id);
      lf << labels;
    }
    split_ids[split].push_back(scene.id);
  }

  json manifest = {
      {"format_version", 1},
      {"seed", spec.seed},
      {"classes", spec.classes},
      {"image_size", {spec.image_h, spec.image_w}},
      {"objects_per_image", {spec.objects_min, spec.objects_max}},
      {"degradation", degradation_to_json(p)},
      {"degradation_clear", degradation_to_json(clear_p)},
      {"domains", {"u", "c"}},
      {"splits",
       {{"train", {{"count", spec.n_train}, {"ids", split_ids["train"]}}},
        {"test", {{"count", spec.n_test}, {"ids", split_ids["test"]}}}}},
  };
  const std::string text = manifest.dump(2);
  std::ofstream mf(out_dir / "manifest.json");
  if (!mf)
    throw ArtifactError("generate_dataset: cannot write manifest.json in " +
                        out_dir.string());
  mf << text << "\n";
  mf.close();

  DatasetManifest m;
  m.n_train = spec.n_train;
  m.n_test = spec.n_test;
  m.image_h = spec.image_h;
  m.image_w = spec.image_w;
  m.classes = spec.classes;
  m.seed = spec.seed;
  m.degradation_json = degradation_to_json(p).dump();
  m.degradation_clear_json = degradation_to_json(clear_p).dump();
  m.content_hash = fnv1a64(text.data(), text.size());
  return m;
}

std::vector<ImageSample> load_dataset(const std::filesystem::path& root,
                                      Split split) {
  const fs::path img_dir = root / "images" / split_name(split);
  const fs::path lbl_dir = root / "labels" / split_name(split);
  if (!fs::is_directory(img_dir))
    throw ArtifactError("load_dataset: missing directory " + img_dir.string());

  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(img_dir)) {
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());

  std::vector<ImageSample> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    const fs::path lbl = lbl_dir / (id + ".txt");
    if (!fs::exists(lbl)) {
      std::fprintf(stderr, "warning: skipping %s (no annotation file %s)\n",
                   id.c_str(), lbl.string().c_str());
      continue;
    }
    std::ifstream lf(lbl);
    std::stringstream buf;
    buf << lf.rdbuf();
    ImageSample s;
    s.id = id;
    s.pixels = read_png(img_dir / (id + ".png"));
    s.boxes = parse_annotations(buf.str(), lbl.string());
    s.domain = (id.size() >= 2 && id.compare(id.size() - 2, 2, "_c") == 0)
                   ? Domain::clear
                   : Domain::underwater;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bg
