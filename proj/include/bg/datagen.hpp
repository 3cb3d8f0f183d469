#ifndef BG_DATAGEN_HPP
#define BG_DATAGEN_HPP

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bg/detector.hpp"
#include "bg/tensor.hpp"

namespace bg {

enum class Domain { underwater, clear };

struct BoxAnnotation {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  GtBox to_gt() const { return {class_id, {cx, cy, w, h}}; }
};

struct ImageSample {
  Tensor pixels;  // (3,h,w) in [0,1]
  std::vector<BoxAnnotation> boxes;
  Domain domain = Domain::clear;
  std::string id;

  int height() const { return pixels.dim(1); }
  int width() const { return pixels.dim(2); }
};

// Physically inspired degradation: per-channel Beer-Lambert attenuation
// with backscatter toward an ambient colour, then Gaussian blur, additive
// Gaussian noise (clipped) and contrast compression about 0.5.
struct DegradationParams {
  std::array<double, 3> beta = {1.2, 0.5, 0.25};  // R >= G >= B by default
  double depth = 1.2;
  std::array<double, 3> ambient = {0.05, 0.32, 0.38};
  double blur_sigma = 1.1;
  double noise_sigma = 0.045;
  double contrast = 0.6;

  void validate() const;

  // A mild variant used for the "clear" target-domain pool; clear
  // underwater images, not in-air ones, are the translation target.
  DegradationParams mild() const;
};

struct DatasetSpec {
  int n_train = 500;
  int n_test = 100;
  int image_h = 64;
  int image_w = 64;
  std::vector<std::string> classes = {"blob", "spiky", "fan", "star"};
  int objects_min = 1;
  int objects_max = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

// Deterministic clean scene with exact boxes; pure in (spec.seed, index).
ImageSample render_scene(const DatasetSpec& spec, int index);

// Pure in (img, p); boxes are copied unchanged, output stays in [0,1].
ImageSample degrade(const ImageSample& img, const DegradationParams& p);

struct DatasetManifest {
  int n_train = 0, n_test = 0;
  int image_h = 0, image_w = 0;
  std::vector<std::string> classes;
  std::uint64_t seed = 0;
  std::string degradation_json;
  std::string degradation_clear_json;
  std::uint64_t content_hash = 0;
};

// Writes <root>/{images,labels}/{train,test}/<id>.{png,txt} plus
// manifest.json. Every scene is emitted twice: "<id>_u" heavily degraded
// (underwater) and "<id>_c" mildly degraded (clear pool); the two share
// identical annotation files.
DatasetManifest generate_dataset(const DatasetSpec& spec,
                                 const DegradationParams& p,
                                 const DegradationParams& clear_p,
                                 const std::filesystem::path& out_dir);

enum class Split { train, test };

// Loads one split in stable lexicographic id order. Boxes are validated
// and clipped; a sample without its annotation file is skipped with a
// warning on stderr; malformed annotation lines raise ConfigError naming
// the file and line number.
std::vector<ImageSample> load_dataset(const std::filesystem::path& root,
                                      Split split);

// Annotation text format: one "class_id cx cy w h" line per box,
// normalized, six decimal places.
std::string format_annotations(const std::vector<BoxAnnotation>& boxes);
std::vector<BoxAnnotation> parse_annotations(const std::string& text,
                                             const std::string& filename);

const char* split_name(Split s);

}  // namespace bg

#endif  // BG_DATAGEN_HPP
