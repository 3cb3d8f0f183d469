#ifndef BG_DETECTOR_HPP
#define BG_DETECTOR_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bg/nn.hpp"

namespace bg {

// Axis-aligned box, normalized center/size in [0,1].
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
};

// Intersection-over-union; degenerate (zero-area) boxes give 0.
double box_iou(const Box& a, const Box& b);

struct Detection {
  int class_id = 0;
  double score = 0.0;
  Box box;
};

struct GtBox {
  int class_id = 0;
  Box box;
};

struct DetectorConfig {
  int num_classes = 4;
  // conv1, conv2, csp, down3, down4 channel widths before the multiplier.
  std::array<int, 5> widths = {16, 32, 32, 64, 128};
  int neck_channels = 64;
  double width_multiplier = 1.0;
  // Normalized (w,h) anchors, three per scale at strides 8/16/32.
  std::array<std::array<std::array<double, 2>, 3>, 3> anchors = {{
      {{{0.10, 0.10}, {0.16, 0.12}, {0.12, 0.18}}},
      {{{0.22, 0.22}, {0.32, 0.24}, {0.24, 0.34}}},
      {{{0.42, 0.42}, {0.58, 0.44}, {0.44, 0.60}}},
  }};

  int scaled_width(int i) const;
  int scaled_neck() const;
};

constexpr int kNumScales = 3;
constexpr int kAnchorsPerScale = 3;
constexpr std::array<int, 3> kScaleStrides = {8, 16, 32};

// Per-image shallow feature maps for the guidance module; level l in {1,2,3}
// maps to the conv1 / conv2 / csp_block outputs.
using TapArray = std::array<Tensor, 3>;

// Compact three-scale single-stage detector. The same architecture is
// instantiated twice (detection subnet inside the enhancement branch, and
// the standalone detection branch); named taps conv1/conv2/csp_block are
// exposed for feature guidance.
class DetectorNet {
public:
  struct ForwardResult {
    std::array<Tensor, 3> heads;  // (n, 3*(5+nc), gh, gw) raw logits
    TapArray taps;
  };

  DetectorNet(std::string name, const DetectorConfig& cfg, Rng& rng);

  // Full pass; input dims must be divisible by 32.
  ForwardResult forward(const Tensor& x, bool keep_cache);

  // Backbone only, up to the deepest tap level requested (1..3).
  // Used on the frozen teacher side where heads are not needed.
  TapArray backbone_taps(const Tensor& x, int max_level);

  // head_grads must match the head shapes; tap_grads entries may be empty
  // tensors (no guidance gradient at that level).
  Tensor backward(const std::array<Tensor, 3>& head_grads,
                  const TapArray& tap_grads);
  Tensor backward(const std::array<Tensor, 3>& head_grads);

  std::vector<Param*> params();
  const DetectorConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  static const std::array<const char*, 3>& tap_names();

  bool frozen = false;

private:
  struct C3Block {
    Conv2d ca, cb, h1, h2, merge;
    LeakyReLU aa{0.1}, ab{0.1}, ah1{0.1}, am{0.1};
    C3Block(const std::string& name, int ch);
    Tensor forward(const Tensor& x, bool keep_cache);
    Tensor backward(const Tensor& grad_out);
    void collect(std::vector<Param*>& out);
    void init(Rng& rng);
    int half;
  };

  std::string name_;
  DetectorConfig cfg_;
  Conv2d conv1_, conv2_;
  C3Block csp_;
  Conv2d down3_, down4_, p5conv_;
  Conv2d lat3_, lat4_, lat5_;
  Conv2d fuse3_, fuse4_, fuse5_;
  Conv2d head3_, head4_, head5_;
  LeakyReLU a1_{0.1}, a2_{0.1}, a3_{0.1}, a4_{0.1}, a5_{0.1};
  LeakyReLU af3_{0.1}, af4_{0.1}, af5_{0.1};
};

struct DetectionLossWeights {
  double a = 1.0;   // objectness
  double b = 0.05;  // localization
  double c = 0.5;   // classification
  bool use_ciou = true;  // plain 1-IoU when false
};

struct DetectionLossResult {
  double total = 0.0;
  double obj = 0.0;
  double loc = 0.0;
  double cls = 0.0;
  int num_assigned = 0;
};

// One ground-truth box assigned to a (scale, anchor, cell) slot.
struct AssignedTarget {
  int image = 0;
  int scale = 0;
  int anchor = 0;
  int cell_y = 0;
  int cell_x = 0;
  GtBox gt;
};

// Center-cell assignment with an anchor ratio filter: a (scale, anchor)
// pair is eligible when max(w/aw, aw/w, h/ah, ah/h) <= ratio_limit.
// First ground truth wins on slot collisions.
std::vector<AssignedTarget> assign_targets(
    const std::vector<std::vector<GtBox>>& batch_gts, int img_h, int img_w,
    const DetectorConfig& cfg, double ratio_limit = 4.0);

// Weighted sum a*obj + b*loc + c*cls; obj/cls are binary cross-entropy
// (obj target 1 on assigned slots, 0 elsewhere), loc is mean (1 - CIoU)
// over assigned predictions. When grads is non-null the analytic gradient
// w.r.t. the raw head logits is written into it.
DetectionLossResult detection_loss(const std::array<Tensor, 3>& preds,
                                   const std::vector<AssignedTarget>& targets,
                                   const DetectorConfig& cfg,
                                   const DetectionLossWeights& w,
                                   std::array<Tensor, 3>* grads);

// Decoded box for one (scale, anchor, cell) slot given raw logits.
Box decode_box(double tx, double ty, double tw, double th, int cell_x,
               int cell_y, int grid_w, int grid_h, double anchor_w,
               double anchor_h);

// Sigmoid-decoded candidates (score = objectness * class prob) followed by
// per-class greedy NMS; output sorted by descending score.
std::vector<Detection> decode_and_nms(const std::array<Tensor, 3>& preds,
                                      int image_index,
                                      const DetectorConfig& cfg,
                                      double conf_thresh, double iou_thresh);

// Greedy per-class NMS on an arbitrary detection list (used directly by
// tests against the brute-force oracle).
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

}  // namespace bg

#endif  // BG_DETECTOR_HPP
