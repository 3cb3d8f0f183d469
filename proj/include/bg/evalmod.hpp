#ifndef BG_EVALMOD_HPP
#define BG_EVALMOD_HPP

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bg/detector.hpp"

namespace bg {

// Greedy per-image matching: dets must be sorted by descending score; each
// ground truth is consumed at most once; a detection is a true positive iff
// the best unconsumed same-class ground truth reaches the IoU threshold.
std::vector<char> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<GtBox>& gts,
                                   double iou_thresh);

// Area under the precision-envelope/recall curve for one class.
// grid101=false: exact all-point integral of the envelope (used at 0.5).
// grid101=true: integral of the envelope restricted to the 101-point recall
// grid (right-endpoint sum), used for the 0.5:0.95 aggregate; the
// right-endpoint form keeps the aggregate dominated by the all-point value.
double average_precision(const std::vector<char>& tp_flags,
                         const std::vector<double>& scores, int n_gt,
                         bool grid101);

struct MapResult {
  double map50 = 0.0;
  double map5095 = 0.0;
  std::map<int, double> ap50_per_class;
  std::vector<int> included_classes;
};

// Means over classes (and IoU thresholds 0.5:0.05:0.95 for the aggregate).
// A class with zero ground truths and zero detections is excluded from the
// averages; with zero ground truths its AP is 0.
MapResult map_at(const std::vector<std::vector<Detection>>& dets,
                 const std::vector<std::vector<GtBox>>& gts, int num_classes);

struct PrPoint {
  double threshold = 0.0, precision = 0.0, recall = 0.0;
};

struct EvalReport {
  std::vector<std::string> class_names;
  std::map<int, double> per_class_ap;  // AP@0.5, all-point
  double map50 = 0.0, map5095 = 0.0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;  // at the max-F1 threshold
  double fps = 0.0;
  std::map<int, std::vector<PrPoint>> pr_points;
  nlohmann::json provenance;  // loss weights, thresholds, mode, interp note

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Metrics for one detection/ground-truth set; fps is measured separately
// and passed through. P/R/F1 are reported at the confidence threshold that
// maximizes F1 (micro-averaged across classes at IoU 0.5).
EvalReport compute_report(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<GtBox>>& gts,
                          const std::vector<std::string>& class_names,
                          double fps, nlohmann::json provenance);

// Median over iterations of 1/latency; warmup iterations are excluded.
double fps_benchmark(const std::function<void(const Tensor&)>& infer,
                     const std::vector<const Tensor*>& images, int warmup,
                     int iters);

// report.json + pr_<class>.csv (threshold,precision,recall) + pr_curve.png.
void export_report(const EvalReport& report,
                   const std::filesystem::path& dir);

}  // namespace bg

#endif  // BG_EVALMOD_HPP
