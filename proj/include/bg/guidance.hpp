#ifndef BG_GUIDANCE_HPP
#define BG_GUIDANCE_HPP

#include <array>
#include <set>

#include "bg/detector.hpp"
#include "bg/enhancer.hpp"

namespace bg {

enum class TapSource { detection_branch, enhancement_branch };

// Level-indexed shallow feature maps from one of the two branches.
// Levels 1..3 map to the conv1 / conv2 / csp_block taps.
struct FeatureTapSet {
  TapArray taps;
  TapSource source = TapSource::detection_branch;

  const Tensor& level(int l) const { return taps[static_cast<std::size_t>(l - 1)]; }
  bool has_level(int l) const { return !taps[static_cast<std::size_t>(l - 1)].empty(); }
};

struct GuidanceWeights {
  double mu1 = 1.0, mu2 = 1.0, mu3 = 1.0;
  std::set<int> enabled_levels = {1};
  // When set, averages over h*w only (summing channels) instead of the
  // default mean over channels*h*w.
  bool literal_spatial_norm = false;

  double mu(int level) const {
    return level == 1 ? mu1 : (level == 2 ? mu2 : mu3);
  }
};

struct TotalLossWeights {
  double eta1 = 1.0;
  double eta2 = 0.05;
};

// Mean squared difference between one pair of feature maps. With
// literal_spatial_norm the divisor is h*w (channels summed).
double feature_consistency_loss(const Tensor& f, const Tensor& i, int level,
                                bool literal_spatial_norm = false);

// d(feature_consistency_loss)/dF scaled by `scale`; used to inject the
// guidance gradient into the detection branch backbone.
Tensor feature_consistency_grad(const Tensor& f, const Tensor& i, double scale,
                                bool literal_spatial_norm = false);

struct GuidedLossParts {
  std::array<double, 3> per_level{};  // con1..con3, 0 for disabled levels
  double total = 0.0;
};

// Sum over enabled levels of mu_l * consistency(F_l, I_l).
GuidedLossParts full_guided_loss(const FeatureTapSet& taps_f,
                                 const FeatureTapSet& taps_i,
                                 const GuidanceWeights& w);

// eta1 * detection + eta2 * guided.
double total_loss(double l_det, double l_fgm, const TotalLossWeights& w);

// Runs both branches on the same underwater image batch: F taps come from
// the detection branch on the raw image, I taps from the enhancement
// branch's detector applied to the enhanced image. The enhancement branch
// must be frozen; no gradients flow into it.
struct ExtractedPair {
  FeatureTapSet taps_f;
  FeatureTapSet taps_i;
};

ExtractedPair extract_pair(DetectorNet& det_branch, Generator& enhancer,
                           DetectorNet& enh_detector, const Tensor& img_u,
                           int max_level);

}  // namespace bg

#endif  // BG_GUIDANCE_HPP
