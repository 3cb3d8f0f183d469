#include "bg/guidance.hpp"

namespace bg {

namespace {

double norm_divisor(const Tensor& f, bool literal_spatial_norm) {
  if (literal_spatial_norm) {
    // h*w only; feature tensors are (n, c, h, w).
    return static_cast<double>(f.dim(0)) * f.dim(2) * f.dim(3);
  }
  return static_cast<double>(f.numel());
}

}  // namespace

double feature_consistency_loss(const Tensor& f, const Tensor& i, int level,
                                bool literal_spatial_norm) {
  if (!f.same_shape(i))
    throw ShapeError("feature_consistency_loss: level " +
                     std::to_string(level) + " shape mismatch " +
                     f.shape_str() + " vs " + i.shape_str());
  double acc = 0.0;
  for (std::size_t k = 0; k < f.numel(); ++k) {
    const double d = f[k] - i[k];
    acc += d * d;
  }
  return acc / norm_divisor(f, literal_spatial_norm);
}

Tensor feature_consistency_grad(const Tensor& f, const Tensor& i, double scale,
                                bool literal_spatial_norm) {
  Tensor g = Tensor::zeros_like(f);
  const double s = 2.0 * scale / norm_divisor(f, literal_spatial_norm);
  for (std::size_t k = 0; k < f.numel(); ++k) g[k] = s * (f[k] - i[k]);
  return g;
}

GuidedLossParts full_guided_loss(const FeatureTapSet& taps_f,
                                 const FeatureTapSet& taps_i,
                                 const GuidanceWeights& w) {
  GuidedLossParts parts;
  for (int l : w.enabled_levels) {
    if (l < 1 || l > 3)
      throw ConfigError("full_guided_loss: invalid level " + std::to_string(l));
    if (!taps_f.has_level(l) || !taps_i.has_level(l))
      throw ShapeError("full_guided_loss: enabled level " + std::to_string(l) +
                       " missing from a tap set");
    const double c = feature_consistency_loss(
        taps_f.level(l), taps_i.level(l), l, w.literal_spatial_norm);
    parts.per_level[static_cast<std::size_t>(l - 1)] = c;
    parts.total += w.mu(l) * c;
  }
  return parts;
}

double total_loss(double l_det, double l_fgm, const TotalLossWeights& w) {
  return w.eta1 * l_det + w.eta2 * l_fgm;
}

ExtractedPair extract_pair(DetectorNet& det_branch, Generator& enhancer,
                           DetectorNet& enh_detector, const Tensor& img_u,
                           int max_level) {
  if (!enhancer.frozen || !enh_detector.frozen)
    throw ContractError(
        "extract_pair: enhancement branch must be frozen during guided "
        "training");
  ExtractedPair pair;
  pair.taps_f.source = TapSource::detection_branch;
  pair.taps_f.taps = det_branch.backbone_taps(img_u, max_level);
  pair.taps_i.source = TapSource::enhancement_branch;
  const Tensor enhanced = enhancer.forward(img_u, false);
  pair.taps_i.taps = enh_detector.backbone_taps(enhanced, max_level);
  return pair;
}

}  // namespace bg
