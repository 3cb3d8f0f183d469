#include "bg/detector.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace bg {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Forward-mode dual number carrying value + partials w.r.t. the four raw
// box logits. Gives exact CIoU gradients without hand-derived chain rules.
struct D4 {
  double v = 0.0;
  std::array<double, 4> g{};
};

D4 con(double c) { return {c, {}}; }

D4 operator+(const D4& a, const D4& b) {
  D4 r{a.v + b.v, a.g};
  for (int i = 0; i < 4; ++i) r.g[i] += b.g[i];
  return r;
}
D4 operator-(const D4& a, const D4& b) {
  D4 r{a.v - b.v, a.g};
  for (int i = 0; i < 4; ++i) r.g[i] -= b.g[i];
  return r;
}
D4 operator*(const D4& a, const D4& b) {
  D4 r{a.v * b.v, {}};
  for (int i = 0; i < 4; ++i) r.g[i] = a.g[i] * b.v + a.v * b.g[i];
  return r;
}
D4 operator*(const D4& a, double s) {
  D4 r{a.v * s, a.g};
  for (int i = 0; i < 4; ++i) r.g[i] *= s;
  return r;
}
D4 operator/(const D4& a, const D4& b) {
  D4 r{a.v / b.v, {}};
  const double inv2 = 1.0 / (b.v * b.v);
  for (int i = 0; i < 4; ++i) r.g[i] = (a.g[i] * b.v - a.v * b.g[i]) * inv2;
  return r;
}
D4 dmax(const D4& a, const D4& b) { return a.v >= b.v ? a : b; }
D4 dmin(const D4& a, const D4& b) { return a.v <= b.v ? a : b; }
D4 datan(const D4& a) {
  D4 r{std::atan(a.v), {}};
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (int i = 0; i < 4; ++i) r.g[i] = a.g[i] * s;
  return r;
}

struct DecodedBox {
  D4 cx, cy, w, h;
};

// YOLO-family decode from raw logits; seeds the dual partial slots.
DecodedBox decode_dual(double tx, double ty, double tw, double th, int cell_x,
                       int cell_y, int grid_w, int grid_h, double aw,
                       double ah) {
  auto sig_var = [](double t, int slot) {
    const double s = sigmoid(t);
    D4 d{s, {}};
    d.g[slot] = s * (1.0 - s);
    return d;
  };
  const D4 sx = sig_var(tx, 0), sy = sig_var(ty, 1);
  const D4 sw = sig_var(tw, 2), sh = sig_var(th, 3);
  DecodedBox b;
  b.cx = (sx * 2.0 - con(0.5) + con(cell_x)) * (1.0 / grid_w);
  b.cy = (sy * 2.0 - con(0.5) + con(cell_y)) * (1.0 / grid_h);
  b.w = sw * sw * (4.0 * aw);
  b.h = sh * sh * (4.0 * ah);
  return b;
}

D4 iou_dual(const DecodedBox& p, const Box& t) {
  const D4 px1 = p.cx - p.w * 0.5, px2 = p.cx + p.w * 0.5;
  const D4 py1 = p.cy - p.h * 0.5, py2 = p.cy + p.h * 0.5;
  const D4 tx1 = con(t.cx - t.w / 2), tx2 = con(t.cx + t.w / 2);
  const D4 ty1 = con(t.cy - t.h / 2), ty2 = con(t.cy + t.h / 2);
  const D4 iw = dmax(dmin(px2, tx2) - dmax(px1, tx1), con(0.0));
  const D4 ih = dmax(dmin(py2, ty2) - dmax(py1, ty1), con(0.0));
  const D4 inter = iw * ih;
  const D4 uni = p.w * p.h + con(t.w * t.h) - inter + con(1e-12);
  return inter / uni;
}

// Complete-IoU: IoU - center distance / enclosing diagonal - aspect term.
// The alpha coupling is differentiated through (not detached) so analytic
// gradients match finite differences of the loss value.
D4 ciou_dual(const DecodedBox& p, const Box& t) {
  const D4 iou = iou_dual(p, t);
  const D4 px1 = p.cx - p.w * 0.5, px2 = p.cx + p.w * 0.5;
  const D4 py1 = p.cy - p.h * 0.5, py2 = p.cy + p.h * 0.5;
  const D4 cw = dmax(px2, con(t.cx + t.w / 2)) - dmin(px1, con(t.cx - t.w / 2));
  const D4 ch = dmax(py2, con(t.cy + t.h / 2)) - dmin(py1, con(t.cy - t.h / 2));
  const D4 c2 = cw * cw + ch * ch + con(1e-12);
  const D4 dx = p.cx - con(t.cx), dy = p.cy - con(t.cy);
  const D4 rho2 = dx * dx + dy * dy;
  const D4 dv = datan(con(t.w) / con(std::max(t.h, 1e-12))) -
                datan(p.w / (p.h + con(1e-12)));
  const D4 v = dv * dv * (4.0 / (kPi * kPi));
  const D4 alpha = v / (con(1.0) - iou + v + con(1e-12));
  return iou - rho2 / c2 - alpha * v;
}

int head_channel(int anchor, int field, int nc) {
  return anchor * (5 + nc) + field;
}

std::uint64_t slot_key(int scale, int image, int anchor, int cy, int cx) {
  return ((((static_cast<std::uint64_t>(scale) << 16 | image) << 8 | anchor)
           << 16 |
           cy)
          << 16) |
         cx;
}

}  // namespace

int DetectorConfig::scaled_width(int i) const {
  int w = static_cast<int>(std::lround(widths[static_cast<std::size_t>(i)] *
                                       width_multiplier));
  if (w < 4) w = 4;
  w += w & 1;  // even, the CSP split halves channels
  return w;
}

int DetectorConfig::scaled_neck() const {
  int w = static_cast<int>(std::lround(neck_channels * width_multiplier));
  if (w < 4) w = 4;
  w += w & 1;
  return w;
}

double box_iou(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

DetectorNet::C3Block::C3Block(const std::string& name, int ch)
    : ca(name + ".ca", ch, ch / 2, 1, 1, 0),
      cb(name + ".cb", ch, ch / 2, 1, 1, 0),
      h1(name + ".h1", ch / 2, ch / 2, 3, 1, 1),
      h2(name + ".h2", ch / 2, ch / 2, 3, 1, 1),
      merge(name + ".merge", ch, ch, 1, 1, 0),
      half(ch / 2) {}

void DetectorNet::C3Block::init(Rng& rng) {
  ca.init_he(rng);
  cb.init_he(rng);
  h1.init_he(rng);
  h2.init_he(rng);
  merge.init_he(rng);
}

Tensor DetectorNet::C3Block::forward(const Tensor& x, bool keep_cache) {
  Tensor a = aa.forward(ca.forward(x, keep_cache), keep_cache);
  Tensor b = ab.forward(cb.forward(x, keep_cache), keep_cache);
  Tensor u = ah1.forward(h1.forward(a, keep_cache), keep_cache);
  u = h2.forward(u, keep_cache);
  u.add_(a);  // residual bottleneck
  Tensor m = concat_channels(u, b);
  return am.forward(merge.forward(m, keep_cache), keep_cache);
}

Tensor DetectorNet::C3Block::backward(const Tensor& grad_out) {
  Tensor gm = merge.backward(am.backward(grad_out));
  Tensor gz, gb;
  split_channels(gm, half, gz, gb);
  Tensor gx = cb.backward(ab.backward(gb));
  Tensor ga = h1.backward(ah1.backward(h2.backward(gz)));
  ga.add_(gz);  // residual skip
  gx.add_(ca.backward(aa.backward(ga)));
  return gx;
}

void DetectorNet::C3Block::collect(std::vector<Param*>& out) {
  ca.collect(out);
  cb.collect(out);
  h1.collect(out);
  h2.collect(out);
  merge.collect(out);
}

const std::array<const char*, 3>& DetectorNet::tap_names() {
  static const std::array<const char*, 3> names = {"conv1", "conv2",
                                                   "csp_block"};
  return names;
}

DetectorNet::DetectorNet(std::string name, const DetectorConfig& cfg, Rng& rng)
    : name_(std::move(name)),
      cfg_(cfg),
      conv1_(name_ + ".conv1", 3, cfg.scaled_width(0), 3, 2, 1),
      conv2_(name_ + ".conv2", cfg.scaled_width(0), cfg.scaled_width(1), 3, 2,
             1),
      csp_(name_ + ".csp", cfg.scaled_width(2)),
      down3_(name_ + ".down3", cfg.scaled_width(2), cfg.scaled_width(3), 3, 2,
             1),
      down4_(name_ + ".down4", cfg.scaled_width(3), cfg.scaled_width(4), 3, 2,
             1),
      p5conv_(name_ + ".p5conv", cfg.scaled_width(4), cfg.scaled_width(4), 3,
              2, 1),
      lat3_(name_ + ".lat3", cfg.scaled_width(3), cfg.scaled_neck(), 1, 1, 0),
      lat4_(name_ + ".lat4", cfg.scaled_width(4), cfg.scaled_neck(), 1, 1, 0),
      lat5_(name_ + ".lat5", cfg.scaled_width(4), cfg.scaled_neck(), 1, 1, 0),
      fuse3_(name_ + ".fuse3", cfg.scaled_neck(), cfg.scaled_neck(), 3, 1, 1),
      fuse4_(name_ + ".fuse4", cfg.scaled_neck(), cfg.scaled_neck(), 3, 1, 1),
      fuse5_(name_ + ".fuse5", cfg.scaled_neck(), cfg.scaled_neck(), 3, 1, 1),
      head3_(name_ + ".head3", cfg.scaled_neck(),
             kAnchorsPerScale * (5 + cfg.num_classes), 1, 1, 0),
      head4_(name_ + ".head4", cfg.scaled_neck(),
             kAnchorsPerScale * (5 + cfg.num_classes), 1, 1, 0),
      head5_(name_ + ".head5", cfg.scaled_neck(),
             kAnchorsPerScale * (5 + cfg.num_classes), 1, 1, 0) {
  if (cfg.scaled_width(1) != cfg.scaled_width(2))
    throw ConfigError(name_ + ": conv2 and csp widths must match");
  conv1_.init_he(rng);
  conv2_.init_he(rng);
  csp_.init(rng);
  down3_.init_he(rng);
  down4_.init_he(rng);
  p5conv_.init_he(rng);
  lat3_.init_he(rng);
  lat4_.init_he(rng);
  lat5_.init_he(rng);
  fuse3_.init_he(rng);
  fuse4_.init_he(rng);
  fuse5_.init_he(rng);
  head3_.init_he(rng);
  head4_.init_he(rng);
  head5_.init_he(rng);
}

DetectorNet::ForwardResult DetectorNet::forward(const Tensor& x,
                                                bool keep_cache) {
  if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0)
    throw ShapeError(name_ + ": input dims must be divisible by 32, got " +
                     x.shape_str());
  ForwardResult r;
  Tensor t1 = a1_.forward(conv1_.forward(x, keep_cache), keep_cache);
  Tensor t2 = a2_.forward(conv2_.forward(t1, keep_cache), keep_cache);
  Tensor t3 = csp_.forward(t2, keep_cache);
  Tensor p3 = a3_.forward(down3_.forward(t3, keep_cache), keep_cache);
  Tensor p4 = a4_.forward(down4_.forward(p3, keep_cache), keep_cache);
  Tensor p5 = a5_.forward(p5conv_.forward(p4, keep_cache), keep_cache);

  Tensor f5 = af5_.forward(fuse5_.forward(lat5_.forward(p5, keep_cache),
                                          keep_cache),
                           keep_cache);
  Tensor l4 = lat4_.forward(p4, keep_cache);
  l4.add_(upsample2x(f5));
  Tensor f4 = af4_.forward(fuse4_.forward(l4, keep_cache), keep_cache);
  Tensor l3 = lat3_.forward(p3, keep_cache);
  l3.add_(upsample2x(f4));
  Tensor f3 = af3_.forward(fuse3_.forward(l3, keep_cache), keep_cache);

  r.heads[0] = head3_.forward(f3, keep_cache);
  r.heads[1] = head4_.forward(f4, keep_cache);
  r.heads[2] = head5_.forward(f5, keep_cache);
  r.taps = {std::move(t1), std::move(t2), std::move(t3)};
  return r;
}

TapArray DetectorNet::backbone_taps(const Tensor& x, int max_level) {
  if (max_level < 1 || max_level > 3)
    throw ConfigError(name_ + ": tap level must be in 1..3");
  TapArray taps;
  taps[0] = a1_.forward(conv1_.forward(x, false), false);
  if (max_level >= 2) taps[1] = a2_.forward(conv2_.forward(taps[0], false), false);
  if (max_level >= 3) taps[2] = csp_.forward(taps[1], false);
  return taps;
}

Tensor DetectorNet::backward(const std::array<Tensor, 3>& head_grads) {
  return backward(head_grads, TapArray{});
}

Tensor DetectorNet::backward(const std::array<Tensor, 3>& head_grads,
                             const TapArray& tap_grads) {
  Tensor g_f3 = head3_.backward(head_grads[0]);
  Tensor g_l3 = fuse3_.backward(af3_.backward(g_f3));
  Tensor g_p3 = lat3_.backward(g_l3);

  Tensor g_f4 = head4_.backward(head_grads[1]);
  g_f4.add_(upsample2x_backward(g_l3));
  Tensor g_l4 = fuse4_.backward(af4_.backward(g_f4));
  Tensor g_p4 = lat4_.backward(g_l4);

  Tensor g_f5 = head5_.backward(head_grads[2]);
  g_f5.add_(upsample2x_backward(g_l4));
  Tensor g_l5 = fuse5_.backward(af5_.backward(g_f5));
  Tensor g_p5 = lat5_.backward(g_l5);

  g_p4.add_(p5conv_.backward(a5_.backward(g_p5)));
  g_p3.add_(down4_.backward(a4_.backward(g_p4)));
  Tensor g_t3 = down3_.backward(a3_.backward(g_p3));
  if (!tap_grads[2].empty()) g_t3.add_(tap_grads[2]);
  Tensor g_t2 = csp_.backward(g_t3);
  if (!tap_grads[1].empty()) g_t2.add_(tap_grads[1]);
  Tensor g_t1 = conv2_.backward(a2_.backward(g_t2));
  if (!tap_grads[0].empty()) g_t1.add_(tap_grads[0]);
  return conv1_.backward(a1_.backward(g_t1));
}

std::vector<Param*> DetectorNet::params() {
  std::vector<Param*> out;
  conv1_.collect(out);
  conv2_.collect(out);
  csp_.collect(out);
  down3_.collect(out);
  down4_.collect(out);
  p5conv_.collect(out);
  lat3_.collect(out);
  lat4_.collect(out);
  lat5_.collect(out);
  fuse3_.collect(out);
  fuse4_.collect(out);
  fuse5_.collect(out);
  head3_.collect(out);
  head4_.collect(out);
  head5_.collect(out);
  return out;
}

std::vector<AssignedTarget> assign_targets(
    const std::vector<std::vector<GtBox>>& batch_gts, int img_h, int img_w,
    const DetectorConfig& cfg, double ratio_limit) {
  std::vector<AssignedTarget> out;
  std::unordered_set<std::uint64_t> taken;
  for (int n = 0; n < static_cast<int>(batch_gts.size()); ++n) {
    for (const GtBox& gt : batch_gts[static_cast<std::size_t>(n)]) {
      if (gt.box.w <= 0 || gt.box.h <= 0) continue;
      for (int s = 0; s < kNumScales; ++s) {
        const int gw = img_w / kScaleStrides[static_cast<std::size_t>(s)];
        const int gh = img_h / kScaleStrides[static_cast<std::size_t>(s)];
        int cx = static_cast<int>(gt.box.cx * gw);
        int cy = static_cast<int>(gt.box.cy * gh);
        cx = std::clamp(cx, 0, gw - 1);
        cy = std::clamp(cy, 0, gh - 1);
        for (int a = 0; a < kAnchorsPerScale; ++a) {
          const double aw = cfg.anchors[s][a][0], ah = cfg.anchors[s][a][1];
          const double r =
              std::max(std::max(gt.box.w / aw, aw / gt.box.w),
                       std::max(gt.box.h / ah, ah / gt.box.h));
          if (r > ratio_limit) continue;
          const std::uint64_t key = slot_key(s, n, a, cy, cx);
          if (!taken.insert(key).second) continue;
          out.push_back({n, s, a, cy, cx, gt});
        }
      }
    }
  }
  return out;
}

DetectionLossResult detection_loss(const std::array<Tensor, 3>& preds,
                                   const std::vector<AssignedTarget>& targets,
                                   const DetectorConfig& cfg,
                                   const DetectionLossWeights& w,
                                   std::array<Tensor, 3>* grads) {
  const int nc = cfg.num_classes;
  DetectionLossResult res;
  res.num_assigned = static_cast<int>(targets.size());

  if (grads)
    for (int s = 0; s < kNumScales; ++s)
      (*grads)[s] = Tensor::zeros_like(preds[s]);

  // Objectness over every slot; assigned slots carry target 1.
  std::unordered_set<std::uint64_t> positive;
  for (const auto& t : targets)
    positive.insert(slot_key(t.scale, t.image, t.anchor, t.cell_y, t.cell_x));

  std::size_t total_slots = 0;
  for (int s = 0; s < kNumScales; ++s) {
    const Tensor& p = preds[s];
    const int n = p.dim(0), gh = p.dim(2), gw = p.dim(3);
    total_slots += static_cast<std::size_t>(n) * kAnchorsPerScale * gh * gw;
  }
  const double obj_norm = total_slots > 0 ? 1.0 / total_slots : 0.0;

  double obj_acc = 0.0;
  for (int s = 0; s < kNumScales; ++s) {
    const Tensor& p = preds[s];
    const int n = p.dim(0), gh = p.dim(2), gw = p.dim(3);
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < kAnchorsPerScale; ++a) {
        const int ch = head_channel(a, 4, nc);
        for (int y = 0; y < gh; ++y) {
          for (int x = 0; x < gw; ++x) {
            const double z = p.at(i, ch, y, x);
            const double t =
                positive.count(slot_key(s, i, a, y, x)) ? 1.0 : 0.0;
            obj_acc += bce_with_logit(z, t);
            if (grads)
              (*grads)[s].at(i, ch, y, x) +=
                  w.a * (sigmoid(z) - t) * obj_norm;
          }
        }
      }
    }
  }
  res.obj = obj_acc * obj_norm;

  // Localization + classification over assigned slots.
  double loc_acc = 0.0, cls_acc = 0.0;
  const double loc_norm =
      targets.empty() ? 0.0 : 1.0 / static_cast<double>(targets.size());
  const double cls_norm =
      targets.empty() ? 0.0 : 1.0 / (static_cast<double>(targets.size()) * nc);
  for (const auto& t : targets) {
    const Tensor& p = preds[t.scale];
    const int gw = p.dim(3), gh = p.dim(2);
    const double aw = cfg.anchors[t.scale][t.anchor][0];
    const double ah = cfg.anchors[t.scale][t.anchor][1];
    const double tx = p.at(t.image, head_channel(t.anchor, 0, nc), t.cell_y,
                           t.cell_x);
    const double ty = p.at(t.image, head_channel(t.anchor, 1, nc), t.cell_y,
                           t.cell_x);
    const double tw = p.at(t.image, head_channel(t.anchor, 2, nc), t.cell_y,
                           t.cell_x);
    const double th = p.at(t.image, head_channel(t.anchor, 3, nc), t.cell_y,
                           t.cell_x);
    const DecodedBox db = decode_dual(tx, ty, tw, th, t.cell_x, t.cell_y, gw,
                                      gh, aw, ah);
    const D4 quality = w.use_ciou ? ciou_dual(db, t.gt.box)
                                  : iou_dual(db, t.gt.box);
    loc_acc += 1.0 - quality.v;
    if (grads) {
      for (int f = 0; f < 4; ++f)
        (*grads)[t.scale].at(t.image, head_channel(t.anchor, f, nc), t.cell_y,
                             t.cell_x) += w.b * (-quality.g[f]) * loc_norm;
    }
    for (int j = 0; j < nc; ++j) {
      const int ch = head_channel(t.anchor, 5 + j, nc);
      const double z = p.at(t.image, ch, t.cell_y, t.cell_x);
      const double tgt = (j == t.gt.class_id) ? 1.0 : 0.0;
      cls_acc += bce_with_logit(z, tgt);
      if (grads)
        (*grads)[t.scale].at(t.image, ch, t.cell_y, t.cell_x) +=
            w.c * (sigmoid(z) - tgt) * cls_norm;
    }
  }
  res.loc = loc_acc * loc_norm;
  res.cls = cls_acc * cls_norm;
  res.total = w.a * res.obj + w.b * res.loc + w.c * res.cls;
  return res;
}

Box decode_box(double tx, double ty, double tw, double th, int cell_x,
               int cell_y, int grid_w, int grid_h, double anchor_w,
               double anchor_h) {
  Box b;
  b.cx = (2.0 * sigmoid(tx) - 0.5 + cell_x) / grid_w;
  b.cy = (2.0 * sigmoid(ty) - 0.5 + cell_y) / grid_h;
  const double sw = 2.0 * sigmoid(tw), sh = 2.0 * sigmoid(th);
  b.w = anchor_w * sw * sw;
  b.h = anchor_h * sh * sh;
  return b;
}

namespace {

Box clip_box(Box b) {
  double x1 = std::clamp(b.cx - b.w / 2, 0.0, 1.0);
  double x2 = std::clamp(b.cx + b.w / 2, 0.0, 1.0);
  double y1 = std::clamp(b.cy - b.h / 2, 0.0, 1.0);
  double y2 = std::clamp(b.cy + b.h / 2, 0.0, 1.0);
  return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
}

void sort_detections(std::vector<Detection>& dets) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
    return a.box.cy < b.box.cy;
  });
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  sort_detections(dets);
  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (suppressed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (box_iou(dets[i].box, dets[j].box) > iou_thresh) suppressed[j] = true;
    }
  }
  return kept;
}

std::vector<Detection> decode_and_nms(const std::array<Tensor, 3>& preds,
                                      int image_index,
                                      const DetectorConfig& cfg,
                                      double conf_thresh, double iou_thresh) {
  const int nc = cfg.num_classes;
  std::vector<Detection> cand;
  for (int s = 0; s < kNumScales; ++s) {
    const Tensor& p = preds[s];
    const int gh = p.dim(2), gw = p.dim(3);
    for (int a = 0; a < kAnchorsPerScale; ++a) {
      for (int y = 0; y < gh; ++y) {
        for (int x = 0; x < gw; ++x) {
          const double obj =
              sigmoid(p.at(image_index, head_channel(a, 4, nc), y, x));
          if (obj * 1.0 < conf_thresh) continue;  // class prob <= 1
          const Box box = clip_box(decode_box(
              p.at(image_index, head_channel(a, 0, nc), y, x),
              p.at(image_index, head_channel(a, 1, nc), y, x),
              p.at(image_index, head_channel(a, 2, nc), y, x),
              p.at(image_index, head_channel(a, 3, nc), y, x), x, y, gw, gh,
              cfg.anchors[s][a][0], cfg.anchors[s][a][1]));
          for (int j = 0; j < nc; ++j) {
            const double score =
                obj *
                sigmoid(p.at(image_index, head_channel(a, 5 + j, nc), y, x));
            if (score >= conf_thresh) cand.push_back({j, score, box});
          }
        }
      }
    }
  }
  return nms(std::move(cand), iou_thresh);
}

}  // namespace bg
