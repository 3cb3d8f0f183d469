#include "bg/evalmod.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include "bg/image_io.hpp"

namespace bg {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<char> match_detections(const std::vector<Detection>& dets,
                                   const std::vector<GtBox>& gts,
                                   double iou_thresh) {
  for (std::size_t i = 1; i < dets.size(); ++i)
    if (dets[i].score > dets[i - 1].score)
      throw ContractError("match_detections: detections not sorted by score");
  std::vector<char> tp(dets.size(), 0);
  std::vector<char> consumed(gts.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (consumed[j] || gts[j].class_id != dets[i].class_id) continue;
      const double iou = box_iou(dets[i].box, gts[j].box);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(j);
      }
    }
    if (best_gt >= 0 && best_iou >= iou_thresh) {
      tp[i] = 1;
      consumed[static_cast<std::size_t>(best_gt)] = 1;
    }
  }
  return tp;
}

double average_precision(const std::vector<char>& tp_flags,
                         const std::vector<double>& scores, int n_gt,
                         bool grid101) {
  if (n_gt < 0) throw ConfigError("average_precision: n_gt < 0");
  if (tp_flags.size() != scores.size())
    throw ShapeError("average_precision: flag/score size mismatch");
  if (n_gt == 0 || tp_flags.empty()) return 0.0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[i - 1])
      throw ContractError("average_precision: scores not sorted descending");

  const std::size_t n = tp_flags.size();
  std::vector<double> prec(n), rec(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_flags[i] ? 1 : 0;
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / n_gt;
  }
  // Precision envelope: env[i] = max(prec[i..]).
  std::vector<double> env(n);
  double run = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    run = std::max(run, prec[i]);
    env[i] = run;
  }

  if (!grid101) {
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rec[i] > prev_r) {
        ap += (rec[i] - prev_r) * env[i];
        prev_r = rec[i];
      }
    }
    return ap;
  }

  // Right-endpoint integral over the 101-point recall grid.
  double ap = 0.0;
  for (int g = 1; g <= 100; ++g) {
    const double r = g / 100.0;
    // env at the first rank whose recall reaches r (envelope is
    // non-increasing and recall non-decreasing in rank).
    const auto it = std::lower_bound(rec.begin(), rec.end(), r - 1e-12);
    if (it == rec.end()) break;
    ap += 0.01 * env[static_cast<std::size_t>(it - rec.begin())];
  }
  return ap;
}

namespace {

struct RankedDet {
  double score;
  int image;
  int index;  // rank within its image
  char tp;
};

// Merge per-image matches into one deterministic global ranking.
std::vector<RankedDet> ranked_class_dets(
    const std::vector<std::vector<Detection>>& dets,
    const std::vector<std::vector<GtBox>>& gts, int class_id,
    double iou_thresh) {
  std::vector<RankedDet> out;
  for (std::size_t img = 0; img < dets.size(); ++img) {
    std::vector<Detection> cls;
    for (const auto& d : dets[img])
      if (d.class_id == class_id) cls.push_back(d);
    const auto tp = match_detections(cls, gts[img], iou_thresh);
    for (std::size_t k = 0; k < cls.size(); ++k)
      out.push_back({cls[k].score, static_cast<int>(img),
                     static_cast<int>(k), tp[k]});
  }
  std::sort(out.begin(), out.end(), [](const RankedDet& a, const RankedDet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });
  return out;
}

int count_gt(const std::vector<std::vector<GtBox>>& gts, int class_id) {
  int n = 0;
  for (const auto& g : gts)
    for (const auto& b : g)
      if (b.class_id == class_id) ++n;
  return n;
}

double class_ap(const std::vector<std::vector<Detection>>& dets,
                const std::vector<std::vector<GtBox>>& gts, int class_id,
                double iou_thresh, bool grid101) {
  const auto ranked = ranked_class_dets(dets, gts, class_id, iou_thresh);
  std::vector<char> flags(ranked.size());
  std::vector<double> scores(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    flags[i] = ranked[i].tp;
    scores[i] = ranked[i].score;
  }
  return average_precision(flags, scores, count_gt(gts, class_id), grid101);
}

}  // namespace

MapResult map_at(const std::vector<std::vector<Detection>>& dets,
                 const std::vector<std::vector<GtBox>>& gts, int num_classes) {
  if (dets.size() != gts.size())
    throw ShapeError("map_at: detection/gt image counts differ");
  MapResult r;
  for (int c = 0; c < num_classes; ++c) {
    const int n_gt = count_gt(gts, c);
    std::size_t n_det = 0;
    for (const auto& d : dets)
      for (const auto& det : d)
        if (det.class_id == c) ++n_det;
    if (n_gt == 0 && n_det == 0) continue;  // excluded from averaging
    r.included_classes.push_back(c);
    r.ap50_per_class[c] = class_ap(dets, gts, c, 0.5, false);
  }
  if (r.included_classes.empty()) return r;

  double acc50 = 0.0;
  for (int c : r.included_classes) acc50 += r.ap50_per_class[c];
  r.map50 = acc50 / static_cast<double>(r.included_classes.size());

  double acc = 0.0;
  for (int t = 0; t < 10; ++t) {
    const double thresh = 0.5 + 0.05 * t;
    double acc_t = 0.0;
    for (int c : r.included_classes)
      acc_t += class_ap(dets, gts, c, thresh, true);
    acc += acc_t / static_cast<double>(r.included_classes.size());
  }
  r.map5095 = acc / 10.0;
  return r;
}

EvalReport compute_report(const std::vector<std::vector<Detection>>& dets,
                          const std::vector<std::vector<GtBox>>& gts,
                          const std::vector<std::string>& class_names,
                          double fps, json provenance) {
  const int nc = static_cast<int>(class_names.size());
  EvalReport rep;
  rep.class_names = class_names;
  rep.fps = fps;
  rep.provenance = std::move(provenance);

  const MapResult m = map_at(dets, gts, nc);
  rep.map50 = m.map50;
  rep.map5095 = m.map5095;
  rep.per_class_ap = m.ap50_per_class;

  // PR points per class at IoU 0.5.
  int total_gt = 0;
  for (int c = 0; c < nc; ++c) total_gt += count_gt(gts, c);
  std::vector<RankedDet> all;
  for (int c = 0; c < nc; ++c) {
    const auto ranked = ranked_class_dets(dets, gts, c, 0.5);
    const int n_gt_c = count_gt(gts, c);
    auto& points = rep.pr_points[c];
    int tp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
      tp += ranked[k].tp ? 1 : 0;
      PrPoint pt;
      pt.threshold = ranked[k].score;
      pt.precision = static_cast<double>(tp) / static_cast<double>(k + 1);
      pt.recall = n_gt_c > 0 ? static_cast<double>(tp) / n_gt_c : 0.0;
      points.push_back(pt);
    }
    all.insert(all.end(), ranked.begin(), ranked.end());
  }

  // Operating point: the confidence threshold maximizing micro-averaged F1.
  std::sort(all.begin(), all.end(), [](const RankedDet& a, const RankedDet& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image != b.image) return a.image < b.image;
    return a.index < b.index;
  });
  int tp = 0;
  double best_f1 = 0.0, best_p = 0.0, best_r = 0.0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    tp += all[k].tp ? 1 : 0;
    const double p = static_cast<double>(tp) / static_cast<double>(k + 1);
    const double r =
        total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
    const double f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_p = p;
      best_r = r;
    }
  }
  rep.precision = best_p;
  rep.recall = best_r;
  rep.f1 = best_f1;
  return rep;
}

double fps_benchmark(const std::function<void(const Tensor&)>& infer,
                     const std::vector<const Tensor*>& images, int warmup,
                     int iters) {
  if (iters <= 0) throw ConfigError("fps_benchmark: iters must be > 0");
  if (images.empty()) throw ConfigError("fps_benchmark: no images");
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i)
    infer(*images[static_cast<std::size_t>(i) % images.size()]);
  std::vector<double> fps(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const Tensor& img = *images[static_cast<std::size_t>(i) % images.size()];
    const auto t0 = clock::now();
    infer(img);
    const auto t1 = clock::now();
    const double sec =
        std::chrono::duration_cast<std::chrono::duration<double>>(t1 - t0)
            .count();
    fps[static_cast<std::size_t>(i)] = sec > 0 ? 1.0 / sec : 0.0;
  }
  std::sort(fps.begin(), fps.end());
  return fps[fps.size() / 2];
}

json EvalReport::to_json() const {
  json pca = json::object(), prj = json::object();
  for (const auto& [c, ap] : per_class_ap)
    pca[class_names[static_cast<std::size_t>(c)]] = ap;
  for (const auto& [c, pts] : pr_points) {
    json arr = json::array();
    for (const auto& p : pts)
      arr.push_back({{"threshold", p.threshold},
                     {"precision", p.precision},
                     {"recall", p.recall}});
    prj[class_names[static_cast<std::size_t>(c)]] = arr;
  }
  return json{{"class_names", class_names},
              {"per_class_ap50", pca},
              {"map50", map50},
              {"map5095", map5095},
              {"precision", precision},
              {"recall", recall},
              {"f1", f1},
              {"fps", fps},
              {"pr_points", prj},
              {"provenance", provenance}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  r.class_names = j.at("class_names").get<std::vector<std::string>>();
  auto class_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < r.class_names.size(); ++i)
      if (r.class_names[i] == name) return static_cast<int>(i);
    throw ArtifactError("report: unknown class '" + name + "'");
  };
  for (const auto& [name, ap] : j.at("per_class_ap50").items())
    r.per_class_ap[class_index(name)] = ap.get<double>();
  r.map50 = j.at("map50").get<double>();
  r.map5095 = j.at("map5095").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.fps = j.at("fps").get<double>();
  for (const auto& [name, pts] : j.at("pr_points").items()) {
    auto& dst = r.pr_points[class_index(name)];
    for (const auto& p : pts)
      dst.push_back({p.at("threshold").get<double>(),
                     p.at("precision").get<double>(),
                     p.at("recall").get<double>()});
  }
  r.provenance = j.at("provenance");
  return r;
}

namespace {

// Minimal raster text: 5x7 glyphs for digits, '.', and lowercase letters.
const std::map<char, std::array<std::uint8_t, 7>>& glyphs() {
  static const std::map<char, std::array<std::uint8_t, 7>> table = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
      {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
      {'b', {0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x1E}},
      {'c', {0x00, 0x00, 0x0E, 0x11, 0x10, 0x11, 0x0E}},
      {'d', {0x01, 0x01, 0x0F, 0x11, 0x11, 0x11, 0x0F}},
      {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
      {'f', {0x06, 0x08, 0x1C, 0x08, 0x08, 0x08, 0x08}},
      {'g', {0x00, 0x0F, 0x11, 0x0F, 0x01, 0x11, 0x0E}},
      {'h', {0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x11}},
      {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},
      {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C}},
      {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
      {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15}},
      {'n', {0x00, 0x00, 0x1E, 0x11, 0x11, 0x11, 0x11}},
      {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
      {'p', {0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'q', {0x00, 0x0F, 0x11, 0x0F, 0x01, 0x01, 0x01}},
      {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
      {'s', {0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E}},
      {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
      {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
      {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'w', {0x00, 0x00, 0x15, 0x15, 0x15, 0x15, 0x0A}},
      {'x', {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},
      {'y', {0x00, 0x11, 0x11, 0x0F, 0x01, 0x11, 0x0E}},
      {'z', {0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}},
      {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
  };
  return table;
}

struct Canvas {
  int h, w;
  Tensor img;
  Canvas(int height, int width) : h(height), w(width), img({3, height, width}) {
    img.fill(1.0);
  }
  void put(int y, int x, const std::array<double, 3>& c) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    for (int k = 0; k < 3; ++k)
      img[(static_cast<std::size_t>(k) * h + y) * w + x] = c[static_cast<std::size_t>(k)];
  }
  void line(int y0, int x0, int y1, int x1, const std::array<double, 3>& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy, x = x0, y = y0;
    while (true) {
      put(y, x, c);
      if (x == x1 && y == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y += sy;
      }
    }
  }
  void text(int y, int x, const std::string& s, const std::array<double, 3>& c) {
    for (char ch : s) {
      auto it = glyphs().find(ch);
      if (it != glyphs().end()) {
        for (int r = 0; r < 7; ++r)
          for (int col = 0; col < 5; ++col)
            if (it->second[static_cast<std::size_t>(r)] & (1 << (4 - col)))
              put(y + r, x + col, c);
      }
      x += 6;
    }
  }
};

const std::array<std::array<double, 3>, 8>& palette() {
  static const std::array<std::array<double, 3>, 8> p = {{
      {0.84, 0.15, 0.16},
      {0.12, 0.47, 0.71},
      {0.17, 0.63, 0.17},
      {0.58, 0.40, 0.74},
      {1.00, 0.50, 0.05},
      {0.55, 0.34, 0.29},
      {0.89, 0.47, 0.76},
      {0.50, 0.50, 0.50},
  }};
  return p;
}

void plot_pr_curves(const EvalReport& rep, const fs::path& path) {
  const int H = 480, W = 640, mL = 56, mR = 16, mT = 16, mB = 40;
  Canvas cv(H, W);
  const std::array<double, 3> black = {0, 0, 0};
  const std::array<double, 3> grey = {0.85, 0.85, 0.85};

  auto px = [&](double recall) {
    return mL + static_cast<int>(recall * (W - mL - mR - 1));
  };
  auto py = [&](double precision) {
    return H - mB - static_cast<int>(precision * (H - mT - mB - 1));
  };
  for (int g = 0; g <= 10; ++g) {
    const double v = g / 10.0;
    cv.line(py(v), mL, py(v), W - mR, grey);
    cv.line(mT, px(v), H - mB, px(v), grey);
  }
  cv.line(py(0), mL, py(0), W - mR, black);
  cv.line(py(0), mL, mT, mL, black);
  for (int g = 0; g <= 10; g += 2) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%.1f", g / 10.0);
    cv.text(py(g / 10.0) - 3, 18, buf, black);
    cv.text(H - mB + 8, px(g / 10.0) - 8, buf, black);
  }
  cv.text(H - 12, (W - mL) / 2, "recall", black);
  cv.text(mT, 4, "p", black);

  int li = 0;
  for (const auto& [c, pts] : rep.pr_points) {
    const auto& col = palette()[static_cast<std::size_t>(c) % palette().size()];
    int prev_y = py(pts.empty() ? 0.0 : pts.front().precision), prev_x = px(0.0);
    for (const auto& p : pts) {
      const int x = px(p.recall), y = py(p.precision);
      cv.line(prev_y, prev_x, y, x, col);
      prev_x = x;
      prev_y = y;
    }
    // legend
    const int ly = mT + 10 + 14 * li++;
    cv.line(ly, W - mR - 120, ly, W - mR - 100, col);
    cv.text(ly - 3, W - mR - 94,
            rep.class_names[static_cast<std::size_t>(c)], black);
  }
  write_png(path, cv.img);
}

}  // namespace

void export_report(const EvalReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ArtifactError("export_report: cannot create " + dir.string());
  {
    std::ofstream out(dir / "report.json");
    if (!out)
      throw ArtifactError("export_report: cannot write report.json in " +
                          dir.string());
    out << report.to_json().dump(2) << "\n";
  }
  for (const auto& [c, pts] : report.pr_points) {
    std::ofstream csv(dir / ("pr_" +
                             report.class_names[static_cast<std::size_t>(c)] +
                             ".csv"));
    csv << "threshold,precision,recall\n";
    for (const auto& p : pts)
      csv << p.threshold << "," << p.precision << "," << p.recall << "\n";
  }
  plot_pr_curves(report, dir / "pr_curve.png");
}

}  // namespace bg
