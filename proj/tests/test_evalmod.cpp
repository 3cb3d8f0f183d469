#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bg/evalmod.hpp"
#include "bg/rng.hpp"

using namespace bg;
namespace fs = std::filesystem;

namespace {

// ---- Independent brute-force oracle --------------------------------------
// Re-derives matching and AP from first principles with different looping
// structure than the library (O(n^2) scans everywhere).

std::vector<char> oracle_match(const std::vector<Detection>& dets,
                               std::vector<GtBox> gts, double thr) {
  std::vector<char> tp(dets.size(), 0);
  std::vector<bool> used(gts.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int best = -1;
    double best_iou = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (used[j] || gts[j].class_id != dets[i].class_id) continue;
      const double v = box_iou(dets[i].box, gts[j].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0 && best_iou >= thr) {
      tp[i] = 1;
      used[static_cast<std::size_t>(best)] = true;
    }
  }
  return tp;
}

double oracle_envelope_at(const std::vector<double>& prec,
                          const std::vector<double>& rec, double r) {
  double best = 0.0;
  for (std::size_t k = 0; k < prec.size(); ++k)
    if (rec[k] >= r) best = std::max(best, prec[k]);
  return best;
}

double oracle_ap(const std::vector<char>& tp, int n_gt, bool grid101) {
  if (n_gt == 0 || tp.empty()) return 0.0;
  std::vector<double> prec(tp.size()), rec(tp.size());
  int hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k] ? 1 : 0;
    prec[k] = double(hits) / double(k + 1);
    rec[k] = double(hits) / n_gt;
  }
  if (grid101) {
    double ap = 0.0;
    for (int g = 1; g <= 100; ++g)
      ap += 0.01 * oracle_envelope_at(prec, rec, g / 100.0);
    return ap;
  }
  // all-point: integrate the envelope across the distinct recall steps
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tp[k]) continue;
    const double r = rec[k];
    ap += (r - prev) * oracle_envelope_at(prec, rec, r);
    prev = r;
  }
  return ap;
}

struct Scene {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GtBox>> gts;
};

Scene random_scene(Rng& r, int images, int nc) {
  Scene s;
  s.dets.resize(static_cast<std::size_t>(images));
  s.gts.resize(static_cast<std::size_t>(images));
  for (int i = 0; i < images; ++i) {
    const int n_gt = static_cast<int>(r.next() % 4);
    for (int k = 0; k < n_gt; ++k)
      s.gts[static_cast<std::size_t>(i)].push_back(
          {static_cast<int>(r.next() % static_cast<std::uint64_t>(nc)),
           {r.uniform(0.2, 0.8), r.uniform(0.2, 0.8), r.uniform(0.08, 0.35),
            r.uniform(0.08, 0.35)}});
    const int n_det = static_cast<int>(r.next() % 6);
    std::vector<Detection> dets;
    for (int k = 0; k < n_det; ++k) {
      Detection d;
      d.class_id = static_cast<int>(r.next() % static_cast<std::uint64_t>(nc));
      d.score = r.uniform(0.05, 1.0);
      if (!s.gts[static_cast<std::size_t>(i)].empty() && r.uniform() < 0.6) {
        // jittered copy of a random ground truth
        const auto& g = s.gts[static_cast<std::size_t>(i)]
                            [r.next() % s.gts[static_cast<std::size_t>(i)].size()];
        d.box = {g.box.cx + r.uniform(-0.05, 0.05),
                 g.box.cy + r.uniform(-0.05, 0.05),
                 g.box.w * r.uniform(0.8, 1.2), g.box.h * r.uniform(0.8, 1.2)};
        if (r.uniform() < 0.7) d.class_id = g.class_id;
      } else {
        d.box = {r.uniform(0.2, 0.8), r.uniform(0.2, 0.8),
                 r.uniform(0.08, 0.35), r.uniform(0.08, 0.35)};
      }
      dets.push_back(d);
    }
    std::sort(dets.begin(), dets.end(),
              [](const Detection& a, const Detection& b) {
                return a.score > b.score;
              });
    s.dets[static_cast<std::size_t>(i)] = std::move(dets);
  }
  return s;
}

// Oracle mAP mirroring the documented averaging rules.
std::pair<double, double> oracle_map(const Scene& s, int nc) {
  std::vector<int> included;
  for (int c = 0; c < nc; ++c) {
    int n_gt = 0, n_det = 0;
    for (const auto& g : s.gts)
      for (const auto& b : g) n_gt += b.class_id == c;
    for (const auto& d : s.dets)
      for (const auto& det : d) n_det += det.class_id == c;
    if (n_gt > 0 || n_det > 0) included.push_back(c);
  }
  if (included.empty()) return {0.0, 0.0};

  auto class_ap = [&](int c, double thr, bool grid101) {
    struct Entry {
      double score;
      int image, idx;
      char tp;
    };
    std::vector<Entry> entries;
    int n_gt = 0;
    for (std::size_t img = 0; img < s.dets.size(); ++img) {
      std::vector<Detection> cls;
      std::vector<GtBox> gcls;
      for (const auto& d : s.dets[img])
        if (d.class_id == c) cls.push_back(d);
      for (const auto& g : s.gts[img])
        if (g.class_id == c) gcls.push_back(g);
      n_gt += static_cast<int>(gcls.size());
      const auto tp = oracle_match(cls, gcls, thr);
      for (std::size_t k = 0; k < cls.size(); ++k)
        entries.push_back({cls[k].score, static_cast<int>(img),
                           static_cast<int>(k), tp[k]});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.image != b.image) return a.image < b.image;
      return a.idx < b.idx;
    });
    std::vector<char> flags;
    for (const auto& e : entries) flags.push_back(e.tp);
    return oracle_ap(flags, n_gt, grid101);
  };

  double m50 = 0.0;
  for (int c : included) m50 += class_ap(c, 0.5, false);
  m50 /= static_cast<double>(included.size());
  double agg = 0.0;
  for (int t = 0; t < 10; ++t) {
    double acc = 0.0;
    for (int c : included) acc += class_ap(c, 0.5 + 0.05 * t, true);
    agg += acc / static_cast<double>(included.size());
  }
  return {m50, agg / 10.0};
}

}  // namespace

TEST_CASE("matching basics") {
  const std::vector<GtBox> gts = {{0, {0.5, 0.5, 0.2, 0.2}}};
  std::vector<Detection> dets = {{0, 0.9, {0.5, 0.5, 0.2, 0.2}}};
  auto tp = match_detections(dets, gts, 0.5);
  CHECK(tp == std::vector<char>{1});

  // Two detections on one GT: only the higher-scored one matches.
  dets = {{0, 0.9, {0.5, 0.5, 0.2, 0.2}}, {0, 0.8, {0.51, 0.5, 0.2, 0.2}}};
  tp = match_detections(dets, gts, 0.5);
  CHECK(tp == std::vector<char>{1, 0});

  // Class mismatch never matches.
  dets = {{1, 0.9, {0.5, 0.5, 0.2, 0.2}}};
  CHECK(match_detections(dets, gts, 0.5) == std::vector<char>{0});

  // Unsorted input violates the precondition.
  dets = {{0, 0.5, {0.5, 0.5, 0.2, 0.2}}, {0, 0.9, {0.5, 0.5, 0.2, 0.2}}};
  CHECK_THROWS_AS(match_detections(dets, gts, 0.5), ContractError);
}

TEST_CASE("average precision analytic cases") {
  // All three GT found, no false positives.
  CHECK(average_precision({1, 1, 1}, {0.9, 0.8, 0.7}, 3, false) ==
        doctest::Approx(1.0));
  CHECK(average_precision({0, 0}, {0.9, 0.8}, 2, false) == 0.0);
  CHECK(average_precision({}, {}, 0, false) == 0.0);

  // Hand case, 5 detections / 3 GT, flags 1,0,1,0,1:
  // precisions 1, 1/2, 2/3, 1/2, 3/5; envelope 1, 2/3, 2/3, 3/5, 3/5;
  // AP = 1/3*1 + 1/3*(2/3) + 1/3*(3/5) = 34/45.
  CHECK(average_precision({1, 0, 1, 0, 1}, {0.9, 0.8, 0.7, 0.6, 0.5}, 3,
                          false) == doctest::Approx(34.0 / 45.0).epsilon(1e-12));
}

TEST_CASE("AP is invariant to monotone score rescaling") {
  Rng r(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(r.next() % 10);
    std::vector<char> tp;
    std::vector<double> scores;
    double s = 1.0;
    for (int k = 0; k < n; ++k) {
      s *= r.uniform(0.5, 0.99);
      scores.push_back(s);
      tp.push_back(r.uniform() < 0.5 ? 1 : 0);
    }
    const int n_gt = 2 + static_cast<int>(r.next() % 5);
    const double base = average_precision(tp, scores, n_gt, trial % 2 == 0);
    std::vector<double> squashed;
    for (double v : scores) squashed.push_back(0.1 + 0.8 * v * v);
    CHECK(average_precision(tp, squashed, n_gt, trial % 2 == 0) ==
          doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("appending a lowest-score false positive never increases AP") {
  Rng r(5);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(r.next() % 8);
    std::vector<char> tp;
    std::vector<double> scores;
    double s = 1.0;
    for (int k = 0; k < n; ++k) {
      s *= r.uniform(0.5, 0.99);
      scores.push_back(s);
      tp.push_back(r.uniform() < 0.6 ? 1 : 0);
    }
    const int n_gt = 1 + static_cast<int>(r.next() % 5);
    const bool grid = trial % 2 == 0;
    const double base = average_precision(tp, scores, n_gt, grid);
    tp.push_back(0);
    scores.push_back(scores.back() * 0.5);
    CHECK(average_precision(tp, scores, n_gt, grid) <= base + 1e-15);
  }
}

TEST_CASE("metric pipeline equals the brute-force oracle on random scenes") {
  Rng r(7);
  int map_dominance_checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int nc = 1 + static_cast<int>(r.next() % 3);
    const Scene s = random_scene(r, 1 + static_cast<int>(r.next() % 4), nc);
    const MapResult got = map_at(s.dets, s.gts, nc);
    const auto [m50, m5095] = oracle_map(s, nc);
    CHECK(std::abs(got.map50 - m50) < 1e-9);
    CHECK(std::abs(got.map5095 - m5095) < 1e-9);
    CHECK(got.map50 >= got.map5095 - 1e-12);
    ++map_dominance_checked;
  }
  CHECK(map_dominance_checked >= 100);
}

TEST_CASE("perfect detector scores (1.0, 1.0)") {
  Scene s;
  s.gts = {{{0, {0.3, 0.3, 0.2, 0.2}}, {1, {0.7, 0.7, 0.2, 0.2}}},
           {{0, {0.5, 0.5, 0.4, 0.3}}}};
  s.dets.resize(2);
  for (std::size_t i = 0; i < s.gts.size(); ++i)
    for (const auto& g : s.gts[i])
      s.dets[i].push_back({g.class_id, 0.9, g.box});
  const MapResult m = map_at(s.dets, s.gts, 2);
  CHECK(m.map50 == doctest::Approx(1.0));
  CHECK(m.map5095 == doctest::Approx(1.0));

  const EvalReport rep =
      compute_report(s.dets, s.gts, {"a", "b"}, 100.0, {});
  CHECK(rep.precision == doctest::Approx(1.0));
  CHECK(rep.recall == doctest::Approx(1.0));
  CHECK(rep.f1 == doctest::Approx(1.0));
}

TEST_CASE("class excluded from mAP only when absent from GT and detections") {
  Scene s;
  s.gts = {{{0, {0.5, 0.5, 0.2, 0.2}}}};
  s.dets = {{{0, 0.9, {0.5, 0.5, 0.2, 0.2}}}};
  // Class 1 nowhere: excluded; perfect class 0 alone gives mAP 1.
  CHECK(map_at(s.dets, s.gts, 2).map50 == doctest::Approx(1.0));
  // A hallucinated class-1 detection pulls the mean down to 0.5.
  s.dets[0].push_back({1, 0.8, {0.2, 0.2, 0.1, 0.1}});
  std::sort(s.dets[0].begin(), s.dets[0].end(),
            [](const Detection& a, const Detection& b) {
              return a.score > b.score;
            });
  CHECK(map_at(s.dets, s.gts, 2).map50 == doctest::Approx(0.5));
}

TEST_CASE("fps benchmark excludes warmup and reports the median rate") {
  Tensor img({1, 3, 8, 8});
  int calls = 0;
  const double fps = fps_benchmark(
      [&](const Tensor&) {
        ++calls;
        volatile double sink = 0;
        for (int i = 0; i < 2000; ++i) sink += i * 0.5;
      },
      {&img}, 3, 11);
  CHECK(calls == 14);
  CHECK(fps > 0.0);
  CHECK_THROWS_AS(fps_benchmark([](const Tensor&) {}, {&img}, 0, 0),
                  ConfigError);
}

TEST_CASE("report exports round-trip and regenerate deterministically") {
  Rng r(11);
  const Scene s = random_scene(r, 3, 2);
  EvalReport rep = compute_report(s.dets, s.gts, {"blob", "star"}, 42.0,
                                  {{"mode", "detect_only"}});
  const nlohmann::json j = rep.to_json();
  const EvalReport back = EvalReport::from_json(j);
  CHECK(back.map50 == rep.map50);
  CHECK(back.map5095 == rep.map5095);
  CHECK(back.f1 == rep.f1);
  CHECK(back.pr_points.size() == rep.pr_points.size());
  CHECK(back.to_json() == j);

  const fs::path dir = fs::temp_directory_path() / "bgtest_report";
  fs::remove_all(dir);
  export_report(rep, dir);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "pr_blob.csv"));
  CHECK(fs::exists(dir / "pr_curve.png"));
  CHECK(fs::file_size(dir / "pr_curve.png") > 0);

  // PR CSV row count = number of score thresholds evaluated for the class.
  std::ifstream csv(dir / "pr_blob.csv");
  std::string line;
  int rows = -1;  // header
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == static_cast<int>(rep.pr_points.at(0).size()));

  // Deterministic regeneration: identical plot bytes.
  auto bytes = [&](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  const std::string png1 = bytes(dir / "pr_curve.png");
  export_report(rep, dir);
  CHECK(bytes(dir / "pr_curve.png") == png1);
}
