#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bg/guidance.hpp"
#include "bg/optim.hpp"

using namespace bg;

namespace {

DetectorConfig tiny_cfg() {
  DetectorConfig cfg;
  cfg.num_classes = 2;
  cfg.width_multiplier = 0.5;
  return cfg;
}

void copy_params(DetectorNet& from, DetectorNet& to) {
  auto a = from.params();
  auto b = to.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) b[i]->value = a[i]->value;
}

void make_identity(Generator& g) {
  for (Param* p : g.params())
    if (p->name.find(".head.") != std::string::npos) p->value.fill(0.0);
}

}  // namespace

TEST_CASE("feature consistency loss: identity, arithmetic, oracle") {
  Tensor f({1, 1, 2, 2});
  f[0] = 1;
  f[1] = 2;
  f[2] = 3;
  f[3] = 4;
  CHECK(feature_consistency_loss(f, f, 1) == 0.0);

  Tensor i = f;
  i[3] = 6;  // (0+0+0+4)/4 = 1.0
  CHECK(feature_consistency_loss(f, i, 1) == doctest::Approx(1.0));
  // With one channel the literal h*w normalization agrees.
  CHECK(feature_consistency_loss(f, i, 1, true) == doctest::Approx(1.0));

  Rng r(3);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor a({1, 3, 4, 4}), b({1, 3, 4, 4});
    a.fill_normal(r, 0, 1);
    b.fill_normal(r, 0, 1);
    double acc = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k)
      acc += (a[k] - b[k]) * (a[k] - b[k]);
    CHECK(std::abs(feature_consistency_loss(a, b, 2) - acc / 48.0) < 1e-6);
    // Literal mode averages over h*w only (channels summed).
    CHECK(std::abs(feature_consistency_loss(a, b, 2, true) - acc / 16.0) <
          1e-6);
  }

  Tensor bad({1, 1, 2, 3});
  try {
    feature_consistency_loss(f, bad, 2);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("level 2") != std::string::npos);
  }
}

TEST_CASE("consistency loss is invariant to a shared spatial permutation") {
  Rng r(5);
  Tensor a({1, 2, 3, 3}), b({1, 2, 3, 3});
  a.fill_normal(r, 0, 1);
  b.fill_normal(r, 0, 1);
  const double base = feature_consistency_loss(a, b, 1);

  // Permute spatial positions identically in both tensors.
  std::vector<int> perm(9);
  for (int k = 0; k < 9; ++k) perm[static_cast<std::size_t>(k)] = k;
  r.shuffle(perm);
  Tensor ap({1, 2, 3, 3}), bp({1, 2, 3, 3});
  for (int c = 0; c < 2; ++c)
    for (int k = 0; k < 9; ++k) {
      const int src = perm[static_cast<std::size_t>(k)];
      ap.at(0, c, k / 3, k % 3) = a.at(0, c, src / 3, src % 3);
      bp.at(0, c, k / 3, k % 3) = b.at(0, c, src / 3, src % 3);
    }
  CHECK(feature_consistency_loss(ap, bp, 1) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("full guided loss weighting, levels, and errors") {
  Rng r(7);
  FeatureTapSet F, I;
  F.source = TapSource::detection_branch;
  I.source = TapSource::enhancement_branch;
  for (int l = 0; l < 3; ++l) {
    F.taps[static_cast<std::size_t>(l)] = Tensor({1, 2, 4, 4});
    I.taps[static_cast<std::size_t>(l)] = Tensor({1, 2, 4, 4});
    F.taps[static_cast<std::size_t>(l)].fill_normal(r, 0, 1);
    I.taps[static_cast<std::size_t>(l)].fill_normal(r, 0, 1);
  }

  GuidanceWeights w;
  w.enabled_levels = {1, 2, 3};
  w.mu1 = w.mu2 = w.mu3 = 0.0;
  CHECK(full_guided_loss(F, I, w).total == 0.0);

  w.mu1 = 1.0;
  w.enabled_levels = {1};
  const double only1 = full_guided_loss(F, I, w).total;
  CHECK(only1 ==
        doctest::Approx(feature_consistency_loss(F.taps[0], I.taps[0], 1)));

  // Linearity in each mu.
  w.enabled_levels = {1, 2, 3};
  w.mu1 = 0.5;
  w.mu2 = 2.0;
  w.mu3 = 0.25;
  const double c1 = feature_consistency_loss(F.taps[0], I.taps[0], 1);
  const double c2 = feature_consistency_loss(F.taps[1], I.taps[1], 2);
  const double c3 = feature_consistency_loss(F.taps[2], I.taps[2], 3);
  CHECK(full_guided_loss(F, I, w).total ==
        doctest::Approx(0.5 * c1 + 2.0 * c2 + 0.25 * c3).epsilon(1e-12));

  // Enabled level missing from a set.
  FeatureTapSet partial = I;
  partial.taps[2] = Tensor();
  w.enabled_levels = {3};
  CHECK_THROWS_AS(full_guided_loss(F, partial, w), ShapeError);
}

TEST_CASE("total loss arithmetic") {
  TotalLossWeights w;  // eta1=1, eta2=0.05
  CHECK(total_loss(2.0, 10.0, w) == doctest::Approx(2.5));
  w.eta2 = 0.0;
  CHECK(total_loss(2.0, 10.0, w) == doctest::Approx(2.0));
  w.eta1 = 3.0;
  CHECK(total_loss(2.0, 10.0, w) == doctest::Approx(6.0));
}

TEST_CASE("extract_pair contract: freeze required, symmetric case gives 0") {
  Rng r(11);
  const DetectorConfig cfg = tiny_cfg();
  DetectorNet det("det", cfg, r);
  DetectorNet dsn("dsn", cfg, r);
  copy_params(det, dsn);
  Generator enh("g_u2a", r, 4, 1);
  make_identity(enh);

  Tensor x({1, 3, 32, 32});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = r.uniform(0.05, 0.95);

  // Unfrozen enhancement branch is a contract violation.
  CHECK_THROWS_AS(extract_pair(det, enh, dsn, x, 3), ContractError);

  enh.frozen = true;
  dsn.frozen = true;
  const ExtractedPair pair = extract_pair(det, enh, dsn, x, 3);
  CHECK(pair.taps_f.source == TapSource::detection_branch);
  CHECK(pair.taps_i.source == TapSource::enhancement_branch);
  GuidanceWeights w;
  w.enabled_levels = {1, 2, 3};
  // Identical weights + identity enhancer: both branches see the same image
  // through the same net, so the guided loss vanishes.
  CHECK(full_guided_loss(pair.taps_f, pair.taps_i, w).total ==
        doctest::Approx(0.0));
  for (int l = 1; l <= 3; ++l)
    CHECK(pair.taps_f.level(l).shape() == pair.taps_i.level(l).shape());
}

TEST_CASE("teacher parameters are bit-identical across a student step") {
  Rng r(13);
  const DetectorConfig cfg = tiny_cfg();
  DetectorNet det("det", cfg, r);
  DetectorNet dsn("dsn", cfg, r);
  Generator enh("g_u2a", r, 4, 1);
  enh.frozen = true;
  dsn.frozen = true;
  auto teacher_params = dsn.params();
  {
    auto gp = enh.params();
    teacher_params.insert(teacher_params.end(), gp.begin(), gp.end());
  }
  const std::uint64_t before = params_checksum(teacher_params);

  Tensor x({2, 3, 32, 32});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = r.uniform(0.05, 0.95);
  std::vector<std::vector<GtBox>> gts(2);
  gts[0].push_back({0, {0.5, 0.5, 0.25, 0.2}});
  gts[1].push_back({1, {0.4, 0.6, 0.2, 0.25}});
  const auto targets = assign_targets(gts, 32, 32, cfg);

  Sgd opt(det.params(), 0.9, 0.0);
  opt.set_lr(1e-2);
  GuidanceWeights gw;
  gw.enabled_levels = {1, 2};
  TotalLossWeights tw;
  tw.eta2 = 0.5;
  for (int step = 0; step < 3; ++step) {
    opt.zero_grads();
    auto fr = det.forward(x, true);
    std::array<Tensor, 3> grads;
    (void)detection_loss(fr.heads, targets, cfg, DetectionLossWeights{},
                         &grads);
    const ExtractedPair pair = extract_pair(det, enh, dsn, x, 2);
    TapArray tap_grads{};
    for (int l : gw.enabled_levels)
      tap_grads[static_cast<std::size_t>(l - 1)] = feature_consistency_grad(
          fr.taps[static_cast<std::size_t>(l - 1)], pair.taps_i.level(l),
          tw.eta2 * gw.mu(l));
    det.backward(grads, tap_grads);
    opt.step();
  }
  CHECK(params_checksum(teacher_params) == before);
}

TEST_CASE("guidance gradient reaches the detection branch iff eta2 > 0") {
  Rng r(17);
  const DetectorConfig cfg = tiny_cfg();
  Tensor x({1, 3, 32, 32});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = r.uniform(0.05, 0.95);
  std::vector<std::vector<GtBox>> gts(1);
  gts[0].push_back({0, {0.5, 0.5, 0.3, 0.3}});
  const auto targets = assign_targets(gts, 32, 32, cfg);

  Rng seed_i(99);
  DetectorNet teacher("dsn", cfg, seed_i);
  Generator enh("g_u2a", seed_i, 4, 1);
  enh.frozen = true;
  teacher.frozen = true;

  auto grads_with_eta2 = [&](double eta2) {
    Rng ri(4242);  // identical student init for both arms
    DetectorNet det("det", cfg, ri);
    for (Param* p : det.params()) p->zero_grad();
    auto fr = det.forward(x, true);
    std::array<Tensor, 3> grads;
    (void)detection_loss(fr.heads, targets, cfg, DetectionLossWeights{},
                         &grads);
    const ExtractedPair pair = extract_pair(det, enh, teacher, x, 1);
    TapArray tap_grads{};
    tap_grads[0] =
        feature_consistency_grad(fr.taps[0], pair.taps_i.level(1), eta2);
    det.backward(grads, tap_grads);
    std::vector<double> flat;
    for (Param* p : det.params())
      for (std::size_t i = 0; i < p->grad.numel(); ++i)
        flat.push_back(p->grad[i]);
    return flat;
  };

  const auto g0 = grads_with_eta2(0.0);
  const auto g0_again = grads_with_eta2(0.0);
  const auto g1 = grads_with_eta2(0.2);
  CHECK(g0 == g0_again);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < g0.size(); ++i)
    max_diff = std::max(max_diff, std::abs(g0[i] - g1[i]));
  CHECK(max_diff > 1e-9);
}

TEST_CASE("one small gradient step on the guided loss does not increase it") {
  Rng r(23);
  const DetectorConfig cfg = tiny_cfg();
  DetectorNet det("det", cfg, r);
  DetectorNet teacher("dsn", cfg, r);
  Generator enh("g_u2a", r, 4, 1);
  enh.frozen = true;
  teacher.frozen = true;
  Tensor x({1, 3, 32, 32});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = r.uniform(0.05, 0.95);
  GuidanceWeights gw;
  gw.enabled_levels = {1, 2, 3};

  auto fgm_value = [&]() {
    FeatureTapSet F;
    F.taps = det.backbone_taps(x, 3);
    const ExtractedPair pair = extract_pair(det, enh, teacher, x, 3);
    return full_guided_loss(F, pair.taps_i, gw).total;
  };

  const double before = fgm_value();
  {
    for (Param* p : det.params()) p->zero_grad();
    auto fr = det.forward(x, true);
    const ExtractedPair pair = extract_pair(det, enh, teacher, x, 3);
    std::array<Tensor, 3> head_grads;
    for (int s = 0; s < 3; ++s)
      head_grads[static_cast<std::size_t>(s)] =
          Tensor::zeros_like(fr.heads[static_cast<std::size_t>(s)]);
    TapArray tap_grads{};
    for (int l : gw.enabled_levels)
      tap_grads[static_cast<std::size_t>(l - 1)] = feature_consistency_grad(
          fr.taps[static_cast<std::size_t>(l - 1)], pair.taps_i.level(l),
          gw.mu(l));
    det.backward(head_grads, tap_grads);
    Sgd opt(det.params(), 0.0, 0.0);
    opt.set_lr(1e-4);
    opt.step();
  }
  CHECK(fgm_value() <= before);
}
