#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bg/enhancer.hpp"

using namespace bg;

namespace {

Tensor random_image(Rng& r, int n, int h, int w, double lo = 0.1,
                    double hi = 0.9) {
  Tensor t({n, 3, h, w});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = r.uniform(lo, hi);
  return t;
}

void zero_head(Generator& g) {
  for (Param* p : g.params())
    if (p->name.find(".head.") != std::string::npos) p->value.fill(0.0);
}

// Sets the generator to x -> clamp01(x + shift).
void make_shift(Generator& g, double shift) {
  zero_head(g);
  const double bias = std::atanh(shift);
  for (Param* p : g.params())
    if (p->name.find(".head.b") != std::string::npos) p->value.fill(bias);
}

}  // namespace

TEST_CASE("generator output matches input shape and stays in [0,1]") {
  Rng r(1);
  Generator g("g", r, 4, 2);
  const Tensor x = random_image(r, 2, 16, 24, 0.0, 1.0);
  const Tensor y = g.forward(x, false);
  REQUIRE(y.same_shape(x));
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(y[i] >= 0.0);
    CHECK(y[i] <= 1.0);
  }
  Tensor bad({1, 3, 18, 18});  // not divisible by 4
  CHECK_THROWS_AS(g.forward(bad, false), ShapeError);
}

TEST_CASE("near-zero-initialized head gives a near-identity mapping") {
  Rng r(2);
  Generator g("g", r, 8, 3);
  const Tensor x = random_image(r, 2, 32, 32, 0.0, 1.0);
  const Tensor y = g.forward(x, false);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    max_diff = std::max(max_diff, std::abs(y[i] - x[i]));
  CHECK(max_diff < 0.05);
}

TEST_CASE("adversarial loss analytic values and limits") {
  Tensor real({1, 1, 4, 4}), fake({1, 1, 4, 4});
  real.fill(0.5);
  fake.fill(0.5);
  CHECK(adversarial_loss(real, fake) ==
        doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
  CHECK(adversarial_loss(real, fake) == doctest::Approx(-1.3863).epsilon(1e-4));

  // Discriminator optimum: real -> 1, fake -> 0 drives the loss to 0^-.
  real.fill(1.0 - 1e-7);
  fake.fill(1e-7);
  const double opt = adversarial_loss(real, fake);
  CHECK(opt < 0.0);
  CHECK(opt > -1e-5);

  real.fill(1.5);
  CHECK_THROWS_AS(adversarial_loss(real, fake), NumericsError);
  real.fill(0.0);
  CHECK_THROWS_AS(adversarial_loss(real, fake), NumericsError);
}

TEST_CASE("adversarial loss matches an element-wise oracle on random grids") {
  Rng r(3);
  for (int trial = 0; trial < 60; ++trial) {
    Tensor real({2, 1, 3, 5}), fake({2, 1, 3, 5});
    for (std::size_t i = 0; i < real.numel(); ++i) {
      real[i] = r.uniform(1e-6, 1.0 - 1e-6);
      fake[i] = r.uniform(1e-6, 1.0 - 1e-6);
    }
    double acc_r = 0.0, acc_f = 0.0;
    for (std::size_t i = 0; i < real.numel(); ++i) {
      acc_r += std::log(real[i]);
      acc_f += std::log(1.0 - fake[i]);
    }
    const double oracle = acc_r / static_cast<double>(real.numel()) +
                          acc_f / static_cast<double>(fake.numel());
    CHECK(std::abs(adversarial_loss(real, fake) - oracle) < 1e-6);
  }
}

TEST_CASE("cycle image loss: identity, constant shift, and oracle") {
  Rng r(4);
  GeneratorPair gp(r, 4, 1);
  const Tensor xu = random_image(r, 1, 8, 8, 0.1, 0.7);
  const Tensor xa = random_image(r, 1, 8, 8, 0.1, 0.7);

  zero_head(gp.g_u2a);
  zero_head(gp.g_a2u);
  CHECK(cycle_image_loss(gp, xu, xa).total() == doctest::Approx(0.0));

  // g_a2u shifts by +0.1: forward cycle differs by exactly 0.1 everywhere,
  // and the reverse cycle picks up the same offset before g_u2a's identity.
  make_shift(gp.g_a2u, 0.1);
  const CycleLossParts parts = cycle_image_loss(gp, xu, xa);
  CHECK(parts.forward_term == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(parts.total() == doctest::Approx(0.2).epsilon(1e-9));

  // Random generators against a scalar-loop oracle.
  Rng r2(5);
  GeneratorPair gp2(r2, 4, 1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor u = random_image(r2, 1, 8, 8);
    const Tensor a = random_image(r2, 1, 8, 8);
    const Tensor rec_u = gp2.g_a2u.forward(gp2.g_u2a.forward(u, false), false);
    const Tensor rec_a = gp2.g_u2a.forward(gp2.g_a2u.forward(a, false), false);
    double acc = 0.0;
    for (std::size_t i = 0; i < u.numel(); ++i) acc += std::abs(rec_u[i] - u[i]);
    double acc2 = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
      acc2 += std::abs(rec_a[i] - a[i]);
    const double oracle = acc / static_cast<double>(u.numel()) +
                          acc2 / static_cast<double>(a.numel());
    CHECK(std::abs(cycle_image_loss(gp2, u, a).total() - oracle) < 1e-6);
  }
}

TEST_CASE("perceptual cycle loss: identity, positivity, oracle") {
  Rng r(6);
  GeneratorPair gp(r, 4, 1);
  PerceptualExtractor phi;
  const Tensor xu = random_image(r, 1, 8, 8);
  const Tensor xa = random_image(r, 1, 8, 8);

  GeneratorPair id(r, 4, 1);
  zero_head(id.g_u2a);
  zero_head(id.g_a2u);
  CHECK(perceptual_cycle_loss(phi, id, xu, xa) == doctest::Approx(0.0));

  for (int trial = 0; trial < 10; ++trial) {
    const Tensor u = random_image(r, 1, 8, 8);
    const Tensor a = random_image(r, 1, 8, 8);
    const double loss = perceptual_cycle_loss(phi, gp, u, a);
    CHECK(loss >= 0.0);

    // Scalar-loop oracle over the extractor features.
    auto mse_sum = [&](const Tensor& p, const Tensor& q) {
      auto fp = phi.forward(p, false);
      auto fq = phi.forward(q, false);
      double acc = 0.0;
      for (int l = 0; l < 2; ++l) {
        double lvl = 0.0;
        for (std::size_t i = 0; i < fp[static_cast<std::size_t>(l)].numel(); ++i) {
          const double d = fp[static_cast<std::size_t>(l)][i] -
                           fq[static_cast<std::size_t>(l)][i];
          lvl += d * d;
        }
        acc += lvl / static_cast<double>(fp[static_cast<std::size_t>(l)].numel());
      }
      return acc;
    };
    const Tensor rec_u = gp.g_a2u.forward(gp.g_u2a.forward(u, false), false);
    const Tensor rec_a = gp.g_u2a.forward(gp.g_a2u.forward(a, false), false);
    const double oracle = mse_sum(u, rec_u) + mse_sum(a, rec_a);
    CHECK(std::abs(loss - oracle) < 1e-5);
  }
}

TEST_CASE("total enhancer loss is the documented weighted sum") {
  EnhancerLossParts parts;
  parts.gan_u2a = -1.0;
  parts.gan_a2u = -1.0;
  parts.cycle = 100.0;
  parts.perceptual = 0.5;
  EnhancerLossWeights w;  // lambda1 = 5e-5, lambda2 = 1 defaults
  CHECK(total_enhancer_loss(parts, w) == doctest::Approx(-1.495).epsilon(1e-12));

  w.lambda1 = 0;
  w.lambda2 = 0;
  CHECK(total_enhancer_loss(parts, w) == doctest::Approx(-2.0));

  // Linearity in each part.
  EnhancerLossWeights w2{0.3, 0.7};
  EnhancerLossParts doubled = parts;
  doubled.cycle *= 2;
  CHECK(total_enhancer_loss(doubled, w2) - total_enhancer_loss(parts, w2) ==
        doctest::Approx(0.3 * parts.cycle));
}

TEST_CASE("perceptual extractor weights are pinned and never move") {
  PerceptualExtractor a, b;
  CHECK(a.weights_checksum() == b.weights_checksum());

  // Running a full gradient pass must not move the weights.
  Rng r(8);
  GeneratorPair gp(r, 4, 1);
  DiscriminatorPair dp(r, 8);
  const Tensor xu = random_image(r, 1, 8, 8);
  const Tensor xa = random_image(r, 1, 8, 8);
  const std::uint64_t before = a.weights_checksum();
  (void)compute_enhancer_loss(gp, dp, a, xu, xa, EnhancerLossWeights{}, true);
  CHECK(a.weights_checksum() == before);
}

TEST_CASE("enhancer loss gradients match central finite differences") {
  Rng r(9);
  GeneratorPair gp(r, 4, 1);
  DiscriminatorPair dp(r, 8);
  PerceptualExtractor phi;
  // Move the generators away from the near-identity init so the L1 cycle
  // term's |rec - x| elements sit far from their kink at zero.
  for (Param* p : gp.params())
    if (p->name.find(".head.") != std::string::npos)
      p->value.fill_normal(r, 0.0, 0.3);
  const Tensor xu = random_image(r, 1, 8, 8, 0.2, 0.8);
  const Tensor xa = random_image(r, 1, 8, 8, 0.2, 0.8);
  EnhancerLossWeights w;
  w.lambda1 = 0.5;  // strengthen the cycle term so it participates

  for (Param* p : gp.params()) p->zero_grad();
  (void)compute_enhancer_loss(gp, dp, phi, xu, xa, w, true);

  auto loss_value = [&]() {
    return compute_enhancer_loss(gp, dp, phi, xu, xa, w, false).total(w);
  };

  auto params = gp.params();
  Rng pick(123);
  int checked = 0;
  const double h = 1e-6;
  for (int attempt = 0; attempt < 200 && checked < 20; ++attempt) {
    Param* p = params[pick.next() % params.size()];
    const std::size_t i = pick.next() % p->value.numel();
    const double g = p->grad[i];
    if (std::abs(g) < 1e-7) continue;  // relative error undefined near zero
    const double orig = p->value[i];
    p->value[i] = orig + h;
    const double up = loss_value();
    p->value[i] = orig - h;
    const double dn = loss_value();
    p->value[i] = orig;
    const double fd = (up - dn) / (2 * h);
    CHECK(std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-12}) <
          1e-3);
    ++checked;
  }
  CHECK(checked >= 20);
}
