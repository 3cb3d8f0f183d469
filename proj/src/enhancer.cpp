#include "bg/enhancer.hpp"

namespace bg {

namespace {

// Clamp to [0,1] with saturating gradient (zero outside the open interval).
Tensor clamp01(const Tensor& pre) {
  Tensor y = pre;
  for (std::size_t i = 0; i < y.numel(); ++i)
    y[i] = y[i] < 0.0 ? 0.0 : (y[i] > 1.0 ? 1.0 : y[i]);
  return y;
}

}  // namespace

Generator::Generator(std::string name, Rng& rng, int base_ch, int res_blocks)
    : name_(std::move(name)),
      base_ch_(base_ch),
      res_blocks_(res_blocks),
      stem_(name_ + ".stem", 3, base_ch, 3, 1, 1),
      down1_(name_ + ".down1", base_ch, 2 * base_ch, 3, 2, 1),
      down2_(name_ + ".down2", 2 * base_ch, 4 * base_ch, 3, 2, 1),
      up1_(name_ + ".up1", 4 * base_ch, 2 * base_ch, 3, 1, 1),
      up2_(name_ + ".up2", 2 * base_ch, base_ch, 3, 1, 1),
      head_(name_ + ".head", base_ch, 3, 3, 1, 1) {
  for (int i = 0; i < res_blocks; ++i)
    res_.emplace_back(name_ + ".res" + std::to_string(i), 4 * base_ch);
  stem_.init_he(rng);
  down1_.init_he(rng);
  down2_.init_he(rng);
  for (auto& rb : res_) {
    rb.c1.init_he(rng);
    rb.c2.init_he(rng);
  }
  up1_.init_he(rng);
  up2_.init_he(rng);
  // Near-zero head keeps the initial mapping close to identity, which
  // stabilises small-scale adversarial training.
  head_.init_he(rng, 1e-3);
}

std::atomic<std::uint64_t>& Generator::forward_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

Tensor Generator::forward(const Tensor& x, bool keep_cache) {
  if (x.ndim() != 4 || x.dim(1) != 3)
    throw ShapeError(name_ + ": expected (n,3,h,w), got " + x.shape_str());
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
    throw ShapeError(name_ + ": spatial dims must be divisible by 4, got " +
                     x.shape_str());
  forward_counter().fetch_add(1, std::memory_order_relaxed);

  Tensor t = a_stem_.forward(stem_.forward(x, keep_cache), keep_cache);
  t = a_d1_.forward(down1_.forward(t, keep_cache), keep_cache);
  t = a_d2_.forward(down2_.forward(t, keep_cache), keep_cache);
  for (auto& rb : res_) {
    if (keep_cache) rb.cached_in = t;
    Tensor u = rb.a1.forward(rb.c1.forward(t, keep_cache), keep_cache);
    u = rb.c2.forward(u, keep_cache);
    u.add_(t);
    t = std::move(u);
  }
  t = a_u1_.forward(up1_.forward(upsample2x(t), keep_cache), keep_cache);
  t = a_u2_.forward(up2_.forward(upsample2x(t), keep_cache), keep_cache);
  Tensor delta = head_tanh_.forward(head_.forward(t, keep_cache), keep_cache);
  Tensor pre = delta;
  pre.add_(x);
  if (keep_cache) {
    cached_x_ = x;
    cached_pre_clamp_ = pre;
  }
  return clamp01(pre);
}

Tensor Generator::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double p = cached_pre_clamp_[i];
    if (p <= 0.0 || p >= 1.0) g[i] = 0.0;
  }
  Tensor grad_x_direct = g;  // residual skip x -> output
  Tensor t = head_.backward(head_tanh_.backward(g));
  t = upsample2x_backward(up2_.backward(a_u2_.backward(t)));
  t = upsample2x_backward(up1_.backward(a_u1_.backward(t)));
  for (auto it = res_.rbegin(); it != res_.rend(); ++it) {
    Tensor gu = it->c2.backward(t);
    gu = it->c1.backward(it->a1.backward(gu));
    gu.add_(t);  // skip connection
    t = std::move(gu);
  }
  t = down2_.backward(a_d2_.backward(t));
  t = down1_.backward(a_d1_.backward(t));
  t = stem_.backward(a_stem_.backward(t));
  t.add_(grad_x_direct);
  return t;
}

std::vector<Param*> Generator::params() {
  std::vector<Param*> out;
  stem_.collect(out);
  down1_.collect(out);
  down2_.collect(out);
  for (auto& rb : res_) {
    rb.c1.collect(out);
    rb.c2.collect(out);
  }
  up1_.collect(out);
  up2_.collect(out);
  head_.collect(out);
  return out;
}

Discriminator::Discriminator(std::string name, Rng& rng, int base_ch)
    : name_(std::move(name)),
      c1_(name_ + ".c1", 3, base_ch, 3, 2, 1),
      c2_(name_ + ".c2", base_ch, 2 * base_ch, 3, 2, 1),
      c3_(name_ + ".c3", 2 * base_ch, 4 * base_ch, 3, 2, 1),
      c4_(name_ + ".c4", 4 * base_ch, 1, 3, 1, 1) {
  c1_.init_he(rng);
  c2_.init_he(rng);
  c3_.init_he(rng);
  c4_.init_he(rng);
}

Tensor Discriminator::forward(const Tensor& x, bool keep_cache) {
  Tensor t = a1_.forward(c1_.forward(x, keep_cache), keep_cache);
  t = a2_.forward(c2_.forward(t, keep_cache), keep_cache);
  t = a3_.forward(c3_.forward(t, keep_cache), keep_cache);
  t = out_.forward(c4_.forward(t, keep_cache), keep_cache);
  if (keep_cache) cached_scores_ = t;
  Tensor y = t;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (y[i] < kScoreEps) y[i] = kScoreEps;
    if (y[i] > 1.0 - kScoreEps) y[i] = 1.0 - kScoreEps;
  }
  return y;
}

Tensor Discriminator::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double s = cached_scores_[i];
    if (s < kScoreEps || s > 1.0 - kScoreEps) g[i] = 0.0;
  }
  Tensor t = c4_.backward(out_.backward(g));
  t = c3_.backward(a3_.backward(t));
  t = c2_.backward(a2_.backward(t));
  t = c1_.backward(a1_.backward(t));
  return t;
}

std::vector<Param*> Discriminator::params() {
  std::vector<Param*> out;
  c1_.collect(out);
  c2_.collect(out);
  c3_.collect(out);
  c4_.collect(out);
  return out;
}

PerceptualExtractor::PerceptualExtractor()
    : c1_("phi.c1", 3, 8, 3, 2, 1), c2_("phi.c2", 8, 16, 3, 2, 1) {
  Rng rng(kWeightSeed);
  c1_.init_he(rng);
  c2_.init_he(rng);
}

std::array<Tensor, 2> PerceptualExtractor::forward(const Tensor& x,
                                                   bool keep_cache) {
  Tensor l1 = a1_.forward(c1_.forward(x, keep_cache), keep_cache);
  Tensor l2 = a2_.forward(c2_.forward(l1, keep_cache), keep_cache);
  return {std::move(l1), std::move(l2)};
}

Tensor PerceptualExtractor::backward(const std::array<Tensor, 2>& grad_levels) {
  Tensor g = c2_.backward(a2_.backward(grad_levels[1]));
  g.add_(grad_levels[0]);
  return c1_.backward(a1_.backward(g));
}

std::uint64_t PerceptualExtractor::weights_checksum() const {
  std::uint64_t h = tensor_checksum(c1_.w.value);
  h = tensor_checksum(c1_.b.value, h);
  h = tensor_checksum(c2_.w.value, h);
  h = tensor_checksum(c2_.b.value, h);
  return h;
}

std::vector<Param*> GeneratorPair::params() {
  auto out = g_u2a.params();
  auto more = g_a2u.params();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

std::vector<Param*> DiscriminatorPair::params() {
  auto out = d_a.params();
  auto more = d_u.params();
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

double adversarial_loss(const Tensor& d_scores_real,
                        const Tensor& d_scores_fake) {
  auto mean_log = [](const Tensor& t, bool one_minus) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double s = one_minus ? 1.0 - t[i] : t[i];
      if (s <= 0.0 || s >= 1.0)
        throw NumericsError("adversarial_loss: score outside (0,1)");
      acc += std::log(s);
    }
    return acc / static_cast<double>(t.numel());
  };
  return mean_log(d_scores_real, false) + mean_log(d_scores_fake, true);
}

CycleLossParts cycle_image_loss(GeneratorPair& g, const Tensor& x_u,
                                const Tensor& x_a) {
  x_u.require_same_shape(x_a, "cycle_image_loss");
  Tensor rec_u = g.g_a2u.forward(g.g_u2a.forward(x_u, false), false);
  Tensor rec_a = g.g_u2a.forward(g.g_a2u.forward(x_a, false), false);
  CycleLossParts parts;
  for (std::size_t i = 0; i < x_u.numel(); ++i)
    parts.forward_term += std::abs(rec_u[i] - x_u[i]);
  for (std::size_t i = 0; i < x_a.numel(); ++i)
    parts.backward_term += std::abs(rec_a[i] - x_a[i]);
  parts.forward_term /= static_cast<double>(x_u.numel());
  parts.backward_term /= static_cast<double>(x_a.numel());
  return parts;
}

namespace {

// Mean squared distance per feature level, summed over the two levels.
double phi_distance(PerceptualExtractor& phi, const Tensor& ref,
                    const Tensor& img) {
  auto f_ref = phi.forward(ref, false);
  auto f_img = phi.forward(img, false);
  double acc = 0.0;
  for (int l = 0; l < 2; ++l) {
    f_ref[l].require_same_shape(f_img[l], "perceptual_cycle_loss");
    double level = 0.0;
    for (std::size_t i = 0; i < f_ref[l].numel(); ++i) {
      const double d = f_ref[l][i] - f_img[l][i];
      level += d * d;
    }
    acc += level / static_cast<double>(f_ref[l].numel());
  }
  return acc;
}

}  // namespace

double perceptual_cycle_loss(PerceptualExtractor& phi, GeneratorPair& g,
                             const Tensor& x_u, const Tensor& x_a) {
  Tensor rec_u = g.g_a2u.forward(g.g_u2a.forward(x_u, false), false);
  Tensor rec_a = g.g_u2a.forward(g.g_a2u.forward(x_a, false), false);
  return phi_distance(phi, x_u, rec_u) + phi_distance(phi, x_a, rec_a);
}

double total_enhancer_loss(const EnhancerLossParts& parts,
                           const EnhancerLossWeights& w) {
  return parts.total(w);
}

namespace {

struct DirectionResult {
  double gan = 0.0;
  double cycle = 0.0;
  double perceptual = 0.0;
};

// One translation direction: g_fwd maps src -> other domain, g_bwd maps
// back; disc judges the target domain against real samples from it.
// When with_grads is set, gradients of
//   mean log(1 - D(fake)) + lambda1 * L1(rec, src) + lambda2 * phi-MSE
// are accumulated into both generators' params.
DirectionResult run_direction(Generator& g_fwd, Generator& g_bwd,
                              Discriminator& disc, PerceptualExtractor& phi,
                              const Tensor& src, const Tensor& target_real,
                              const EnhancerLossWeights& w, bool with_grads,
                              bool least_squares) {
  DirectionResult r;
  const Tensor scores_real = disc.forward(target_real, false);
  Tensor fake = g_fwd.forward(src, with_grads);
  const Tensor scores_fake = disc.forward(fake, with_grads);
  r.gan = adversarial_loss(scores_real, scores_fake);

  Tensor rec = g_bwd.forward(fake, with_grads);
  const std::size_t n = src.numel();
  for (std::size_t i = 0; i < n; ++i) r.cycle += std::abs(rec[i] - src[i]);
  r.cycle /= static_cast<double>(n);

  auto phi_src = phi.forward(src, false);
  auto phi_rec = phi.forward(rec, with_grads);
  std::array<double, 2> level_norm{};
  for (int l = 0; l < 2; ++l) {
    double acc = 0.0;
    for (std::size_t i = 0; i < phi_src[l].numel(); ++i) {
      const double d = phi_src[l][i] - phi_rec[l][i];
      acc += d * d;
    }
    level_norm[l] = static_cast<double>(phi_src[l].numel());
    r.perceptual += acc / level_norm[l];
  }

  if (!with_grads) return r;

  // d/d rec of lambda1 * L1 + lambda2 * phi-MSE.
  Tensor grad_rec = Tensor::zeros_like(rec);
  const double l1_scale = w.lambda1 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rec[i] - src[i];
    grad_rec[i] = d > 0 ? l1_scale : (d < 0 ? -l1_scale : 0.0);
  }
  std::array<Tensor, 2> grad_phi;
  for (int l = 0; l < 2; ++l) {
    grad_phi[l] = Tensor::zeros_like(phi_rec[l]);
    const double s = 2.0 * w.lambda2 / level_norm[l];
    for (std::size_t i = 0; i < phi_rec[l].numel(); ++i)
      grad_phi[l][i] = s * (phi_rec[l][i] - phi_src[l][i]);
  }
  grad_rec.add_(phi.backward(grad_phi));
  Tensor grad_fake = g_bwd.backward(grad_rec);

  // Adversarial gradient on the fake scores: log form minimizes
  // mean log(1 - s); the LSGAN variant minimizes mean (s - 1)^2.
  Tensor grad_scores = Tensor::zeros_like(scores_fake);
  const double inv_n = 1.0 / static_cast<double>(scores_fake.numel());
  for (std::size_t i = 0; i < scores_fake.numel(); ++i)
    grad_scores[i] = least_squares
                         ? 2.0 * (scores_fake[i] - 1.0) * inv_n
                         : -inv_n / (1.0 - scores_fake[i]);
  grad_fake.add_(disc.backward(grad_scores));

  g_fwd.backward(grad_fake);
  return r;
}

}  // namespace

EnhancerLossParts compute_enhancer_loss(GeneratorPair& g, DiscriminatorPair& d,
                                        PerceptualExtractor& phi,
                                        const Tensor& x_u, const Tensor& x_a,
                                        const EnhancerLossWeights& w,
                                        bool with_grads, bool least_squares) {
  EnhancerLossParts parts;
  const DirectionResult fwd = run_direction(g.g_u2a, g.g_a2u, d.d_a, phi, x_u,
                                            x_a, w, with_grads, least_squares);
  const DirectionResult bwd = run_direction(g.g_a2u, g.g_u2a, d.d_u, phi, x_a,
                                            x_u, w, with_grads, least_squares);
  parts.gan_u2a = fwd.gan;
  parts.gan_a2u = bwd.gan;
  parts.cycle = fwd.cycle + bwd.cycle;
  parts.perceptual = fwd.perceptual + bwd.perceptual;
  return parts;
}

double discriminator_loss_and_grads(Discriminator& d, const Tensor& real,
                                    const Tensor& fake, bool least_squares) {
  double loss = 0.0;
  const Tensor sr = d.forward(real, true);
  Tensor gr = Tensor::zeros_like(sr);
  const double inv_r = 1.0 / static_cast<double>(sr.numel());
  for (std::size_t i = 0; i < sr.numel(); ++i) {
    if (least_squares) {
      loss += (sr[i] - 1.0) * (sr[i] - 1.0) * inv_r;
      gr[i] = 2.0 * (sr[i] - 1.0) * inv_r;
    } else {
      loss += -std::log(sr[i]) * inv_r;
      gr[i] = -inv_r / sr[i];
    }
  }
  d.backward(gr);
  const Tensor sf = d.forward(fake, true);
  Tensor gf = Tensor::zeros_like(sf);
  const double inv_f = 1.0 / static_cast<double>(sf.numel());
  for (std::size_t i = 0; i < sf.numel(); ++i) {
    if (least_squares) {
      loss += sf[i] * sf[i] * inv_f;
      gf[i] = 2.0 * sf[i] * inv_f;
    } else {
      loss += -std::log(1.0 - sf[i]) * inv_f;
      gf[i] = inv_f / (1.0 - sf[i]);
    }
  }
  d.backward(gf);
  return loss;
}

}  // namespace bg
