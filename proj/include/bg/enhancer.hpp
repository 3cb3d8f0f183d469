#ifndef BG_ENHANCER_HPP
#define BG_ENHANCER_HPP

#include <array>
#include <atomic>
#include <string>
#include <vector>

#include "bg/nn.hpp"

namespace bg {

// Unpaired image-to-image translator. Stem + two stride-2 downsamples +
// residual blocks + two nearest-neighbour upsamples + a bounded residual
// head: out = clamp01(x + tanh(head(features))). The head starts near zero
// so the initial mapping is close to identity.
class Generator {
public:
  Generator(std::string name, Rng& rng, int base_ch = 8, int res_blocks = 3);

  // Input/output are (n,3,h,w) in [0,1]; h,w must be divisible by 4.
  Tensor forward(const Tensor& x, bool keep_cache);
  Tensor backward(const Tensor& grad_out);

  std::vector<Param*> params();
  const std::string& name() const { return name_; }

  bool frozen = false;

  // Counts every forward pass; lets callers assert that detect_only
  // inference spends zero enhancer compute.
  static std::atomic<std::uint64_t>& forward_counter();

private:
  struct ResBlock {
    Conv2d c1, c2;
    LeakyReLU a1;
    Tensor cached_in;
    ResBlock(const std::string& name, int ch)
        : c1(name + ".c1", ch, ch, 3, 1, 1),
          c2(name + ".c2", ch, ch, 3, 1, 1),
          a1(0.0) {}
  };

  std::string name_;
  int base_ch_, res_blocks_;
  Conv2d stem_;
  Conv2d down1_, down2_;
  std::vector<ResBlock> res_;
  Conv2d up1_, up2_;
  Conv2d head_;
  LeakyReLU a_stem_{0.0}, a_d1_{0.0}, a_d2_{0.0}, a_u1_{0.0}, a_u2_{0.0};
  Tanh head_tanh_;
  Tensor cached_x_, cached_pre_clamp_;
};

// PatchGAN-style discriminator; emits a grid of realness scores in (0,1),
// clamped away from {0,1} by eps before any log.
class Discriminator {
public:
  static constexpr double kScoreEps = 1e-7;

  Discriminator(std::string name, Rng& rng, int base_ch = 16);

  // Returns the score grid (n,1,h/8,w/8), values in (eps, 1-eps).
  Tensor forward(const Tensor& x, bool keep_cache);
  Tensor backward(const Tensor& grad_out);

  std::vector<Param*> params();
  bool frozen = false;

private:
  std::string name_;
  Conv2d c1_, c2_, c3_, c4_;
  LeakyReLU a1_{0.2}, a2_{0.2}, a3_{0.2};
  Sigmoid out_;
  Tensor cached_scores_;
};

// Fixed two-level convolutional feature extractor. Weights are generated
// once from a pinned seed and are never updated by any training stage.
class PerceptualExtractor {
public:
  static constexpr std::uint64_t kWeightSeed = 0x706869f2a1ull;

  PerceptualExtractor();

  // Two feature levels: (n,8,h/2,w/2) and (n,16,h/4,w/4).
  std::array<Tensor, 2> forward(const Tensor& x, bool keep_cache);
  // Backward through both levels; param grads are not touched.
  Tensor backward(const std::array<Tensor, 2>& grad_levels);

  std::uint64_t weights_checksum() const;

private:
  Conv2d c1_, c2_;
  LeakyReLU a1_{0.0}, a2_{0.0};
};

struct GeneratorPair {
  Generator g_u2a;  // underwater -> clear
  Generator g_a2u;  // clear -> underwater
  GeneratorPair(Rng& rng, int base_ch = 8, int res_blocks = 3)
      : g_u2a("g_u2a", rng, base_ch, res_blocks),
        g_a2u("g_a2u", rng, base_ch, res_blocks) {}
  std::vector<Param*> params();
};

struct DiscriminatorPair {
  Discriminator d_a;  // judges clear domain
  Discriminator d_u;  // judges underwater domain
  DiscriminatorPair(Rng& rng, int base_ch = 16)
      : d_a("d_a", rng, base_ch), d_u("d_u", rng, base_ch) {}
  std::vector<Param*> params();
};

struct EnhancerLossWeights {
  double lambda1 = 5e-5;  // image-cycle weight
  double lambda2 = 1.0;   // perceptual-cycle weight
};

// E[log D(real)] + E[log(1 - D(fake))], means over the score grids.
// Throws NumericsError if any score lies outside (0,1).
double adversarial_loss(const Tensor& d_scores_real,
                        const Tensor& d_scores_fake);

struct CycleLossParts {
  double forward_term = 0.0;   // || G_a2u(G_u2a(x_u)) - x_u ||_1 mean
  double backward_term = 0.0;  // || G_u2a(G_a2u(x_a)) - x_a ||_1 mean
  double total() const { return forward_term + backward_term; }
};

CycleLossParts cycle_image_loss(GeneratorPair& g, const Tensor& x_u,
                                const Tensor& x_a);

double perceptual_cycle_loss(PerceptualExtractor& phi, GeneratorPair& g,
                             const Tensor& x_u, const Tensor& x_a);

struct EnhancerLossParts {
  double gan_u2a = 0.0;
  double gan_a2u = 0.0;
  double cycle = 0.0;
  double perceptual = 0.0;
  double total(const EnhancerLossWeights& w) const {
    return gan_u2a + gan_a2u + w.lambda1 * cycle + w.lambda2 * perceptual;
  }
};

double total_enhancer_loss(const EnhancerLossParts& parts,
                           const EnhancerLossWeights& w);

// Evaluates the full enhancer objective on one batch and, when with_grads
// is set, accumulates its gradient w.r.t. the generator parameters
// (discriminators held fixed; the log D(real) terms are constant in the
// generators). This is both the generator update path and the surface the
// finite-difference gradient check probes.
// least_squares switches only the adversarial gradient path to the LSGAN
// variant; the reported parts stay in the log form so loss curves remain
// comparable.
EnhancerLossParts compute_enhancer_loss(GeneratorPair& g, DiscriminatorPair& d,
                                        PerceptualExtractor& phi,
                                        const Tensor& x_u, const Tensor& x_a,
                                        const EnhancerLossWeights& w,
                                        bool with_grads,
                                        bool least_squares = false);

// One discriminator update's loss value + gradient accumulation for a
// (real batch, fake batch) pair; fake images must already be detached.
double discriminator_loss_and_grads(Discriminator& d, const Tensor& real,
                                    const Tensor& fake, bool least_squares);

}  // namespace bg

#endif  // BG_ENHANCER_HPP
