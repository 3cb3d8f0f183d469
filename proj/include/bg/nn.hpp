#ifndef BG_NN_HPP
#define BG_NN_HPP

#include <memory>
#include <string>
#include <vector>

#include "bg/tensor.hpp"

namespace bg {

// A learnable tensor with its gradient accumulator. Optimizers skip frozen
// params; freezing never mutates values, so frozen-set checksums stay
// bit-identical across training stages.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;

  void zero_grad() { grad.fill(0.0); }
};

// 2D convolution, im2col + GEMM per sample. Caches its input when the
// forward is part of a gradient pass; backward accumulates into w/b grads
// and returns the gradient w.r.t. the input.
class Conv2d {
public:
  Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride,
         int pad);

  void init_he(Rng& rng, double gain = 1.0);

  Tensor forward(const Tensor& x, bool keep_cache);
  Tensor backward(const Tensor& grad_out);

  void collect(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

  Param w;  // (out, in, k, k)
  Param b;  // (out)

private:
  int in_ch_, out_ch_, k_, stride_, pad_;
  Tensor cached_input_;
  bool has_cache_ = false;
};

// Elementwise activations with single-slot caches.
class LeakyReLU {
public:
  explicit LeakyReLU(double slope = 0.1) : slope_(slope) {}
  Tensor forward(const Tensor& x, bool keep_cache);
  Tensor backward(const Tensor& grad_out) const;

private:
  double slope_;
  Tensor cached_input_;
};

class Sigmoid {
public:
  Tensor forward(const Tensor& x, bool keep_cache);
  Tensor backward(const Tensor& grad_out) const;

private:
  Tensor cached_output_;
};

class Tanh {
public:
  Tensor forward(const Tensor& x, bool keep_cache);
  Tensor backward(const Tensor& grad_out) const;

private:
  Tensor cached_output_;
};

// Nearest-neighbour 2x upsampling (free functions; no state).
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& grad_out);

// Channel concat/split helpers for the C3-style block.
Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

// Scalar activations shared by losses.
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Binary cross-entropy on a logit; numerically stable.
// bce = max(z,0) - z*t + log(1+exp(-|z|)); d/dz = sigmoid(z) - t.
inline double bce_with_logit(double z, double t) {
  return (z > 0 ? z : 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

std::uint64_t params_checksum(const std::vector<Param*>& params);
std::size_t params_count(const std::vector<Param*>& params);

}  // namespace bg

#endif  // BG_NN_HPP
