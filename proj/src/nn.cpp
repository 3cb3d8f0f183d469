#include "bg/nn.hpp"

#include <Eigen/Dense>

namespace bg {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Gathers one sample into a (C*k*k) x (OH*OW) column matrix.
void im2col(const Tensor& x, int n, int k, int stride, int pad, int oh, int ow,
            RowMat& cols) {
  const int c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double* base = x.data() +
                       static_cast<std::size_t>(n) * c_in * h * w;
  for (int c = 0; c < c_in; ++c) {
    const double* plane = base + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        double* dst = cols.data() + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * ow, dst + (oy + 1) * ow, 0.0);
            continue;
          }
          const double* src_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[oy * ow + ox] = (ix < 0 || ix >= w) ? 0.0 : src_row[ix];
          }
        }
      }
    }
  }
}

// Scatters column-matrix gradients back onto the input plane.
void col2im_add(const RowMat& cols, int n, int k, int stride, int pad, int oh,
                int ow, Tensor& gx) {
  const int c_in = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  double* base = gx.data() + static_cast<std::size_t>(n) * c_in * h * w;
  for (int c = 0; c < c_in; ++c) {
    double* plane = base + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const int row = (c * k + ki) * k + kj;
        const double* src = cols.data() + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          double* dst_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst_row[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride,
               int pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
  w.name = name + ".w";
  b.name = name + ".b";
  w.value = Tensor({out_ch, in_ch, ksize, ksize});
  w.grad = Tensor({out_ch, in_ch, ksize, ksize});
  b.value = Tensor({1, out_ch, 1, 1});
  b.grad = Tensor({1, out_ch, 1, 1});
}

void Conv2d::init_he(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(in_ch_) * k_ * k_;
  w.value.fill_normal(rng, 0.0, gain * std::sqrt(2.0 / fan_in));
  b.value.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x, bool keep_cache) {
  if (x.ndim() != 4 || x.dim(1) != in_ch_)
    throw ShapeError(w.name + ": bad input " + x.shape_str());
  const int n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int oh = (h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (wd + 2 * pad_ - k_) / stride_ + 1;
  if (oh <= 0 || ow <= 0)
    throw ShapeError(w.name + ": input too small " + x.shape_str());

  Tensor y({n, out_ch_, oh, ow});
  ConstMapMat wm(w.value.data(), out_ch_, in_ch_ * k_ * k_);
  RowMat cols(in_ch_ * k_ * k_, oh * ow);
  for (int i = 0; i < n; ++i) {
    im2col(x, i, k_, stride_, pad_, oh, ow, cols);
    MapMat ym(y.data() + static_cast<std::size_t>(i) * out_ch_ * oh * ow,
              out_ch_, oh * ow);
    ym.noalias() = wm * cols;
    for (int o = 0; o < out_ch_; ++o) ym.row(o).array() += b.value[o];
  }
  // A no-grad pass leaves any pending cache untouched so that e.g. a
  // teacher-side tap extraction between a cached forward and its backward
  // does not invalidate the gradient pass.
  if (keep_cache) {
    cached_input_ = x;
    has_cache_ = true;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  if (!has_cache_)
    throw ContractError(w.name + ": backward without cached forward");
  const Tensor& x = cached_input_;
  const int n = x.dim(0), h = x.dim(2), wd = x.dim(3);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);

  Tensor gx = Tensor::zeros_like(x);
  MapMat gw(w.grad.data(), out_ch_, in_ch_ * k_ * k_);
  ConstMapMat wm(w.value.data(), out_ch_, in_ch_ * k_ * k_);
  RowMat cols(in_ch_ * k_ * k_, oh * ow);
  RowMat gcols(in_ch_ * k_ * k_, oh * ow);
  for (int i = 0; i < n; ++i) {
    ConstMapMat gm(
        grad_out.data() + static_cast<std::size_t>(i) * out_ch_ * oh * ow,
        out_ch_, oh * ow);
    im2col(x, i, k_, stride_, pad_, oh, ow, cols);
    gw.noalias() += gm * cols.transpose();
    for (int o = 0; o < out_ch_; ++o) b.grad[o] += gm.row(o).sum();
    gcols.noalias() = wm.transpose() * gm;
    col2im_add(gcols, i, k_, stride_, pad_, oh, ow, gx);
  }
  has_cache_ = false;
  return gx;
}

Tensor LeakyReLU::forward(const Tensor& x, bool keep_cache) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.numel(); ++i)
    if (y[i] < 0) y[i] *= slope_;
  if (keep_cache) cached_input_ = x;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) const {
  grad_out.require_same_shape(cached_input_, "LeakyReLU::backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (cached_input_[i] < 0) g[i] *= slope_;
  return g;
}

Tensor Sigmoid::forward(const Tensor& x, bool keep_cache) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = sigmoid(y[i]);
  if (keep_cache) cached_output_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out) const {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double y = cached_output_[i];
    g[i] *= y * (1.0 - y);
  }
  return g;
}

Tensor Tanh::forward(const Tensor& x, bool keep_cache) {
  Tensor y = x;
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(y[i]);
  if (keep_cache) cached_output_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& grad_out) const {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    const double y = cached_output_[i];
    g[i] *= 1.0 - y * y;
  }
  return g;
}

Tensor upsample2x(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < 2 * h; ++yy)
        for (int xx = 0; xx < 2 * w; ++xx)
          y.at(i, ch, yy, xx) = x.at(i, ch, yy / 2, xx / 2);
  return y;
}

Tensor upsample2x_backward(const Tensor& grad_out) {
  const int n = grad_out.dim(0), c = grad_out.dim(1);
  const int h = grad_out.dim(2) / 2, w = grad_out.dim(3) / 2;
  Tensor g({n, c, h, w});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < 2 * h; ++yy)
        for (int xx = 0; xx < 2 * w; ++xx)
          g.at(i, ch, yy / 2, xx / 2) += grad_out.at(i, ch, yy, xx);
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const int h = a.dim(2), w = a.dim(3);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w)
    throw ShapeError("concat_channels: incompatible shapes " + a.shape_str() +
                     " vs " + b.shape_str());
  Tensor y({n, ca + cb, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy(a.data() + i * ca * plane, a.data() + (i + 1) * ca * plane,
              y.data() + static_cast<std::size_t>(i) * (ca + cb) * plane);
    std::copy(b.data() + i * cb * plane, b.data() + (i + 1) * cb * plane,
              y.data() + (static_cast<std::size_t>(i) * (ca + cb) + ca) * plane);
  }
  return y;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
  const int n = g.dim(0), c = g.dim(1), h = g.dim(2), w = g.dim(3);
  const int cb = c - ca;
  ga = Tensor({n, ca, h, w});
  gb = Tensor({n, cb, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    std::copy(g.data() + static_cast<std::size_t>(i) * c * plane,
              g.data() + static_cast<std::size_t>(i) * c * plane + ca * plane,
              ga.data() + i * ca * plane);
    std::copy(g.data() + static_cast<std::size_t>(i) * c * plane + ca * plane,
              g.data() + static_cast<std::size_t>(i + 1) * c * plane,
              gb.data() + i * cb * plane);
  }
}

std::uint64_t params_checksum(const std::vector<Param*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Param* p : params)
    h = fnv1a64(p->value.data(), p->value.numel() * sizeof(double), h);
  return h;
}

std::size_t params_count(const std::vector<Param*>& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->value.numel();
  return n;
}

}  // namespace bg
