#ifndef BG_TENSOR_HPP
#define BG_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "bg/common.hpp"
#include "bg/rng.hpp"

namespace bg {

// Dense row-major double tensor. Activations use NCHW; the double precision
// is deliberate: oracle agreement at 1e-9 and finite-difference gradient
// checks both need the headroom.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }
  Tensor(std::initializer_list<int> shape)
      : Tensor(std::vector<int>(shape)) {}

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors.
  double& at(int n, int c, int h, int w) {
    return data_[idx(n, c, h, w)];
  }
  double at(int n, int c, int h, int w) const {
    return data_[idx(n, c, h, w)];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void fill_normal(Rng& rng, double mean, double stddev) {
    for (auto& v : data_) v = rng.normal(mean, stddev);
  }

  void add_(const Tensor& other) {
    require_same_shape(other, "Tensor::add_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  }

  void scale_(double s) {
    for (auto& v : data_) v *= s;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void require_same_shape(const Tensor& o, const std::string& where) const {
    if (!same_shape(o))
      throw ShapeError(where + ": shape mismatch " + shape_str() + " vs " +
                       o.shape_str());
  }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

private:
  std::size_t idx(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

// Checksum over the exact byte image of the values (bitwise identity tests).
inline std::uint64_t tensor_checksum(const Tensor& t,
                                     std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(t.data(), t.numel() * sizeof(double), seed);
}

}  // namespace bg

#endif  // BG_TENSOR_HPP
