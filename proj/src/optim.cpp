#include "bg/optim.hpp"

#include <cmath>

namespace bg {

double lr_schedule(double lr0, double lrf, int epoch, int total_epochs) {
  if (epoch < 0 || epoch >= total_epochs)
    throw ConfigError("lr_schedule: epoch out of range");
  if (total_epochs <= 1) return lr0;
  const double t = static_cast<double>(epoch) / (total_epochs - 1);
  const double cos_factor = 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
  return lr0 * (lrf + (1.0 - lrf) * cos_factor);
}

Sgd::Sgd(std::vector<Param*> params, double momentum, double weight_decay)
    : params_(std::move(params)),
      momentum_(momentum),
      weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const Param* p : params_) velocity_.emplace_back(Tensor::zeros_like(p->value));
}

void Sgd::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (p->frozen) continue;
    const bool decay = weight_decay_ != 0.0 && p->name.size() >= 2 &&
                       p->name.compare(p->name.size() - 2, 2, ".w") == 0;
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < p->value.numel(); ++k) {
      double g = p->grad[k];
      if (decay) g += weight_decay_ * p->value[k];
      v[k] = momentum_ * v[k] + g;
      p->value[k] -= lr_ * v[k];
    }
  }
}

void Sgd::zero_grads() {
  for (Param* p : params_) p->zero_grad();
}

Adam::Adam(std::vector<Param*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Param* p : params_) {
    m_.emplace_back(Tensor::zeros_like(p->value));
    v_.emplace_back(Tensor::zeros_like(p->value));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param* p = params_[i];
    if (p->frozen) continue;
    for (std::size_t k = 0; k < p->value.numel(); ++k) {
      const double g = p->grad[k];
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
      const double mh = m_[i][k] / bc1;
      const double vh = v_[i][k] / bc2;
      p->value[k] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void Adam::zero_grads() {
  for (Param* p : params_) p->zero_grad();
}

}  // namespace bg
