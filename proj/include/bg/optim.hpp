#ifndef BG_OPTIM_HPP
#define BG_OPTIM_HPP

#include <vector>

#include "bg/nn.hpp"

namespace bg {

// Cosine interpolation from lr0 at epoch 0 to lr0*lrf at the final epoch.
double lr_schedule(double lr0, double lrf, int epoch, int total_epochs);

// SGD with classical momentum. Weight decay applies to weight tensors
// (names ending in ".w"), not biases. Frozen params are skipped entirely.
class Sgd {
public:
  Sgd(std::vector<Param*> params, double momentum, double weight_decay);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();
  void zero_grads();

  std::vector<Tensor>& state() { return velocity_; }
  const std::vector<Param*>& params() const { return params_; }

private:
  std::vector<Param*> params_;
  std::vector<Tensor> velocity_;
  double lr_ = 1e-2;
  double momentum_;
  double weight_decay_;
};

class Adam {
public:
  Adam(std::vector<Param*> params, double beta1, double beta2 = 0.999,
       double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  void step();
  void zero_grads();

  std::vector<Tensor>& state_m() { return m_; }
  std::vector<Tensor>& state_v() { return v_; }
  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  const std::vector<Param*>& params() const { return params_; }

private:
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 1e-4;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace bg

#endif  // BG_OPTIM_HPP
