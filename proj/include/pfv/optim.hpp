#pragma once

#include <cstdint>
#include <vector>

#include "pfv/tensor.hpp"

namespace pfv {

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard bias-corrected Adam over a fixed parameter list. A parameter whose
// grad buffer is absent at step() time is treated as having zero gradient
// (moments decay, no fresh signal). Updates are element-wise and
// deterministic regardless of thread count.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<T> params, AdamConfig cfg);

  void zero_grad();
  void step();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }
  const ParamList<T>& params() const { return params_; }

  // Moment state, exposed for checkpointing; indices align with params().
  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  std::vector<std::vector<T>>& moment1() { return m_; }
  std::vector<std::vector<T>>& moment2() { return v_; }

 private:
  ParamList<T> params_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Reduce-on-plateau over a maximized metric (validation accuracy): after
// `patience` consecutive observations with no strict improvement over the
// best seen, the multiplier shrinks by `factor` and the bad-epoch count
// resets. The multiplier never increases.
struct PlateauConfig {
  double factor = 0.1;
  int patience = 30;
};

class PlateauSchedule {
 public:
  PlateauSchedule() = default;
  explicit PlateauSchedule(PlateauConfig cfg) : cfg_(cfg) {}

  // Feed one per-epoch metric; returns true when the multiplier was reduced
  // by this observation.
  bool observe(double metric);
  double multiplier() const { return mult_; }

  // State for checkpointing.
  double best() const { return best_; }
  int bad_epochs() const { return bad_; }
  void restore(double best, int bad_epochs, double multiplier);

 private:
  PlateauConfig cfg_;
  bool seen_ = false;
  double best_ = 0.0;
  int bad_ = 0;
  double mult_ = 1.0;
};

}  // namespace pfv
