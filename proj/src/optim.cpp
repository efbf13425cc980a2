#include "pfv/optim.hpp"

#include <cmath>
#include <cstdint>

namespace pfv {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign((size_t)params_[i].tensor.numel(), T(0));
    v_[i].assign((size_t)params_[i].tensor.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double corr1 = 1.0 - std::pow(b1, (double)t_);
  const double corr2 = 1.0 - std::pow(b2, (double)t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    T* w = p.data().data();
    const bool has_grad = !p.grad().empty();
    const T* g = has_grad ? p.grad().data() : nullptr;
    T* m = m_[i].data();
    T* v = v_[i].data();
    const int64_t n = p.numel();
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < n; ++k) {
      const double gk = has_grad ? (double)g[k] : 0.0;
      const double mk = b1 * (double)m[k] + (1.0 - b1) * gk;
      const double vk = b2 * (double)v[k] + (1.0 - b2) * gk * gk;
      m[k] = (T)mk;
      v[k] = (T)vk;
      const double mhat = mk / corr1;
      const double vhat = vk / corr2;
      w[k] = (T)((double)w[k] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

bool PlateauSchedule::observe(double metric) {
  if (!seen_ || metric > best_) {
    seen_ = true;
    best_ = metric;
    bad_ = 0;
    return false;
  }
  if (++bad_ >= cfg_.patience) {
    mult_ *= cfg_.factor;
    bad_ = 0;
    return true;
  }
  return false;
}

void PlateauSchedule::restore(double best, int bad_epochs, double multiplier) {
  seen_ = true;
  best_ = best;
  bad_ = bad_epochs;
  mult_ = multiplier;
}

}  // namespace pfv
