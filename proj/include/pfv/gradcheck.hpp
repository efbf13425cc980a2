#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pfv/tensor.hpp"

namespace pfv {

struct GradCheckOptions {
  double eps = 1e-5;     // central-difference step
  double tol = 1e-6;     // max relative error allowed
  int max_coords = 64;   // coordinates probed per tensor (all if numel is smaller)
  uint64_t seed = 1234;  // picks probe coordinates for large tensors
  // Combine central differences at eps and eps/2 to cancel the O(eps^2)
  // truncation term. Needed for long compound chains: there a single step
  // size cannot make both truncation error (wants small eps) and rounding
  // cancellation on near-zero gradients (wants large eps) clear 1e-6.
  bool richardson = false;
};

// Per-parameter comparison of analytic gradients against central finite
// differences. Relative error uses a 1e-6 floor on the denominator, so
// gradients below the floor are effectively checked absolutely.
struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    double analytic = 0.0;  // analytic gradient at the worst coordinate
    double numeric = 0.0;   // numeric gradient at the worst coordinate
    int64_t coord = -1;
    int64_t coords_checked = 0;
    bool pass = true;
  };
  std::vector<Entry> entries;
  double eps = 0.0;
  double tol = 0.0;
  bool richardson = false;
  bool all_pass = true;
  std::string to_text() const;
};

// loss_fn must rebuild its graph from the current parameter values on every
// call and return a scalar; two calls at identical parameters must agree
// bitwise (verified, error otherwise). Parameters with requires_grad unset
// are skipped.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss_fn, ParamList<T>& params,
                           const GradCheckOptions& opt = {});

}  // namespace pfv
