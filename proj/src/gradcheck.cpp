#include "pfv/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "pfv/rng.hpp"

namespace pfv {

std::string GradCheckReport::to_text() const {
  std::string out;
  char line[256];
  snprintf(line, sizeof(line), "gradcheck: eps=%.3g tol=%.3g%s\n", eps, tol,
           richardson ? " (richardson)" : "");
  out += line;
  for (const auto& e : entries) {
    snprintf(line, sizeof(line),
             "  %-40s max_rel=%.3e analytic=%+.6e numeric=%+.6e coord=%lld [%s]\n",
             e.name.c_str(), e.max_rel_err, e.analytic, e.numeric, (long long)e.coord,
             e.pass ? "pass" : "FAIL");
    out += line;
  }
  out += all_pass ? "gradcheck: ALL PASS\n" : "gradcheck: FAILURES PRESENT\n";
  return out;
}

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss_fn, ParamList<T>& params,
                           const GradCheckOptions& opt) {
  GradCheckReport report;
  report.eps = opt.eps;
  report.tol = opt.tol;
  report.richardson = opt.richardson;

  {
    T l0 = loss_fn().item();
    T l1 = loss_fn().item();
    if (std::memcmp(&l0, &l1, sizeof(T)) != 0)
      throw std::runtime_error("grad_check: loss_fn is not deterministic");
  }

  for (auto& p : params) p.tensor.zero_grad();
  Tensor<T> loss = loss_fn();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.tensor.requires_grad() && p.tensor.grad().empty()) p.tensor.zero_grad();
    analytic.push_back(p.tensor.grad());
  }

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (!p.tensor.requires_grad()) continue;
    GradCheckReport::Entry entry;
    entry.name = p.name;
    int64_t n = p.tensor.numel();

    std::vector<int64_t> coords;
    if (n <= opt.max_coords) {
      coords.resize((size_t)n);
      for (int64_t i = 0; i < n; ++i) coords[(size_t)i] = i;
    } else {
      Rng rng(opt.seed ^ (0x5851f42d4c957f2dULL * (pi + 1)));
      std::unordered_set<int64_t> seen;
      while ((int)seen.size() < opt.max_coords) seen.insert((int64_t)rng.uniform_int((int)n));
      coords.assign(seen.begin(), seen.end());
    }

    for (int64_t ci : coords) {
      T saved = p.tensor.data()[(size_t)ci];
      // Central difference; the slope denominator is the step that was
      // actually representable, and that half-step is also what the
      // Richardson elimination below must use.
      auto central = [&](double eps, double& half_step) {
        T vp = (T)((double)saved + eps);
        T vm = (T)((double)saved - eps);
        p.tensor.data()[(size_t)ci] = vp;
        double lp = (double)loss_fn().item();
        p.tensor.data()[(size_t)ci] = vm;
        double lm = (double)loss_fn().item();
        p.tensor.data()[(size_t)ci] = saved;
        half_step = (double)(vp - vm) / 2.0;
        return (lp - lm) / (double)(vp - vm);
      };
      double h1 = 0.0, numeric;
      double d1 = central(opt.eps, h1);
      if (opt.richardson) {
        // d(h) = f' + c*h^2 + O(h^4); eliminate c using the measured steps.
        double h2 = 0.0;
        double d2 = central(opt.eps / 2.0, h2);
        numeric = (d2 * h1 * h1 - d1 * h2 * h2) / (h1 * h1 - h2 * h2);
      } else {
        numeric = d1;
      }
      double a = (double)analytic[pi][(size_t)ci];
      double denom = std::max(std::max(std::fabs(a), std::fabs(numeric)), 1e-6);
      double rel = std::fabs(a - numeric) / denom;
      ++entry.coords_checked;
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.analytic = a;
        entry.numeric = numeric;
        entry.coord = ci;
      }
    }
    entry.pass = entry.max_rel_err < opt.tol;
    if (!entry.pass) report.all_pass = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>()>&,
                                           ParamList<float>&, const GradCheckOptions&);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>()>&,
                                            ParamList<double>&, const GradCheckOptions&);

}  // namespace pfv
