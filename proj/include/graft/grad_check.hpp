#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "graft/tensor.hpp"

namespace graft {

// Central finite differences. f must be a deterministic map from the tensor
// argument to a scalar Tensor; it is evaluated with no tape active, so the
// probes never appear on a graph.
template <class S, class F>
Tensor<S> finite_diff_grad(F f, const Tensor<S>& x, double step) {
  Tensor<S> probe = x.clone();
  Tensor<S> g = Tensor<S>::zeros(x.shape());
  auto& v = probe.raw();
  auto& gv = g.raw();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const S keep = v[i];
    v[i] = keep + static_cast<S>(step);
    const double up = static_cast<double>(f(probe).item());
    v[i] = keep - static_cast<S>(step);
    const double dn = static_cast<double>(f(probe).item());
    v[i] = keep;
    gv[i] = static_cast<S>((up - dn) / (2.0 * step));
  }
  return g;
}

// Same probe but perturbing a parameter in place. f takes no argument and
// reads the parameter through whatever model references it.
template <class S, class F>
std::vector<double> finite_diff_param(F f, Tensor<S> param, double step) {
  std::vector<double> g(param.value().size());
  auto& v = param.raw();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const S keep = v[i];
    v[i] = keep + static_cast<S>(step);
    const double up = static_cast<double>(f());
    v[i] = keep - static_cast<S>(step);
    const double dn = static_cast<double>(f());
    v[i] = keep;
    g[i] = (up - dn) / (2.0 * step);
  }
  return g;
}

// Relative error with an absolute floor: values below the floor are compared
// absolutely, which keeps finite-difference noise on near-zero gradients from
// dominating the report.
inline double rel_err(double a, double b, double floor_ = 1e-4) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor_});
  return std::fabs(a - b) / denom;
}

struct GradCheck {
  std::string name;
  double max_rel = 0.0;
  Index worst = -1;  // flat index of the worst coordinate
  bool pass = true;
};

// Compares an autodiff gradient buffer against finite differences of `loss`
// (a no-arg deterministic scalar functor) taken through `param`.
template <class S, class F>
GradCheck check_param_grad(const std::string& name, F loss, Tensor<S> param,
                           const std::vector<S>& autograd, double step = 1e-5,
                           double tol = 1e-5) {
  GradCheck r;
  r.name = name;
  const std::vector<double> fd = finite_diff_param(loss, param, step);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double e = rel_err(static_cast<double>(autograd[i]), fd[i]);
    if (e > r.max_rel) {
      r.max_rel = e;
      r.worst = static_cast<Index>(i);
    }
  }
  r.pass = r.max_rel <= tol;
  return r;
}

}  // namespace graft
