#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "m2m/nn/tensor.hpp"

namespace m2m::nn {

// A tensor whose gradient is verified: `value` is perturbed in place,
// `grad` holds the analytic gradient after `compute_grads` runs.
template <typename T>
struct GradProbe {
  std::string name;
  Tensor<T>* value;
  const Tensor<T>* grad;
};

struct ProbeResult {
  std::string name;
  double max_rel_error = 0.0;  // max |a - n| / max(|a|_inf, |n|_inf) over checked entries
  double max_abs_error = 0.0;
  double grad_scale = 0.0;
  int checked = 0;
};

struct GradCheckReport {
  std::vector<ProbeResult> probes;
  double max_rel_error = 0.0;

  bool passed(double rel_tol) const { return max_rel_error < rel_tol; }
};

struct GradCheckOptions {
  double step = 0.0;  // 0 selects 1e-3 for float, 1e-5 for double
  int max_entries = 24;
  std::uint64_t seed = 7;
  double abs_floor = 1e-6;  // both gradients below this count as agreeing zeros
  std::function<bool(const std::string&, std::size_t)> exclude;  // e.g. relu kinks
};

// Fixed uniform [-1, 1] direction; dot(output, direction) is a scalar head for any layer.
template <typename T>
Tensor<T> random_direction(const Shape& shape, std::uint64_t seed) {
  Tensor<T> d(shape);
  std::mt19937_64 rng(seed);
  fill_uniform(d, -1.0, 1.0, rng);
  return d;
}

template <typename T>
double default_fd_step() {
  return std::is_same_v<T, float> ? 1e-3 : 1e-5;
}

namespace detail {

// Perturbs values[k] (type R) and compares against analytic[k].
template <typename R>
GradCheckReport central_differences(const std::function<double()>& loss, const std::vector<std::string>& names,
                                    const std::vector<Tensor<R>*>& values, const std::vector<Tensor<double>>& analytic,
                                    double h, const GradCheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (std::size_t k = 0; k < values.size(); ++k) {
    Tensor<R>& value = *values[k];
    if (analytic[k].shape() != value.shape()) throw ShapeError("gradient_check: gradient shape mismatch for " + names[k]);
    std::vector<std::size_t> idx(value.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (static_cast<int>(idx.size()) > opt.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(opt.max_entries));
    }
    ProbeResult r;
    r.name = names[k];
    double max_a = 0.0, max_n = 0.0, max_diff = 0.0;
    for (std::size_t i : idx) {
      if (opt.exclude && opt.exclude(r.name, i)) continue;
      const R saved = value[i];
      value[i] = static_cast<R>(saved + h);
      const double plus = loss();
      value[i] = static_cast<R>(saved - h);
      const double minus = loss();
      value[i] = saved;
      // The step actually applied differs from h after rounding to R.
      const double applied = static_cast<double>(static_cast<R>(saved + h)) -
                             static_cast<double>(static_cast<R>(saved - h));
      const double numeric = (plus - minus) / applied;
      const double a = analytic[k][i];
      max_a = std::max(max_a, std::abs(a));
      max_n = std::max(max_n, std::abs(numeric));
      max_diff = std::max(max_diff, std::abs(a - numeric));
      ++r.checked;
    }
    const double scale = std::max(max_a, max_n);
    r.grad_scale = scale;
    r.max_abs_error = max_diff;
    r.max_rel_error = scale < opt.abs_floor ? (max_diff < opt.abs_floor ? 0.0 : 1.0) : max_diff / scale;
    report.max_rel_error = std::max(report.max_rel_error, r.max_rel_error);
    report.probes.push_back(std::move(r));
  }
  return report;
}

}  // namespace detail

// Central finite differences against analytic gradients. `loss` must be a pure
// function of the probe values; it is evaluated 2 * entries times per probe.
template <typename T>
GradCheckReport gradient_check(const std::function<double()>& loss, const std::function<void()>& compute_grads,
                               const std::vector<GradProbe<T>>& probes, GradCheckOptions opt = {}) {
  compute_grads();
  std::vector<std::string> names;
  std::vector<Tensor<T>*> values;
  std::vector<Tensor<double>> analytic;
  for (const auto& p : probes) {
    names.push_back(p.name);
    values.push_back(p.value);
    analytic.push_back(p.grad->template cast<double>());
  }
  return detail::central_differences(loss, names, values, analytic, opt.step > 0 ? opt.step : default_fd_step<T>(),
                                     opt);
}

// Low-precision analytic gradients against central differences of a
// double-precision replica of the same function. Deep ReLU stacks cross many
// kinks at any step float resolution can support, so composed float networks
// are checked this way. `reference[k]` must mirror `analytic[k]`.
template <typename T>
GradCheckReport gradient_check_against_reference(const std::function<double()>& reference_loss,
                                                 const std::function<void()>& compute_grads,
                                                 const std::vector<GradProbe<double>>& reference,
                                                 const std::vector<const Tensor<T>*>& analytic_grads,
                                                 GradCheckOptions opt = {}) {
  if (reference.size() != analytic_grads.size()) throw ShapeError("gradient_check: probe count mismatch");
  compute_grads();
  std::vector<std::string> names;
  std::vector<Tensor<double>*> values;
  std::vector<Tensor<double>> analytic;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    names.push_back(reference[k].name);
    values.push_back(reference[k].value);
    analytic.push_back(analytic_grads[k]->template cast<double>());
  }
  return detail::central_differences(reference_loss, names, values, analytic,
                                     opt.step > 0 ? opt.step : default_fd_step<double>(), opt);
}

}  // namespace m2m::nn
