#pragma once

// Central finite-difference checking of analytic gradients.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtn/random.hpp"
#include "gtn/tensor.hpp"

namespace gtn {

struct InputCheck {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<InputCheck> inputs;
  double worst = 0.0;
  double tol = 0.0;
  std::size_t resamples = 0;  // restarts caused by kink crossings
  bool passed() const { return worst < tol; }
};

// Relative error with an absolute floor: gradients below the floor are
// compared absolutely, since rounding noise dominates there.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

namespace detail {

inline double eval_scalar(const ScalarFn& fn, const std::vector<Tensor>& inputs, std::uint64_t* pattern) {
  NoGradGuard ng;
  PatternScope ps;
  const double v = fn(inputs).item();
  if (pattern) *pattern = ps.hash();
  return v;
}

}  // namespace detail

/// Compares analytic gradients of fn (scalar-valued) with respect to every
/// element of every input against central differences. When a perturbation
/// flips a relu mask or a max argmax, the inputs are jittered by up to 1e-3
/// and the whole check restarts (at most `max_resamples` times).
inline GradCheckReport grad_check(const ScalarFn& fn, std::vector<Tensor> inputs, double eps = 1e-5,
                                  double tol = 1e-6, std::uint64_t seed = 0, std::size_t max_resamples = 20) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
  for (auto& t : inputs)
    for (double v : t.data())
      if (!std::isfinite(v)) throw std::invalid_argument("grad_check: non-finite input");
  Rng rng(seed);
  GradCheckReport report;
  report.tol = tol;
  for (;;) {
    for (auto& t : inputs) t.zero_grad();
    std::uint64_t base_pattern = 0;
    {
      PatternScope ps;
      Tensor out = fn(inputs);
      base_pattern = ps.hash();
      backward(out);
    }
    report.inputs.assign(inputs.size(), {});
    report.worst = 0.0;
    bool kink = false;
    for (std::size_t k = 0; k < inputs.size() && !kink; ++k) {
      auto data = inputs[k].mutable_data();
      auto& rec = report.inputs[k];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double orig = data[i];
        std::uint64_t pp = 0, pm = 0;
        data[i] = orig + eps;
        const double fp = detail::eval_scalar(fn, inputs, &pp);
        data[i] = orig - eps;
        const double fm = detail::eval_scalar(fn, inputs, &pm);
        data[i] = orig;
        if (pp != base_pattern || pm != base_pattern) {
          kink = true;
          break;
        }
        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = inputs[k].has_grad() ? inputs[k].grad()[i] : 0.0;
        const double err = grad_rel_err(analytic, numeric);
        if (i == 0 || err > rec.max_rel_err) rec = {err, i, analytic, numeric};
        report.worst = std::max(report.worst, err);
      }
    }
    if (!kink) break;
    if (report.resamples++ >= max_resamples)
      throw NumericError("grad_check: could not find a kink-free point after resampling");
    for (auto& t : inputs)
      for (double& v : t.mutable_data()) v += rng.uniform(-1e-3, 1e-3);
  }
  for (auto& t : inputs) t.zero_grad();
  return report;
}

/// Result of a spot check on selected scalar coordinates of a large parameter set.
struct SpotCheck {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct SpotCheckReport {
  std::vector<SpotCheck> checks;
  std::size_t skipped_kinks = 0;
  double worst = 0.0;
  double tol = 0.0;
  bool passed() const { return worst < tol; }
  const SpotCheck* worst_check() const {
    const SpotCheck* w = nullptr;
    for (const auto& c : checks)
      if (!w || c.rel_err > w->rel_err) w = &c;
    return w;
  }
};

/// Spot-checks `count` randomly drawn coordinates of `params`. The analytic
/// gradients must already be populated (backward has run). Coordinates whose
/// perturbation changes the activation pattern are skipped and redrawn.
inline SpotCheckReport spot_check(const std::function<double()>& loss_fn, const std::vector<std::string>& names,
                                  std::vector<Tensor> params, std::uint64_t base_pattern, std::size_t count,
                                  double eps, double tol, Rng& rng, double floor = 1e-8) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw std::invalid_argument("spot_check: eps must lie in [1e-6, 1e-3]");
  SpotCheckReport report;
  report.tol = tol;
  std::size_t total = 0;
  for (auto& p : params) total += p.numel();
  if (total == 0) return report;
  std::size_t attempts = 0;
  while (report.checks.size() < count) {
    if (++attempts > count * 20) throw NumericError("spot_check: too many kink crossings");
    std::size_t flat = rng.below(total), k = 0;
    while (flat >= params[k].numel()) flat -= params[k++].numel();
    auto data = params[k].mutable_data();
    const double orig = data[flat];
    std::uint64_t pp = 0, pm = 0;
    double fp, fm;
    {
      NoGradGuard ng;
      data[flat] = orig + eps;
      {
        PatternScope ps;
        fp = loss_fn();
        pp = ps.hash();
      }
      data[flat] = orig - eps;
      {
        PatternScope ps;
        fm = loss_fn();
        pm = ps.hash();
      }
      data[flat] = orig;
    }
    if (pp != base_pattern || pm != base_pattern) {
      ++report.skipped_kinks;
      continue;
    }
    SpotCheck c;
    c.name = names[k];
    c.index = flat;
    c.numeric = (fp - fm) / (2.0 * eps);
    c.analytic = params[k].has_grad() ? params[k].grad()[flat] : 0.0;
    c.rel_err = grad_rel_err(c.analytic, c.numeric, floor);
    report.worst = std::max(report.worst, c.rel_err);
    report.checks.push_back(std::move(c));
  }
  return report;
}

}  // namespace gtn
