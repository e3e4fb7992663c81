#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace scslit {

/// Options for the Dormand-Prince 5(4) stepper.
struct AdaptiveOptions {
  double rtol = 1e-10;
  double atol = 1e-14;
  double initial_step = 0.0;  // 0 selects 1e-6 * |t1 - t0|
  double min_step = 1e-300;
  double max_step = 0.0;      // 0 means unbounded
  std::size_t max_steps = 200000;
  /// Cap each step at this fraction of (t - t0) once t > t0. Zero disables.
  double start_cap_fraction = 0.5;
};

struct StepInfo {
  double t = 0.0;
  std::span<const double> y;
  double h = 0.0;      // size of the step just accepted
  double error = 0.0;  // scaled error norm of that step (<= 1)
};

struct IntegrationSummary {
  double t_end = 0.0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  bool stopped_by_observer = false;
};

using OdeRhs = std::function<void(double t, std::span<const double> y, std::span<double> dydt)>;
/// Fills per-component error scales for the current state (replaces the
/// default atol + rtol * |y|).
using ErrorScale = std::function<void(std::span<const double> y, std::span<double> scale)>;
/// Called after each accepted step; returning false ends integration.
using StepObserver = std::function<bool(const StepInfo&)>;

/// Integrates y' = rhs(t, y) from t0 to t1 in place. The right-hand side may
/// throw DegeneracyError; the trial step is then rejected and retried smaller.
/// Throws StiffnessError when the step falls below min_step; `y` then holds
/// the last accepted state.
IntegrationSummary integrate_dopri5(const OdeRhs& rhs, double t0, double t1,
                                    std::vector<double>& y, const AdaptiveOptions& opts,
                                    const StepObserver& observer = {},
                                    const ErrorScale& scale = {});

}  // namespace scslit
