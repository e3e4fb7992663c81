#include "scslit/integrator.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "scslit/errors.hpp"

namespace scslit {

namespace {

// Dormand-Prince 5(4) tableau (Hairer, Norsett & Wanner, DOPRI5).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

// PI controller constants (Hairer's choice for DOPRI5).
constexpr double kBeta = 0.04;
constexpr double kExpo = 0.2 - kBeta * 0.75;
constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

}  // namespace

IntegrationSummary integrate_dopri5(const OdeRhs& rhs, double t0, double t1,
                                    std::vector<double>& y, const AdaptiveOptions& opts,
                                    const StepObserver& observer, const ErrorScale& scale) {
  IntegrationSummary summary;
  summary.t_end = t0;
  if (t1 == t0) return summary;
  if (t1 < t0) throw DomainError("integrate_dopri5: only forward integration is supported");

  const std::size_t n = y.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
  std::vector<double> stage(n), y_new(n), err_vec(n), sc(n);

  double t = t0;
  double h = opts.initial_step > 0.0 ? opts.initial_step : 1e-6 * (t1 - t0);
  double err_old = 1e-4;
  bool have_k1 = false;
  bool last_rejected = false;

  while (t < t1) {
    if (summary.accepted + summary.rejected >= opts.max_steps) {
      throw StiffnessError(fmt::format(
          "integrate_dopri5: step budget {} exhausted at t = {}", opts.max_steps, t));
    }
    if (opts.max_step > 0.0) h = std::min(h, opts.max_step);
    if (opts.start_cap_fraction > 0.0 && t > t0) {
      h = std::min(h, opts.start_cap_fraction * (t - t0));
    }
    bool last = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      last = true;
    }
    if (h < opts.min_step || t + h == t) {
      throw StiffnessError(fmt::format(
          "integrate_dopri5: step {:.3e} below floor at t = {:.17g}", h, t));
    }

    double err = 0.0;
    bool degenerate = false;
    try {
      if (!have_k1) {
        rhs(t, y, k1);
        have_k1 = true;
      }
      auto combo = [&](std::initializer_list<std::pair<double, const std::vector<double>*>> terms) {
        for (std::size_t i = 0; i < n; ++i) {
          double acc = y[i];
          for (const auto& [coef, k] : terms) acc += h * coef * (*k)[i];
          stage[i] = acc;
        }
      };
      combo({{a21, &k1}});
      rhs(t + c2 * h, stage, k2);
      combo({{a31, &k1}, {a32, &k2}});
      rhs(t + c3 * h, stage, k3);
      combo({{a41, &k1}, {a42, &k2}, {a43, &k3}});
      rhs(t + c4 * h, stage, k4);
      combo({{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}});
      rhs(t + c5 * h, stage, k5);
      combo({{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}});
      rhs(t + h, stage, k6);
      for (std::size_t i = 0; i < n; ++i) {
        y_new[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] +
                               a76 * k6[i]);
      }
      rhs(t + h, y_new, k7);
      for (std::size_t i = 0; i < n; ++i) {
        err_vec[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                          e7 * k7[i]);
      }
      if (scale) {
        scale(y, sc);
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          sc[i] = opts.atol + opts.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
        }
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = err_vec[i] / sc[i];
        sum += r * r;
      }
      err = std::sqrt(sum / static_cast<double>(n));
      if (!std::isfinite(err)) degenerate = true;
    } catch (const DegeneracyError&) {
      degenerate = true;
    }

    if (degenerate) {
      ++summary.rejected;
      h *= 0.25;
      last_rejected = true;
      continue;
    }

    if (err <= 1.0) {
      t = last ? t1 : t + h;
      y.swap(y_new);
      k1.swap(k7);
      ++summary.accepted;
      summary.t_end = t;
      const double accepted_h = h;
      double fac = std::pow(err, kExpo) / std::pow(err_old, kBeta) / kSafety;
      fac = std::clamp(fac, 1.0 / kMaxFactor, 1.0 / kMinFactor);
      double h_new = h / fac;
      if (last_rejected) h_new = std::min(h_new, h);
      err_old = std::max(err, 1e-4);
      last_rejected = false;
      h = h_new;
      if (observer && !observer(StepInfo{t, y, accepted_h, err})) {
        summary.stopped_by_observer = true;
        return summary;
      }
    } else {
      ++summary.rejected;
      const double fac = std::min(1.0 / kMinFactor, std::pow(err, kExpo) / kSafety);
      h /= fac;
      last_rejected = true;
    }
  }
  return summary;
}

}  // namespace scslit
