#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace maneuver::nn {

inline constexpr double kFiniteDifferenceStep = 1e-5;

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  std::size_t n_checked = 0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

/// Compares `analytic` (dL/dx for every entry of x) against central
/// differences of `loss`, perturbing x in place and restoring it.
inline GradCheckReport grad_check(std::string name, std::span<double> x,
                                  std::span<const double> analytic,
                                  const std::function<double()>& loss, double tolerance = 1e-4,
                                  double step = kFiniteDifferenceStep) {
  GradCheckReport report{std::move(name), 0.0, tolerance, x.size(), false};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = loss();
    x[i] = saved - step;
    const double down = loss();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic[i], numeric));
  }
  report.passed = x.size() == analytic.size() && report.max_rel_error < tolerance;
  return report;
}

/// Merges several reports on the same operation into one (worst error).
inline GradCheckReport merge_reports(std::string name, const std::vector<GradCheckReport>& parts) {
  GradCheckReport out{std::move(name), 0.0, 1e-4, 0, true};
  for (const auto& p : parts) {
    out.max_rel_error = std::max(out.max_rel_error, p.max_rel_error);
    out.tolerance = p.tolerance;
    out.n_checked += p.n_checked;
    out.passed = out.passed && p.passed;
  }
  return out;
}

}  // namespace maneuver::nn
