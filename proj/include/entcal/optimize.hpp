#pragma once

// One-dimensional convex minimization for tilt parameters: safeguarded
// Newton steps on the gradient with a bisection fallback inside a bracket
// that is grown geometrically from [-1, 1].

#include <functional>

#include "entcal/core.hpp"

namespace entcal {

struct ObjectivePoint {
  double alpha = 0.0;
  double value = 0.0;
  double gradient = 0.0;
  double curvature = 0.0;
  double gradient_stderr = 0.0;  // zero for exact objectives
};

struct SolverOptions {
  double tolerance = 1e-10;     // on |gradient|, exact objectives
  double stderr_factor = 0.1;   // sample objectives stop at |gradient| <= factor * stderr
  bool sample_mode = false;
  double max_abs_alpha = 1e6;
  int max_iterations = 200;
};

struct SolverResult {
  ObjectivePoint best;
  std::vector<ObjectivePoint> trace;
  bool converged = false;
  /// Non-finite objective values were met and the search was kept to the
  /// finite region.
  bool constrained = false;
};

using Objective = std::function<ObjectivePoint(double)>;

namespace detail {

inline bool finite_point(const ObjectivePoint& p) {
  return std::isfinite(p.value) && std::isfinite(p.gradient) && std::isfinite(p.curvature);
}

}  // namespace detail

/// Minimizes a convex objective given value, gradient and curvature.
/// Throws DivergenceError when the gradient keeps its sign out to
/// |alpha| = max_abs_alpha, or when the objective is nowhere finite.
inline SolverResult minimize_convex(const Objective& objective, const SolverOptions& opts = {}) {
  SolverResult r;
  auto eval = [&](double a) {
    ObjectivePoint p = objective(a);
    p.alpha = a;
    r.trace.push_back(p);
    if (!detail::finite_point(p)) r.constrained = true;
    return p;
  };
  auto done = [&](const ObjectivePoint& p) {
    if (!detail::finite_point(p)) return false;
    const double tol = opts.sample_mode ? opts.stderr_factor * p.gradient_stderr : opts.tolerance;
    return std::abs(p.gradient) <= std::max(tol, 0.0);
  };

  ObjectivePoint cur = eval(0.0);
  if (!detail::finite_point(cur))
    throw DivergenceError("tilt objective is not finite at alpha = 0");
  if (done(cur)) {
    r.best = cur;
    r.converged = true;
    return r;
  }

  // Bracket [lo, hi] with gradient(lo) < 0 < gradient(hi).
  const double dir = cur.gradient < 0.0 ? 1.0 : -1.0;
  ObjectivePoint inner = cur;  // last finite point on the descent side
  ObjectivePoint outer;
  bool bracketed = false;
  for (double step = 1.0; step <= opts.max_abs_alpha; step *= 2.0) {
    ObjectivePoint p = eval(dir * step);
    if (!detail::finite_point(p)) {
      // Pull back toward the finite region by bisection.
      double good = inner.alpha, bad = p.alpha;
      for (int k = 0; k < 200 && !bracketed; ++k) {
        double mid = 0.5 * (good + bad);
        ObjectivePoint q = eval(mid);
        if (!detail::finite_point(q)) {
          bad = mid;
        } else if (done(q)) {
          r.best = q;
          r.converged = true;
          return r;
        } else if (q.gradient * dir < 0.0) {
          inner = q;
          good = mid;
        } else {
          outer = q;
          bracketed = true;
        }
        if (std::abs(bad - good) <= 1e-12 * std::max(1.0, std::abs(good))) break;
      }
      if (!bracketed) {
        r.best = inner;
        return r;  // minimizer sits at the edge of the finite region
      }
      break;
    }
    if (done(p)) {
      r.best = p;
      r.converged = true;
      return r;
    }
    if (p.gradient * dir < 0.0) {
      inner = p;
    } else {
      outer = p;
      bracketed = true;
      break;
    }
  }
  if (!bracketed)
    throw DivergenceError("tilt objective keeps decreasing out to |alpha| = " + std::to_string(opts.max_abs_alpha));

  ObjectivePoint lo = dir > 0 ? inner : outer;
  ObjectivePoint hi = dir > 0 ? outer : inner;
  ObjectivePoint x = std::abs(lo.gradient) < std::abs(hi.gradient) ? lo : hi;
  double prev_step = hi.alpha - lo.alpha;
  for (int it = 0; it < opts.max_iterations; ++it) {
    double next;
    bool newton_ok = x.curvature > 0.0;
    if (newton_ok) {
      next = x.alpha - x.gradient / x.curvature;
      newton_ok = next > lo.alpha && next < hi.alpha && std::abs(next - x.alpha) <= 0.5 * prev_step;
    }
    if (!newton_ok) next = 0.5 * (lo.alpha + hi.alpha);
    prev_step = std::abs(next - x.alpha);
    ObjectivePoint p = eval(next);
    if (!detail::finite_point(p)) break;  // cannot happen inside a finite bracket of a convex objective
    x = p;
    if (done(p)) {
      r.best = p;
      r.converged = true;
      return r;
    }
    if (p.gradient < 0.0) lo = p; else hi = p;
    if (hi.alpha - lo.alpha <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x.alpha))) break;
  }
  // Bracket collapsed or iterations ran out: return the best point seen.
  r.best = x;
  for (const auto& p : r.trace)
    if (detail::finite_point(p) && std::abs(p.gradient) < std::abs(r.best.gradient)) r.best = p;
  r.converged = done(r.best);
  return r;
}

}  // namespace entcal
