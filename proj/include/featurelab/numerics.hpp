// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <type_traits>
#include <vector>

#include "featurelab/common.hpp"

namespace featurelab {

/*
 * Special functions.  Everything is done in log space so that Pochhammer
 * ratios and Beta moments survive n in the thousands.
 */

inline double lgamma_pos(double x) {
#if defined(__GLIBC__) || defined(__APPLE__)
  int sign = 0;
  return ::lgamma_r(x, &sign);  // reentrant; sign is +1 for x > 0
#else
  return std::lgamma(x);
#endif
}

// log (x)_y = log Gamma(x+y) - log Gamma(x), the rising factorial.
inline double log_pochhammer(double x, double y) {
  if (!std::isfinite(x) || !std::isfinite(y) || x <= 0.0 || y < 0.0 ||
      x + y <= 0.0) {
    throw DomainError("log_pochhammer: need x > 0, y >= 0");
  }
  if (y == 0.0) return 0.0;
  return lgamma_pos(x + y) - lgamma_pos(x);
}

inline double log_beta(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || a <= 0.0 || b <= 0.0) {
    throw DomainError("log_beta: need a, b > 0");
  }
  return lgamma_pos(a) + lgamma_pos(b) - lgamma_pos(a + b);
}

inline double beta_fn(double a, double b) { return std::exp(log_beta(a, b)); }

/*
 * Quadrature.
 *
 * integrate_unit uses double-exponential (tanh-sinh) nodes.  Declared
 * endpoint singularities  f ~ s^{rho0} near 0  and  f ~ (1-s)^{rho1} near 1
 * (rho > -1) are removed first by the power substitution s = (1/2) u^{ beta },
 * beta = max(1, 2/(1+rho)), applied on each half of the interval, so the
 * transformed integrand vanishes linearly at the mapped endpoint and the
 * tolerance is certifiable rather than hoped for.
 *
 * integrate_halfline compactifies (0,inf) with u = a/(1+a) and runs the same
 * tanh-sinh rule on u; composed, the nodes are a_k = exp(pi sinh t_k) with
 * weight pi cosh(t_k) a_k, which is the overflow-safe form implemented here.
 */

struct QuadratureSpec {
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  int max_refinements = 12;
  double singularity_exponent_at_0 = 0.0;  // integrand ~ s^{rho0} near 0
  double singularity_exponent_at_1 = 0.0;  // integrand ~ (1-s)^{rho1} near 1

  void validate() const {
    if (!(rel_tol > 0.0) || !(abs_tol > 0.0)) {
      throw DomainError("QuadratureSpec: tolerances must be positive");
    }
    if (max_refinements < 1 || max_refinements > 18) {
      throw DomainError("QuadratureSpec: max_refinements out of range");
    }
    if (!(singularity_exponent_at_0 > -1.0) ||
        !(singularity_exponent_at_1 > -1.0)) {
      throw DomainError("QuadratureSpec: endpoint exponents must be > -1");
    }
  }

  QuadratureSpec with_exponents(double rho0, double rho1) const {
    QuadratureSpec s = *this;
    s.singularity_exponent_at_0 = rho0;
    s.singularity_exponent_at_1 = rho1;
    return s;
  }
};

struct IntegralResult {
  double value = 0.0;
  double error_bound = std::numeric_limits<double>::infinity();
  int refinements = 0;
  bool converged = false;
  bool nonfinite = false;  // integrand blew up at a node (divergence signal)
};

namespace detail {

// Integrands are invoked as f(s, 1-s); both coordinates are produced in a
// cancellation-free way so (1-s)^q factors stay accurate near s = 1.
template <class F>
inline double call_integrand(F&& f, double s, double oms) {
  if constexpr (std::is_invocable_v<F&, double, double>) {
    return f(s, oms);
  } else {
    return f(s);
  }
}

constexpr double kDeCutoff = 6.115;  // |(pi/2) sinh t| < ~355 keeps exp alive
constexpr double kPi = 3.14159265358979323846;

// One tanh-sinh node at abscissa t for the open interval (0,1).
// Returns weight * f(s, 1-s), or 0 where the map has underflowed.
template <class F>
inline double de_unit_term(F&& f, double t) {
  const double x = 0.5 * kPi * std::sinh(t);
  if (std::abs(x) > 354.0) return 0.0;  // s or 1-s below double range
  const double e = std::exp(-2.0 * std::abs(x));
  const double near = e / (1.0 + e);   // distance to the nearer endpoint
  const double far = 1.0 / (1.0 + e);  // distance to the farther endpoint
  const double s = (x >= 0.0) ? far : near;
  const double oms = (x >= 0.0) ? near : far;
  if (s <= 0.0 || oms <= 0.0) return 0.0;
  const double w = kPi * std::cosh(t) * s * oms;
  return w * call_integrand(f, s, oms);
}

// Shared refinement driver: a `term` functional evaluated on the doubling
// tanh-sinh node ladder.  The error estimate is the last inter-level
// difference, which for this rule overshoots the true error by orders of
// magnitude once in the convergent regime.  A non-finite term aborts the
// ladder and is reported as non-convergence (divergent or misdeclared
// integrands must fail loudly, not crash or fake a value).
template <class Term>
inline IntegralResult de_refine(Term&& term, double rel_tol, double abs_tol,
                                int max_refinements) {
  IntegralResult res;
  double h = 0.5;
  double total = 0.0;
  {
    const int kmax = static_cast<int>(kDeCutoff / h);
    for (int k = -kmax; k <= kmax; ++k) total += term(k * h);
    total *= h;
  }
  res.value = total;
  if (!std::isfinite(total)) {
    res.nonfinite = true;
    return res;
  }
  for (int level = 1; level <= max_refinements; ++level) {
    h *= 0.5;
    const int kmax = static_cast<int>(kDeCutoff / h);
    double add = 0.0;
    for (int k = -kmax; k <= kmax; ++k) {
      if (k % 2 != 0) add += term(k * h);  // new nodes: odd multiples of h
    }
    const double refined = 0.5 * total + h * add;
    if (!std::isfinite(refined)) {
      res.nonfinite = true;
      res.refinements = level;
      return res;
    }
    const double err = std::abs(refined - total);
    total = refined;
    res.value = total;
    res.error_bound = err;
    res.refinements = level;
    if (err <= std::max(abs_tol, rel_tol * std::abs(total))) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

template <class F>
inline IntegralResult de_core_unit(F&& f, double rel_tol, double abs_tol,
                                   int max_refinements) {
  return de_refine([&f](double t) { return de_unit_term(f, t); }, rel_tol,
                   abs_tol, max_refinements);
}

// Exp-sinh on (0,inf): node a = exp(pi sinh t), weight pi cosh(t) a.
template <class F>
inline IntegralResult de_core_halfline(F&& f, double rel_tol, double abs_tol,
                                       int max_refinements) {
  auto term = [&f](double t) -> double {
    const double x = kPi * std::sinh(t);
    if (std::abs(x) > 700.0) return 0.0;
    const double a = std::exp(x);
    return kPi * std::cosh(t) * a * f(a);
  };
  return de_refine(term, rel_tol, abs_tol, max_refinements);
}

}  // namespace detail

template <class F>
inline IntegralResult try_integrate_unit(F&& f, const QuadratureSpec& spec) {
  spec.validate();
  const double rho0 = spec.singularity_exponent_at_0;
  const double rho1 = spec.singularity_exponent_at_1;
  if (rho0 == 0.0 && rho1 == 0.0) {
    return detail::de_core_unit(f, spec.rel_tol, spec.abs_tol,
                                spec.max_refinements);
  }
  // Split at 1/2 and regularize each endpoint with its own power map.
  const double b0 = std::max(1.0, 2.0 / (1.0 + rho0));
  const double b1 = std::max(1.0, 2.0 / (1.0 + rho1));
  // Below DBL_MIN the distance-to-endpoint is denormal and 1/s-style factors
  // overflow; the regularized integrand is bounded there and the remaining
  // u-interval has width ~ s^(1/b), so dropping those nodes is exact to
  // working precision.
  constexpr double tiny = std::numeric_limits<double>::min();
  auto left = [&f, b0, tiny](double u, double) -> double {
    const double s = 0.5 * std::pow(u, b0);
    if (s < tiny) return 0.0;
    const double jac = 0.5 * b0 * std::pow(u, b0 - 1.0);
    if (jac == 0.0) return 0.0;
    return detail::call_integrand(f, s, 1.0 - s) * jac;
  };
  auto right = [&f, b1, tiny](double v, double) -> double {
    const double oms = 0.5 * std::pow(v, b1);
    if (oms < tiny) return 0.0;
    const double jac = 0.5 * b1 * std::pow(v, b1 - 1.0);
    if (jac == 0.0) return 0.0;
    return detail::call_integrand(f, 1.0 - oms, oms) * jac;
  };
  IntegralResult l = detail::de_core_unit(left, spec.rel_tol, 0.5 * spec.abs_tol,
                                          spec.max_refinements);
  IntegralResult r = detail::de_core_unit(right, spec.rel_tol,
                                          0.5 * spec.abs_tol,
                                          spec.max_refinements);
  IntegralResult out;
  out.value = l.value + r.value;
  out.error_bound = l.error_bound + r.error_bound;
  out.refinements = std::max(l.refinements, r.refinements);
  out.converged = l.converged && r.converged;
  out.nonfinite = l.nonfinite || r.nonfinite;
  return out;
}

// Integral of f over (0,1).  f is called as f(s) or f(s, 1-s).
template <class F>
inline double integrate_unit(F&& f, const QuadratureSpec& spec) {
  IntegralResult res = try_integrate_unit(f, spec);
  if (!res.converged) {
    throw QuadratureError(
        res.nonfinite
            ? "integrate_unit: integrand evaluated non-finite (divergent or "
              "misdeclared endpoint behavior)"
            : "integrate_unit: no convergence after " +
                  std::to_string(res.refinements) + " refinements",
        res.value, res.error_bound);
  }
  return res.value;
}

template <class F>
inline IntegralResult try_integrate_halfline(F&& f,
                                             const QuadratureSpec& spec) {
  spec.validate();
  return detail::de_core_halfline(f, spec.rel_tol, spec.abs_tol,
                                  spec.max_refinements);
}

// Integral of f over (0,inf); f must decay at infinity.
template <class F>
inline double integrate_halfline(F&& f, const QuadratureSpec& spec) {
  IntegralResult res = try_integrate_halfline(f, spec);
  if (!res.converged) {
    throw QuadratureError(
        res.nonfinite
            ? "integrate_halfline: integrand evaluated non-finite (divergent "
              "or misdeclared endpoint behavior)"
            : "integrate_halfline: no convergence after " +
                  std::to_string(res.refinements) + " refinements",
        res.value, res.error_bound);
  }
  return res.value;
}

/*
 * Log-space quadrature: computes log of the integral of exp(h) for integrands
 * supplied as log-values.  The power substitution and its Jacobian are folded
 * into the exponent, so integrands whose peak sits hundreds of log-units above
 * or below 1 (Beta kernels at large n, scaled-intensity likelihoods) never
 * leave double range; an additive shift taken from a coarse probe of the
 * regularized exponent keeps exp() itself in range.
 */

struct LogIntegralResult {
  double log_value = -std::numeric_limits<double>::infinity();
  double rel_error_bound = 0.0;
  int refinements = 0;
  bool converged = false;
  bool nonfinite = false;
};

namespace detail {

constexpr int kLogProbeNodes = 48;

// Evaluates a regularized log-integrand over (0,1), locates a finite shift,
// and integrates exp(logg - shift) with the plain tanh-sinh core.
template <class LogG>
inline void de_log_piece(LogG&& logg, double rel_tol, double abs_tol,
                         int max_refinements, double* shift_out,
                         IntegralResult* res_out) {
  double shift = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < kLogProbeNodes; ++j) {
    const double u = (j + 0.5) / kLogProbeNodes;
    const double lg = logg(u);
    if (std::isfinite(lg) && lg > shift) shift = lg;
  }
  if (!std::isfinite(shift)) shift = 0.0;
  auto f = [&logg, shift](double u, double) -> double {
    const double lg = logg(u);
    if (lg == -std::numeric_limits<double>::infinity()) return 0.0;
    return std::exp(lg - shift);
  };
  *shift_out = shift;
  *res_out = de_core_unit(f, rel_tol, abs_tol, max_refinements);
}

}  // namespace detail

// log of integral over (0,1) of exp(h(s, 1-s)); declared endpoint exponents
// describe exp(h), exactly as for integrate_unit.
template <class H>
inline LogIntegralResult try_integrate_unit_log(H&& h,
                                                const QuadratureSpec& spec) {
  spec.validate();
  constexpr double tiny = std::numeric_limits<double>::min();
  const double b0 = std::max(1.0, 2.0 / (1.0 + spec.singularity_exponent_at_0));
  const double b1 = std::max(1.0, 2.0 / (1.0 + spec.singularity_exponent_at_1));
  auto logg_left = [&h, b0, tiny](double u) -> double {
    const double s = 0.5 * std::pow(u, b0);
    if (s < tiny) return -std::numeric_limits<double>::infinity();
    return detail::call_integrand(h, s, 1.0 - s) + std::log(0.5 * b0) +
           (b0 - 1.0) * std::log(u);
  };
  auto logg_right = [&h, b1, tiny](double v) -> double {
    const double oms = 0.5 * std::pow(v, b1);
    if (oms < tiny) return -std::numeric_limits<double>::infinity();
    return detail::call_integrand(h, 1.0 - oms, oms) + std::log(0.5 * b1) +
           (b1 - 1.0) * std::log(v);
  };
  double ml = 0.0, mr = 0.0;
  IntegralResult l, r;
  detail::de_log_piece(logg_left, spec.rel_tol, spec.abs_tol,
                       spec.max_refinements, &ml, &l);
  detail::de_log_piece(logg_right, spec.rel_tol, spec.abs_tol,
                       spec.max_refinements, &mr, &r);
  LogIntegralResult out;
  out.refinements = std::max(l.refinements, r.refinements);
  out.converged = l.converged && r.converged;
  out.nonfinite = l.nonfinite || r.nonfinite;
  const double m = std::max(ml, mr);
  const double lv = std::max(0.0, l.value);  // roundoff can leave -1e-18
  const double rv = std::max(0.0, r.value);
  const double total = std::exp(ml - m) * lv + std::exp(mr - m) * rv;
  out.log_value = (total > 0.0)
                      ? m + std::log(total)
                      : -std::numeric_limits<double>::infinity();
  if (total > 0.0) {
    out.rel_error_bound =
        (std::exp(ml - m) * l.error_bound + std::exp(mr - m) * r.error_bound) /
        total;
  }
  return out;
}

template <class H>
inline double integrate_unit_log(H&& h, const QuadratureSpec& spec) {
  LogIntegralResult res = try_integrate_unit_log(h, spec);
  if (!res.converged) {
    throw QuadratureError(
        res.nonfinite
            ? "integrate_unit_log: integrand evaluated non-finite"
            : "integrate_unit_log: no convergence after " +
                  std::to_string(res.refinements) + " refinements",
        res.log_value, res.rel_error_bound);
  }
  return res.log_value;
}

// log of integral over (0,inf) of exp(h(a)).
template <class H>
inline LogIntegralResult try_integrate_halfline_log(H&& h,
                                                    const QuadratureSpec& spec) {
  spec.validate();
  auto log_term = [&h](double t) -> double {
    const double x = detail::kPi * std::sinh(t);
    if (std::abs(x) > 700.0) return -std::numeric_limits<double>::infinity();
    const double a = std::exp(x);
    return h(a) + std::log(detail::kPi * std::cosh(t)) + x;
  };
  double shift = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < detail::kLogProbeNodes; ++j) {
    const double t = -detail::kDeCutoff +
                     (2.0 * detail::kDeCutoff) * (j + 0.5) /
                         detail::kLogProbeNodes;
    const double lg = log_term(t);
    if (std::isfinite(lg) && lg > shift) shift = lg;
  }
  if (!std::isfinite(shift)) shift = 0.0;
  auto term = [&log_term, shift](double t) -> double {
    const double lg = log_term(t);
    if (lg == -std::numeric_limits<double>::infinity()) return 0.0;
    return std::exp(lg - shift);
  };
  IntegralResult core = detail::de_refine(term, spec.rel_tol, spec.abs_tol,
                                          spec.max_refinements);
  LogIntegralResult out;
  out.refinements = core.refinements;
  out.converged = core.converged;
  out.nonfinite = core.nonfinite;
  if (core.value > 0.0) {
    out.log_value = shift + std::log(core.value);
    out.rel_error_bound = core.error_bound / core.value;
  }
  return out;
}

template <class H>
inline double integrate_halfline_log(H&& h, const QuadratureSpec& spec) {
  LogIntegralResult res = try_integrate_halfline_log(h, spec);
  if (!res.converged) {
    throw QuadratureError(
        res.nonfinite
            ? "integrate_halfline_log: integrand evaluated non-finite"
            : "integrate_halfline_log: no convergence after " +
                  std::to_string(res.refinements) + " refinements",
        res.log_value, res.rel_error_bound);
  }
  return res.log_value;
}

/*
 * Tabulated densities: a normalized density on a strictly increasing grid,
 * with its CDF, used for the latent-scale posteriors and inverse sampling.
 */

struct TabulatedDensity {
  std::vector<double> grid;
  std::vector<double> log_density;
  std::vector<double> cdf;

  std::size_t size() const { return grid.size(); }
  double density(std::size_t i) const { return std::exp(log_density[i]); }

  void validate() const {
    const std::size_t n = grid.size();
    if (n < 2 || log_density.size() != n || cdf.size() != n) {
      throw DomainError("TabulatedDensity: inconsistent sizes");
    }
    for (std::size_t i = 1; i < n; ++i) {
      if (!(grid[i] > grid[i - 1])) {
        throw DomainError("TabulatedDensity: grid not strictly increasing");
      }
      if (cdf[i] < cdf[i - 1]) {
        throw DomainError("TabulatedDensity: cdf not nondecreasing");
      }
    }
    if (std::abs(cdf.front()) > 1e-9 || std::abs(cdf.back() - 1.0) > 1e-9) {
      throw DomainError("TabulatedDensity: cdf endpoints off");
    }
    double mass = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      mass += 0.5 * (density(i) + density(i + 1)) * (grid[i + 1] - grid[i]);
    }
    if (std::abs(mass - 1.0) > 1e-6) {
      throw DomainError("TabulatedDensity: density mass " +
                        std::to_string(mass) + " not 1");
    }
  }
};

inline constexpr int kDefaultDensityNodes = 2048;

// Grid over (lo,hi) with tanh clustering toward both endpoints; the first and
// last nodes are pulled a relative 1e-9 inside so open-support kernels are
// never evaluated on the boundary itself.
inline std::vector<double> clustered_grid(double lo, double hi,
                                          int n = kDefaultDensityNodes,
                                          double gamma = 4.0) {
  if (!(hi > lo) || n < 8) throw DomainError("clustered_grid: bad arguments");
  std::vector<double> g(n);
  const double th = std::tanh(gamma);
  const double span = hi - lo;
  const double eps = 1e-9;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / (n - 1);
    const double w = 0.5 * (1.0 + std::tanh(gamma * (2.0 * t - 1.0)) / th);
    g[i] = lo + span * (eps + (1.0 - 2.0 * eps) * w);
  }
  return g;
}

// Builds a normalized TabulatedDensity from unnormalized log-kernel values on
// the given grid.  Normalization is exact under the trapezoid rule on that
// grid, so cdf.back() == 1 by construction.
inline TabulatedDensity tabulate_log_values(std::vector<double> grid,
                                            std::vector<double> lk) {
  const std::size_t n = grid.size();
  if (n < 2 || lk.size() != n) {
    throw DomainError("tabulate_log_values: need matching grid and values");
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(lk[i])) {
      throw DomainError("tabulate_log_values: kernel evaluated NaN");
    }
    peak = std::max(peak, lk[i]);
  }
  if (!std::isfinite(peak)) {
    throw DegeneratePosteriorError("tabulate_log_values: kernel is zero");
  }
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = std::exp(lk[i] - peak);
  double mass = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    mass += 0.5 * (d[i] + d[i + 1]) * (grid[i + 1] - grid[i]);
  }
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw DegeneratePosteriorError("tabulate_log_kernel: zero normalizer");
  }
  const double log_mass = std::log(mass);
  TabulatedDensity out;
  out.grid = std::move(grid);
  out.log_density.resize(n);
  out.cdf.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.log_density[i] = lk[i] - peak - log_mass;
  }
  double acc = 0.0;
  out.cdf[0] = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    acc += 0.5 * (d[i] + d[i + 1]) * (out.grid[i + 1] - out.grid[i]) / mass;
    out.cdf[i + 1] = std::min(acc, 1.0);
  }
  out.cdf.back() = 1.0;
  return out;
}

inline TabulatedDensity tabulate_log_kernel(
    std::vector<double> grid, const std::function<double(double)>& log_kernel) {
  std::vector<double> lk(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) lk[i] = log_kernel(grid[i]);
  return tabulate_log_values(std::move(grid), std::move(lk));
}

// Inverse CDF at u under the piecewise-linear density implied by the table;
// within a cell the CDF is quadratic and is inverted in closed form.
inline double sample_from_tabulated(const TabulatedDensity& d, double u) {
  if (!(u > 0.0) || !(u < 1.0)) {
    throw DomainError("sample_from_tabulated: u must lie in (0,1)");
  }
  const std::size_t n = d.size();
  if (n < 2) throw DomainError("sample_from_tabulated: empty table");
  auto it = std::upper_bound(d.cdf.begin(), d.cdf.end(), u);
  std::size_t i = static_cast<std::size_t>(it - d.cdf.begin());
  i = (i == 0) ? 0 : i - 1;
  if (i >= n - 1) i = n - 2;
  const double x0 = d.grid[i], x1 = d.grid[i + 1];
  const double dx = x1 - x0;
  const double d0 = d.density(i), d1 = d.density(i + 1);
  const double tau = u - d.cdf[i];
  if (tau <= 0.0) return x0;
  const double quad = 0.5 * (d1 - d0) / dx;  // CDF(x0+y) = cdf[i] + d0 y + quad y^2
  double y;
  const double disc = d0 * d0 + 4.0 * quad * tau;
  const double denom = d0 + std::sqrt(std::max(disc, 0.0));
  if (denom > 0.0) {
    y = 2.0 * tau / denom;
  } else if (quad > 0.0) {
    y = std::sqrt(tau / quad);
  } else {
    y = 0.0;  // flat zero-density cell: no interior mass to land on
  }
  return std::min(std::max(x0 + y, x0), x1);
}

/*
 * Deterministic sampling primitives.  The engine is std::mt19937_64 (that
 * algorithm is pinned by the standard, so its stream is portable); all
 * variates are derived from raw 64-bit draws by explicit inversion, never
 * through std::*_distribution, which is implementation-defined.
 */

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

// Strictly inside (0,1): 53-bit mantissa offset by half an ulp.
inline double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Counter-derived stream for replicate r of a master seed; replicate streams
// are independent of how replicates are scheduled across threads.
inline std::uint64_t replicate_seed(std::uint64_t master_seed,
                                    std::uint64_t replicate) {
  return splitmix64(master_seed + 0x9E3779B97F4A7C15ULL * (replicate + 1));
}

inline bool bernoulli_draw(Rng& rng, double p) {
  if (!(p >= 0.0) || !(p <= 1.0)) {
    throw DomainError("bernoulli_draw: p outside [0,1]");
  }
  return uniform01(rng) < p;
}

// Poisson by CDF inversion, truncated at mean + 12 sqrt(mean) + 30 where the
// tail mass is below 1e-12; means beyond exp-range are split in halves first
// (a Poisson sum), keeping the draw exact in distribution and deterministic.
inline long poisson_draw(Rng& rng, double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) {
    throw DomainError("poisson_draw: mean must be finite and >= 0");
  }
  if (mean == 0.0) return 0;
  if (mean > 600.0) {
    const long a = poisson_draw(rng, 0.5 * mean);
    const long b = poisson_draw(rng, 0.5 * mean);
    return a + b;
  }
  const long cap =
      static_cast<long>(mean + 12.0 * std::sqrt(mean) + 30.0);
  const double u = uniform01(rng);
  double p = std::exp(-mean);
  double c = p;
  long y = 0;
  while (u > c && y < cap) {
    ++y;
    p *= mean / static_cast<double>(y);
    c += p;
  }
  return y;
}

// Upper-tail standard normal quantile: z with P(Z > z) = p, via bisection on
// erfc (deterministic, used for multiplicity-corrected thresholds).
inline double normal_upper_quantile(double p) {
  if (!(p > 0.0) || !(p < 0.5)) {
    throw DomainError("normal_upper_quantile: need 0 < p < 0.5");
  }
  auto sf = [](double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); };
  double lo = 0.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (sf(mid) > p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace featurelab
