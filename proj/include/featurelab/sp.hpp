// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "featurelab/alloc.hpp"
#include "featurelab/common.hpp"
#include "featurelab/crm.hpp"
#include "featurelab/levy.hpp"
#include "featurelab/numerics.hpp"

namespace featurelab {

/*
 * Scaled-process feature models: an intensity lam on (0, upper) together with
 * a prior on the latent scale psi.  Conditionally on psi = a the data follow
 * the CRM model with intensity a * lam(a s) on (0,1); everything here is the
 * posterior/predictive machinery of that mixture.
 */

enum class PsiPriorKind { kUniform, kExponential, kCustom };

inline const char* psi_prior_kind_name(PsiPriorKind kind) {
  switch (kind) {
    case PsiPriorKind::kUniform: return "uniform";
    case PsiPriorKind::kExponential: return "exponential";
    case PsiPriorKind::kCustom: return "custom";
  }
  return "?";
}

// Mass allowed beyond the tabulation window when the prior support is
// unbounded; the exponential grid cutoff is the matching quantile.
inline constexpr double kPsiGridTailMass = 1e-12;

class PsiPrior {
 public:
  static PsiPrior uniform(double r) {
    if (!(r > 0.0) || !std::isfinite(r)) {
      throw DomainError("uniform prior: r must be finite and > 0");
    }
    PsiPrior out;
    out.kind_ = PsiPriorKind::kUniform;
    out.upper_ = r;
    return out;
  }

  static PsiPrior exponential(double rate) {
    if (!(rate > 0.0) || !std::isfinite(rate)) {
      throw DomainError("exponential prior: rate must be finite and > 0");
    }
    PsiPrior out;
    out.kind_ = PsiPriorKind::kExponential;
    out.rate_ = rate;
    out.upper_ = std::numeric_limits<double>::infinity();
    return out;
  }

  // Density on a finite interval (lower, upper); must integrate to 1 within
  // 1e-8.  A finite window is required because posteriors are tabulated on it.
  static PsiPrior custom(std::function<double(double)> density, double lower,
                         double upper, const QuadratureSpec& spec) {
    if (!(lower >= 0.0) || !(upper > lower) || !std::isfinite(upper)) {
      throw DomainError("custom prior: need 0 <= lower < upper < infinity");
    }
    PsiPrior out;
    out.kind_ = PsiPriorKind::kCustom;
    out.lower_ = lower;
    out.upper_ = upper;
    out.density_ = std::move(density);
    const double width = upper - lower;
    const double total = integrate_unit(
        [&out, lower, width](double u) {
          return std::exp(out.log_custom(lower + width * u)) * width;
        },
        spec);
    if (std::abs(total - 1.0) > 1e-8) {
      throw DomainError("custom prior: density integrates to " +
                        std::to_string(total) + ", not 1");
    }
    out.table_ = tabulate_log_kernel(
        clustered_grid(lower, upper),
        [&out](double a) { return out.log_custom(a); });
    return out;
  }

  PsiPriorKind kind() const { return kind_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double rate() const { return rate_; }

  // Upper edge of the grid posteriors are tabulated on: the support bound
  // when it is finite, otherwise the kPsiGridTailMass upper quantile.
  double grid_upper() const {
    if (kind_ == PsiPriorKind::kExponential) {
      return -std::log(kPsiGridTailMass) / rate_;
    }
    return upper_;
  }

  double log_density(double a) const {
    if (!(a > lower_) || !(a < upper_)) {
      return -std::numeric_limits<double>::infinity();
    }
    switch (kind_) {
      case PsiPriorKind::kUniform:
        return -std::log(upper_);
      case PsiPriorKind::kExponential:
        return std::log(rate_) - rate_ * a;
      case PsiPriorKind::kCustom:
        return log_custom(a);
    }
    return -std::numeric_limits<double>::infinity();
  }

  double density(double a) const { return std::exp(log_density(a)); }

  // Exactly one uniform variate per draw, all kinds, so downstream streams
  // do not depend on the prior choice.
  double sample(Rng& rng) const {
    const double u = uniform01(rng);
    switch (kind_) {
      case PsiPriorKind::kUniform:
        return upper_ * u;
      case PsiPriorKind::kExponential:
        return -std::log1p(-u) / rate_;
      case PsiPriorKind::kCustom:
        return sample_from_tabulated(table_, u);
    }
    return u;
  }

  nlohmann::json to_json() const {
    switch (kind_) {
      case PsiPriorKind::kUniform:
        return nlohmann::json{{"kind", "uniform"}, {"r", upper_}};
      case PsiPriorKind::kExponential:
        return nlohmann::json{{"kind", "exponential"}, {"rate", rate_}};
      case PsiPriorKind::kCustom:
        break;
    }
    throw DomainError("custom priors have no JSON form");
  }

  static PsiPrior from_json(const nlohmann::json& j) {
    try {
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "uniform") return uniform(j.at("r").get<double>());
      if (kind == "exponential") {
        return exponential(j.at("rate").get<double>());
      }
      throw DomainError("unknown prior kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("prior json: ") + e.what());
    }
  }

 private:
  double log_custom(double a) const {
    const double v = density_(a);
    if (std::isnan(v) || v < 0.0) {
      throw DomainError("custom prior density evaluated negative or NaN");
    }
    if (v == 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(v);
  }

  PsiPriorKind kind_ = PsiPriorKind::kUniform;
  double lower_ = 0.0;
  double upper_ = 1.0;
  double rate_ = 0.0;
  std::function<double(double)> density_;
  TabulatedDensity table_;
};

struct SPModel {
  LevyIntensity lam;
  PsiPrior prior;

  static SPModel make(LevyIntensity lam, PsiPrior prior,
                      const QuadratureSpec& spec) {
    const IntegrabilityReport rep = lam.check_integrability(spec);
    if (!rep.integrable) {
      throw DomainError("scaled-process model: " + rep.detail);
    }
    return SPModel{std::move(lam), std::move(prior)};
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"levy", lam.to_json()}, {"prior", prior.to_json()}};
  }

  static SPModel from_json(const nlohmann::json& j,
                           const QuadratureSpec& spec) {
    try {
      return make(LevyIntensity::from_json(j.at("levy")),
                  PsiPrior::from_json(j.at("prior")), spec);
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("scaled-process model json: ") + e.what());
    }
  }
};

/*
 * phi_i(a) = integral of s (1-s)^{i-1} a lam(a s) ds: the exponent increments
 * of the conditional Laplace functional.  Their partial sum telescopes,
 *   sum_{i=1..n} phi_i(a) = integral of (1 - (1-s)^n) a lam(a s) ds,
 * which is what the generic route integrates (one quadrature instead of n).
 */

inline double phi(const LevyIntensity& lam, int i, double a,
                  const QuadratureSpec& spec) {
  if (i < 1) throw DomainError("phi: index must be >= 1");
  return lam.scaled_moment(1.0, static_cast<double>(i - 1), a, spec);
}

inline double sum_phi_quadrature(const LevyIntensity& lam, int n, double a,
                                 const QuadratureSpec& spec) {
  if (n < 0) throw DomainError("sum_phi: n must be >= 0");
  if (!(a > 0.0)) throw DomainError("sum_phi: scale must be > 0");
  if (n == 0) return 0.0;
  const double u_eff = std::min(lam.support_upper() / a, 1.0);
  const double a_top = std::min(lam.support_upper(), a);
  const double nn_t = static_cast<double>(n);
  if (a_top >= 100.0) {
    // the integrand concentrates near s ~ 1/a, far below the scaled
    // coordinate's resolution; switch to original jump coordinates t = a s
    auto ht = [&lam, a, a_top, nn_t](double t) -> double {
      if (t >= a_top) return -std::numeric_limits<double>::infinity();
      const double r = t / a;
      const double log_omr =
          (r <= 0.5) ? std::log1p(-r) : std::log((a - t) / a);
      const double log_g = std::log(-std::expm1(nn_t * log_omr));
      return log_g + lam.log_eval(t, 1.0 - t);
    };
    const LogIntegralResult res = try_integrate_halfline_log(ht, spec);
    if (!res.converged) {
      throw QuadratureError("sum_phi quadrature did not converge",
                            std::exp(res.log_value), res.rel_error_bound);
    }
    return std::exp(res.log_value);
  }
  const double log_a = std::log(a);
  const double log_ueff = std::log(u_eff);
  const double nn = static_cast<double>(n);
  auto h = [&lam, a_top, u_eff, log_a, log_ueff, nn](double u, double omu) {
    const double s = u_eff * u;
    const double as = a_top * u;
    if (s <= 0.0 || as <= 0.0) {
      // the product underflowed; the lost interval has negligible width
      return -std::numeric_limits<double>::infinity();
    }
    const double one_minus_as = (a_top == 1.0) ? omu : 1.0 - as;
    const double oms = (u_eff == 1.0) ? omu : (1.0 - u_eff) + u_eff * omu;
    // 1-(1-s)^n via whichever of s, 1-s is exact at this endpoint
    const double log_oms = (s <= 0.5) ? std::log1p(-s) : std::log(oms);
    const double log_g = std::log(-std::expm1(nn * log_oms));
    return log_g + log_a + lam.log_eval(as, one_minus_as) + log_ueff;
  };
  const double rho1 =
      (a_top == 1.0) ? lam.singularity_exponent_at_upper() : 0.0;
  const LogIntegralResult res = try_integrate_unit_log(
      h, spec.with_exponents(1.0 + lam.singularity_exponent_at_0(), rho1));
  if (!res.converged) {
    throw QuadratureError("sum_phi quadrature did not converge",
                          std::exp(res.log_value), res.rel_error_bound);
  }
  return std::exp(res.log_value);
}

inline double sum_phi(const LevyIntensity& lam, int n, double a,
                      const QuadratureSpec& spec) {
  if (n < 0) throw DomainError("sum_phi: n must be >= 0");
  if (!(a > 0.0)) throw DomainError("sum_phi: scale must be > 0");
  if (n == 0) return 0.0;
  const auto& par = lam.params();
  switch (lam.kind()) {
    case LevyKind::kStable:
      if (lam.support_upper() / a >= 1.0) {
        double sum_b = 0.0;
        for (int i = 1; i <= n; ++i) {
          sum_b += beta_fn(1.0 - par.sigma, static_cast<double>(i));
        }
        return par.C * par.sigma * std::pow(a, -par.sigma) * sum_b;
      }
      break;
    case LevyKind::kLog:
      if (par.r / a >= 1.0) {
        double harmonic = 0.0;
        for (int i = 1; i <= n; ++i) harmonic += 1.0 / i;
        return par.C * harmonic;
      }
      break;
    default:
      break;
  }
  return sum_phi_quadrature(lam, n, a, spec);
}

/*
 * Posterior of the latent scale given stats (n, k, m):
 *   density(a)  proportional to
 *     exp(-sum_{i=1..n} phi_i(a)) * prod_j scaled_moment(m_j, n-m_j, a) * f(a)
 * tabulated on a grid over the prior support and normalized exactly under the
 * trapezoid rule on that grid.  A half-line (or unit-transformed) quadrature
 * of the same kernel then cross-checks the tabulated mass, so posteriors whose
 * mass the grid cannot resolve are rejected rather than silently mis-scaled.
 */

// Tabulated mass and the quadrature normalizer must agree this tightly;
// generous next to the comparison tolerances because the trapezoid rule on a
// few thousand nodes carries O(1e-6) mass error of its own.
inline constexpr double kPsiMassAgreementTol = 1e-3;

// Caches the node values shared by every stats configuration at a fixed
// sample size n: sum_phi and one log-scaled-moment vector per multiplicity.
// Lazy caching makes instances single-thread objects, like MomentCache.
class PsiGrid {
 public:
  PsiGrid(const SPModel& model, int n, const QuadratureSpec& spec,
          bool force_quadrature = false, int num_nodes = kDefaultDensityNodes)
      : model_(model), n_(n), spec_(spec), forced_(force_quadrature) {
    if (n < 1) throw DomainError("psi posterior: requires n >= 1");
    grid_ = clustered_grid(model_.prior.lower(), model_.prior.grid_upper(),
                           num_nodes);
    sumphi_.resize(grid_.size());
    logprior_.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      sumphi_[i] = forced_ ? sum_phi_quadrature(model_.lam, n_, grid_[i], spec_)
                           : sum_phi(model_.lam, n_, grid_[i], spec_);
      logprior_[i] = model_.prior.log_density(grid_[i]);
    }
  }

  const std::vector<double>& grid() const { return grid_; }
  const SPModel& model() const { return model_; }
  int n() const { return n_; }

  TabulatedDensity posterior(const SuffStats& stats) const {
    stats.validate();
    if (stats.n != n_) {
      throw DomainError("psi posterior: stats.n does not match this grid");
    }
    std::vector<double> lk(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      lk[i] = logprior_[i] - sumphi_[i];
    }
    for (const int m : stats.m) {
      const std::vector<double>& v = moment_nodes(m);
      for (std::size_t i = 0; i < grid_.size(); ++i) lk[i] += v[i];
    }
    TabulatedDensity out = tabulate_log_values(grid_, lk);
    if (!forced_) check_mass_resolved(lk, stats);
    return out;
  }

  // Kernel at an arbitrary point, for the normalizer cross-check.
  double log_kernel(double a, const SuffStats& stats) const {
    double v = model_.prior.log_density(a);
    if (v == -std::numeric_limits<double>::infinity()) return v;
    v -= sum_phi(model_.lam, n_, a, spec_);
    for (const int m : stats.m) {
      v += model_.lam.log_scaled_moment(m, static_cast<double>(n_ - m), a,
                                        spec_);
    }
    return v;
  }

 private:
  const std::vector<double>& moment_nodes(int m) const {
    const auto it = moments_.find(m);
    if (it != moments_.end()) return it->second;
    std::vector<double> v(grid_.size());
    const double q = static_cast<double>(n_ - m);
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      v[i] = forced_
                 ? model_.lam.log_scaled_moment_quadrature(m, q, grid_[i],
                                                           spec_)
                 : model_.lam.log_scaled_moment(m, q, grid_[i], spec_);
    }
    return moments_.emplace(m, std::move(v)).first->second;
  }

  void check_mass_resolved(const std::vector<double>& lk,
                           const SuffStats& stats) const {
    double peak = -std::numeric_limits<double>::infinity();
    for (const double v : lk) peak = std::max(peak, v);
    double mass = 0.0;
    for (std::size_t i = 0; i + 1 < grid_.size(); ++i) {
      mass += 0.5 * (std::exp(lk[i] - peak) + std::exp(lk[i + 1] - peak)) *
              (grid_[i + 1] - grid_[i]);
    }
    const double log_tabulated = peak + std::log(mass);
    LogIntegralResult res;
    if (std::isfinite(model_.prior.upper())) {
      const double lo = model_.prior.lower();
      const double width = model_.prior.upper() - lo;
      const double log_width = std::log(width);
      res = try_integrate_unit_log(
          [this, &stats, lo, width, log_width](double u, double) {
            return log_kernel(lo + width * u, stats) + log_width;
          },
          spec_);
    } else {
      res = try_integrate_halfline_log(
          [this, &stats](double a) { return log_kernel(a, stats); }, spec_);
    }
    if (res.log_value == -std::numeric_limits<double>::infinity()) {
      throw DegeneratePosteriorError("psi posterior: zero normalizer");
    }
    if (!res.converged || res.nonfinite) {
      throw QuadratureError("psi posterior normalizer did not converge",
                            std::exp(res.log_value), res.rel_error_bound);
    }
    const double mismatch = std::abs(std::expm1(res.log_value - log_tabulated));
    if (mismatch > kPsiMassAgreementTol) {
      throw QuadratureError(
          "psi posterior: tabulated mass disagrees with the quadrature "
          "normalizer (grid does not resolve the posterior)",
          mismatch, kPsiMassAgreementTol);
    }
  }

  SPModel model_;
  int n_ = 0;
  QuadratureSpec spec_;
  bool forced_ = false;
  std::vector<double> grid_;
  std::vector<double> sumphi_;
  std::vector<double> logprior_;
  mutable std::map<int, std::vector<double>> moments_;
};

inline TabulatedDensity psi_posterior(const SPModel& model,
                                      const SuffStats& stats,
                                      const QuadratureSpec& spec) {
  return PsiGrid(model, stats.n, spec).posterior(stats);
}

// Same posterior with every closed form disabled; cross-check route.
inline TabulatedDensity psi_posterior_quadrature(const SPModel& model,
                                                 const SuffStats& stats,
                                                 const QuadratureSpec& spec) {
  return PsiGrid(model, stats.n, spec, /*force_quadrature=*/true)
      .posterior(stats);
}

/*
 * Predictives.  Conditionally on psi = a the next customer follows the CRM
 * predictive of the rescaled intensity; marginally, those laws are mixed over
 * the tabulated posterior with its trapezoid node weights.
 */

inline PredictiveLaw conditional_predictive(const SPModel& model,
                                            const SuffStats& stats, double a,
                                            const QuadratureSpec& spec) {
  stats.validate();
  if (!(a > model.prior.lower()) || !(a < model.prior.upper())) {
    throw DomainError(
        "conditional predictive: scale outside the prior support");
  }
  PredictiveLaw law;
  law.new_rate =
      model.lam.scaled_moment(1.0, static_cast<double>(stats.n), a, spec);
  law.known_probs.reserve(stats.m.size());
  for (const int m : stats.m) {
    const double q = static_cast<double>(stats.n - m);
    law.known_probs.push_back(detail::clamp_prob(
        std::exp(model.lam.log_scaled_moment(m + 1.0, q, a, spec) -
                 model.lam.log_scaled_moment(m, q, a, spec))));
  }
  return law;
}

struct MarginalPredictive {
  std::vector<double> new_pmf;  // P(Y = y), y = 0..y_max
  double tail_mass = 0.0;       // P(Y > y_max)
  std::vector<double> known_means;
  double mean_rate = 0.0;  // posterior mean of the new-feature Poisson rate

  nlohmann::json to_json() const {
    return nlohmann::json{{"new_pmf", new_pmf},
                          {"tail_mass", tail_mass},
                          {"known_means", known_means},
                          {"mean_rate", mean_rate}};
  }
};

// Mixture of the conditional predictives over the tabulated posterior.
// y_max < 0 picks the smallest y whose Poisson tail at the posterior-mean
// rate falls below 1e-10.
inline MarginalPredictive marginal_predictive(const SPModel& model,
                                              const SuffStats& stats,
                                              int y_max,
                                              const QuadratureSpec& spec) {
  stats.validate();
  if (stats.n < 1) {
    throw DomainError("marginal predictive: requires n >= 1");
  }
  const TabulatedDensity post = psi_posterior(model, stats, spec);
  const std::size_t nn = post.size();

  // trapezoid node weights; these sum to 1 because the density is
  // trapezoid-normalized on this very grid
  std::vector<double> w(nn, 0.0);
  for (std::size_t i = 0; i + 1 < nn; ++i) {
    const double half = 0.5 * (post.grid[i + 1] - post.grid[i]);
    w[i] += half * post.density(i);
    w[i + 1] += half * post.density(i + 1);
  }

  std::vector<double> rate(nn, 0.0);
  MarginalPredictive out;
  for (std::size_t i = 0; i < nn; ++i) {
    if (w[i] == 0.0) continue;
    rate[i] = model.lam.scaled_moment(1.0, static_cast<double>(stats.n),
                                      post.grid[i], spec);
    if (!std::isfinite(rate[i])) {
      throw QuadratureError("marginal predictive: non-finite mixture rate",
                            rate[i], 0.0);
    }
    out.mean_rate += w[i] * rate[i];
  }

  if (y_max < 0) {
    if (out.mean_rate == 0.0) {
      y_max = 0;
    } else {
      const double log_rbar = std::log(out.mean_rate);
      double cum = 0.0;
      int y = 0;
      for (;; ++y) {
        cum += std::exp(-out.mean_rate + y * log_rbar -
                        lgamma_pos(static_cast<double>(y) + 1.0));
        if (1.0 - cum < 1e-10) break;
      }
      y_max = y;
    }
  }

  out.new_pmf.assign(static_cast<std::size_t>(y_max) + 1, 0.0);
  for (std::size_t i = 0; i < nn; ++i) {
    if (w[i] == 0.0) continue;
    double cum = 0.0;
    for (int y = 0; y <= y_max; ++y) {
      double p;
      if (rate[i] == 0.0) {
        p = (y == 0) ? 1.0 : 0.0;
      } else {
        p = std::exp(-rate[i] + y * std::log(rate[i]) -
                     lgamma_pos(static_cast<double>(y) + 1.0));
      }
      out.new_pmf[static_cast<std::size_t>(y)] += w[i] * p;
      cum += p;
    }
    out.tail_mass += w[i] * std::max(0.0, 1.0 - cum);
  }

  out.known_means.assign(stats.m.size(), 0.0);
  for (std::size_t i = 0; i < nn; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t j = 0; j < stats.m.size(); ++j) {
      const int m = stats.m[j];
      const double q = static_cast<double>(stats.n - m);
      const double pj = detail::clamp_prob(std::exp(
          model.lam.log_scaled_moment(m + 1.0, q, post.grid[i], spec) -
          model.lam.log_scaled_moment(m, q, post.grid[i], spec)));
      out.known_means[j] += w[i] * pj;
    }
  }
  return out;
}

/*
 * Sampling.  sample_psi inverts the tabulated posterior CDF; the allocation
 * sampler is the model's generative composition: one prior draw of the scale,
 * then the sequential CRM sampler under the rescaled intensity.
 */

inline double sample_psi(Rng& rng, const SPModel& model, const SuffStats& stats,
                         const QuadratureSpec& spec) {
  return sample_from_tabulated(psi_posterior(model, stats, spec),
                               uniform01(rng));
}

struct SPSample {
  double psi = 0.0;
  FeatureAllocation allocation;
};

inline SPSample sample_allocation_debug(Rng& rng, const SPModel& model, int n,
                                        const QuadratureSpec& spec) {
  if (n < 0) throw DomainError("sample_allocation: n must be >= 0");
  SPSample out;
  out.psi = model.prior.sample(rng);
  out.allocation =
      sample_allocation(rng, model.lam.scaled_to_unit(out.psi), n, spec);
  return out;
}

inline FeatureAllocation sample_allocation(Rng& rng, const SPModel& model,
                                           int n, const QuadratureSpec& spec) {
  return sample_allocation_debug(rng, model, n, spec).allocation;
}

/*
 * Exports for tabulated densities: CSV rows (a, density, cdf) and a JSON
 * object holding the three columns.
 */

inline void write_density_csv(std::ostream& os, const TabulatedDensity& d) {
  os << "a,density,cdf\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << d.grid[i] << ',' << d.density(i) << ',' << d.cdf[i] << '\n';
  }
}

inline void write_density_csv(const std::string& path,
                              const TabulatedDensity& d) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open for writing: " + path);
  write_density_csv(os, d);
}

inline nlohmann::json density_to_json(const TabulatedDensity& d) {
  return nlohmann::json{{"grid", d.grid},
                        {"log_density", d.log_density},
                        {"cdf", d.cdf}};
}

}  // namespace featurelab
