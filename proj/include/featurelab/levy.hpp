// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include <json.hpp>

#include "featurelab/common.hpp"
#include "featurelab/numerics.hpp"

namespace featurelab {

/*
 * Catalog of homogeneous jump-size densities lambda(s).  Every member knows
 * its open support (0, upper), its power behavior s^{rho0} near 0, and -- for
 * the kinds that admit them -- closed forms for the moment integrals
 *
 *     moment(p, q)           = int_0^min(upper,1) s^p (1-s)^q lambda(s) ds
 *     scaled_moment(p, q, a) = int_0^1 s^p (1-s)^q a lambda(a s) ds
 *
 * which are the only functionals the predictive machinery ever needs.  The
 * generic quadrature route is kept as a first-class peer of the closed forms
 * (each is the other's oracle), so moment() dispatches to the closed form
 * when one exists and *_quadrature() always takes the numeric path.
 */

enum class LevyKind { kStableBeta, kStable, kLog, kGamma, kCustom };

inline const char* levy_kind_name(LevyKind k) {
  switch (k) {
    case LevyKind::kStableBeta: return "stable_beta";
    case LevyKind::kStable: return "stable";
    case LevyKind::kLog: return "log";
    case LevyKind::kGamma: return "gamma";
    case LevyKind::kCustom: return "custom";
  }
  return "?";
}

struct IntegrabilityReport {
  bool integrable = false;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::string detail;
};

class LevyIntensity {
 public:
  struct Params {
    double alpha = 0.0;  // stable_beta total mass
    double c = 0.0;      // stable_beta concentration
    double sigma = 0.0;  // stability index, stable_beta and stable
    double C = 0.0;      // front constant, stable and log
    double r = 0.0;      // log-kind support bound
    double theta = 0.0;  // gamma-kind total mass
  };

  // lambda(s) = alpha Gamma(1+c)/(Gamma(1-sigma) Gamma(c+sigma))
  //             * s^{-1-sigma} (1-s)^{c+sigma-1}  on (0,1)
  static LevyIntensity stable_beta(double alpha, double c, double sigma) {
    if (!(alpha > 0.0) || !(c > 0.0) || !(sigma > 0.0 && sigma < 1.0)) {
      throw DomainError(
          "stable_beta intensity: need alpha > 0, c > 0, sigma in (0,1)");
    }
    LevyIntensity out;
    out.kind_ = LevyKind::kStableBeta;
    out.params_.alpha = alpha;
    out.params_.c = c;
    out.params_.sigma = sigma;
    out.upper_ = 1.0;
    out.rho0_ = -1.0 - sigma;
    out.rho1_ = c + sigma - 1.0;
    out.log_coeff_ = std::log(alpha) + lgamma_pos(1.0 + c) -
                     lgamma_pos(1.0 - sigma) - lgamma_pos(c + sigma);
    return out;
  }

  // lambda(s) = C sigma s^{-1-sigma}  on (0,inf)
  static LevyIntensity stable(double C, double sigma) {
    if (!(C > 0.0) || !(sigma > 0.0 && sigma < 1.0)) {
      throw DomainError("stable intensity: need C > 0, sigma in (0,1)");
    }
    LevyIntensity out;
    out.kind_ = LevyKind::kStable;
    out.params_.C = C;
    out.params_.sigma = sigma;
    out.upper_ = std::numeric_limits<double>::infinity();
    out.rho0_ = -1.0 - sigma;
    return out;
  }

  // lambda(s) = C / s  on (0,r)
  static LevyIntensity log(double C, double r) {
    if (!(C > 0.0) || !(r > 0.0)) {
      throw DomainError("log intensity: need C > 0, r > 0");
    }
    LevyIntensity out;
    out.kind_ = LevyKind::kLog;
    out.params_.C = C;
    out.params_.r = r;
    out.upper_ = r;
    out.rho0_ = -1.0;
    return out;
  }

  // lambda(s) = theta s^{-1} e^{-s}  on (0,inf)
  static LevyIntensity gamma(double theta) {
    if (!(theta > 0.0)) throw DomainError("gamma intensity: need theta > 0");
    LevyIntensity out;
    out.kind_ = LevyKind::kGamma;
    out.params_.theta = theta;
    out.upper_ = std::numeric_limits<double>::infinity();
    out.rho0_ = -1.0;
    return out;
  }

  // User-supplied pointwise density; the declared exponent is what makes the
  // quadrature certifiable, so it is mandatory.  Integrability is verified
  // numerically here; use custom_unchecked for densities already known
  // integrable (internal rescalings take that route).
  static LevyIntensity custom(std::function<double(double)> density,
                              double singularity_exponent_at_0,
                              double support_upper,
                              const QuadratureSpec& spec = {}) {
    LevyIntensity out = custom_unchecked(std::move(density),
                                         singularity_exponent_at_0,
                                         support_upper);
    IntegrabilityReport rep = out.check_integrability(spec);
    if (!rep.integrable) {
      throw DomainError("custom intensity fails the jump-size integrability "
                        "requirement: " + rep.detail);
    }
    return out;
  }

  static LevyIntensity custom_unchecked(std::function<double(double)> density,
                                        double singularity_exponent_at_0,
                                        double support_upper) {
    if (!density) throw DomainError("custom intensity: evaluator required");
    if (!(support_upper > 0.0)) {
      throw DomainError("custom intensity: support upper bound must be > 0");
    }
    if (!std::isfinite(singularity_exponent_at_0)) {
      throw DomainError("custom intensity: exponent at 0 must be finite");
    }
    LevyIntensity out;
    out.kind_ = LevyKind::kCustom;
    out.upper_ = support_upper;
    out.rho0_ = singularity_exponent_at_0;
    out.custom_floor_ =
        std::exp(-600.0 / std::max(1.0, std::abs(singularity_exponent_at_0)));
    out.custom_fn_ = std::move(density);
    return out;
  }

  LevyKind kind() const { return kind_; }
  const Params& params() const { return params_; }
  double support_upper() const { return upper_; }
  double singularity_exponent_at_0() const { return rho0_; }
  double singularity_exponent_at_upper() const { return rho1_; }

  // Pointwise log density.  The second argument must equal 1 - s; passing it
  // explicitly keeps (1-s)^{c+sigma-1} factors accurate when s -> 1.
  double log_eval(double s, double one_minus_s) const {
    if (!(s > 0.0)) {
      throw DomainError("intensity evaluated at s <= 0");
    }
    if (s >= upper_) return -std::numeric_limits<double>::infinity();
    switch (kind_) {
      case LevyKind::kStableBeta:
        return log_coeff_ + rho0_ * std::log(s) +
               rho1_ * std::log(one_minus_s);
      case LevyKind::kStable:
        return std::log(params_.C * params_.sigma) + rho0_ * std::log(s);
      case LevyKind::kLog:
        return std::log(params_.C) - std::log(s);
      case LevyKind::kGamma:
        return std::log(params_.theta) - std::log(s) - s;
      case LevyKind::kCustom: {
        // Plain-space evaluators overflow double range where s^{rho0} exceeds
        // ~e^600 even though every moment integral is finite there; below the
        // floor the declared power behavior continues the density in log
        // space.
        if (s < custom_floor_) {
          return log_custom(custom_floor_) +
                 rho0_ * (std::log(s) - std::log(custom_floor_));
        }
        return log_custom(s);
      }
    }
    return -std::numeric_limits<double>::infinity();
  }

  double eval(double s) const {
    if (!(s > 0.0)) throw DomainError("intensity evaluated at s <= 0");
    if (s >= upper_) return 0.0;
    return std::exp(log_eval(s, 1.0 - s));
  }

  // ---- moments over (0,1) -------------------------------------------------

  double log_moment(double p, double q, const QuadratureSpec& spec) const {
    require_moment_integrable(p, q);
    const double sg = params_.sigma;
    switch (kind_) {
      case LevyKind::kStableBeta:
        if (upper_ == 1.0) {
          return log_coeff_ + log_beta(p - sg, q + params_.c + sg);
        }
        break;
      case LevyKind::kStable:
        if (upper_ >= 1.0) {
          return std::log(params_.C * sg) + log_beta(p - sg, q + 1.0);
        }
        break;
      case LevyKind::kLog:
        if (upper_ >= 1.0) {
          return std::log(params_.C) + log_beta(p, q + 1.0);
        }
        break;
      default:
        break;
    }
    return log_moment_quadrature(p, q, spec);
  }

  double moment(double p, double q, const QuadratureSpec& spec) const {
    return std::exp(log_moment(p, q, spec));
  }

  bool has_closed_moment() const {
    switch (kind_) {
      case LevyKind::kStableBeta: return upper_ == 1.0;
      case LevyKind::kStable:
      case LevyKind::kLog: return upper_ >= 1.0;
      default: return false;
    }
  }

  double log_moment_quadrature(double p, double q,
                               const QuadratureSpec& spec) const {
    require_moment_integrable(p, q);
    LogIntegralResult res = try_log_moment_quadrature(p, q, spec);
    return finish_log(res, "moment");
  }

  double moment_quadrature(double p, double q,
                           const QuadratureSpec& spec) const {
    return std::exp(log_moment_quadrature(p, q, spec));
  }

  // ---- scaled moments: the intensity a*lambda(a s) on (0,1) ---------------

  double log_scaled_moment(double p, double q, double a,
                           const QuadratureSpec& spec) const {
    if (!(a > 0.0)) throw DomainError("scaled moment: scale must be > 0");
    require_moment_integrable(p, q);
    const double sg = params_.sigma;
    switch (kind_) {
      case LevyKind::kStable:
        if (upper_ / a >= 1.0) {
          return std::log(params_.C * sg) - sg * std::log(a) +
                 log_beta(p - sg, q + 1.0);
        }
        break;
      case LevyKind::kLog:
        if (params_.r / a >= 1.0) {
          return std::log(params_.C) + log_beta(p, q + 1.0);
        }
        break;
      default:
        break;
    }
    return log_scaled_moment_quadrature(p, q, a, spec);
  }

  double scaled_moment(double p, double q, double a,
                       const QuadratureSpec& spec) const {
    return std::exp(log_scaled_moment(p, q, a, spec));
  }

  double log_scaled_moment_quadrature(double p, double q, double a,
                                      const QuadratureSpec& spec) const {
    if (!(a > 0.0)) throw DomainError("scaled moment: scale must be > 0");
    require_moment_integrable(p, q);
    // In scaled coordinates the support ends at upper_/a; past 1 it is
    // irrelevant because (1-s)^q lives on (0,1).
    const double u_eff = std::min(upper_ / a, 1.0);
    const double a_top = std::min(upper_, a);  // = a * u_eff without rounding
    if (a_top >= 100.0) {
      // the integrand concentrates near s ~ 1/a, far below the scaled
      // coordinate's resolution; switch to original jump coordinates t = a s
      const double log_a = std::log(a);
      auto ht = [this, p, q, a, a_top, log_a](double t) -> double {
        if (t >= a_top) return -std::numeric_limits<double>::infinity();
        const double r = t / a;
        const double log_omr =
            (r <= 0.5) ? std::log1p(-r) : std::log((a - t) / a);
        return p * (std::log(t) - log_a) + q * log_omr +
               log_eval(t, 1.0 - t);
      };
      LogIntegralResult res = try_integrate_halfline_log(ht, spec);
      return finish_log(res, "scaled moment");
    }
    const double log_a = std::log(a);
    const double log_ueff = std::log(u_eff);
    auto h = [this, p, q, a_top, u_eff, log_a, log_ueff](double u,
                                                         double omu) {
      const double s = u_eff * u;       // point in scaled coordinates
      const double as = a_top * u;      // original-coordinate point
      if (s <= 0.0 || as <= 0.0) {
        // the product underflowed; the lost interval has negligible width
        return -std::numeric_limits<double>::infinity();
      }
      const double one_minus_as = (a_top == 1.0) ? omu : 1.0 - as;
      const double oms = (u_eff == 1.0) ? omu : (1.0 - u_eff) + u_eff * omu;
      return p * std::log(s) + q * std::log(oms) + log_a +
             log_eval(as, one_minus_as) + log_ueff;
    };
    double rho_at_1 = (u_eff == 1.0) ? q : 0.0;
    if (a_top == 1.0) rho_at_1 += rho1_;
    LogIntegralResult res = try_integrate_unit_log(
        h, spec.with_exponents(p + rho0_, rho_at_1));
    return finish_log(res, "scaled moment");
  }

  double scaled_moment_quadrature(double p, double q, double a,
                                  const QuadratureSpec& spec) const {
    return std::exp(log_scaled_moment_quadrature(p, q, a, spec));
  }

  // ---- transforms ---------------------------------------------------------

  LevyIntensity truncated(double upper) const {
    if (!(upper > 0.0)) {
      throw DomainError("truncated intensity: bound must be > 0");
    }
    LevyIntensity out = *this;
    out.upper_ = std::min(upper_, upper);
    if (kind_ == LevyKind::kLog) out.params_.r = out.upper_;
    return out;
  }

  // The intensity a*lambda(a s) restricted to (0,1): the jump-size law seen
  // after dividing every jump by a.  Kinds closed under rescaling stay
  // themselves; the rest become custom evaluators (already integrable, since
  // rescaling preserves the jump-size integrability).
  LevyIntensity scaled_to_unit(double a) const {
    if (!(a > 0.0)) throw DomainError("scaled intensity: scale must be > 0");
    const double new_upper = std::min(upper_ / a, 1.0);
    switch (kind_) {
      case LevyKind::kStable:
        return stable(params_.C * std::pow(a, -params_.sigma), params_.sigma)
            .truncated(new_upper);
      case LevyKind::kLog:
        return log(params_.C, new_upper);
      default: {
        LevyIntensity base = *this;
        return custom_unchecked(
            [base, a](double s) { return a * base.eval(a * s); }, rho0_,
            new_upper);
      }
    }
  }

  // ---- jump-size integrability: int min(s,1) lambda(s) ds -----------------

  IntegrabilityReport check_integrability(const QuadratureSpec& spec) const {
    IntegrabilityReport rep;
    if (!(1.0 + rho0_ > -1.0)) {
      rep.detail = "declared exponent at 0 makes s*lambda(s) non-integrable";
      return rep;
    }
    LogIntegralResult small = try_log_moment_quadrature(1.0, 0.0, spec);
    if (!small.converged) {
      rep.detail = small.nonfinite
                       ? "s*lambda(s) evaluated non-finite near 0"
                       : "quadrature of s*lambda(s) on (0,1) did not converge";
      return rep;
    }
    double total = std::exp(small.log_value);
    if (upper_ > 1.0) {
      LogIntegralResult tail = try_tail_mass_log(spec);
      if (!tail.converged) {
        rep.detail = "quadrature of lambda(s) beyond 1 did not converge";
        return rep;
      }
      total += std::exp(tail.log_value);
    }
    if (!std::isfinite(total)) {
      rep.detail = "integral overflows";
      return rep;
    }
    rep.integrable = true;
    rep.value = total;
    return rep;
  }

  // ---- serialization ------------------------------------------------------

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = levy_kind_name(kind_);
    nlohmann::json& pj = j["params"];
    switch (kind_) {
      case LevyKind::kStableBeta:
        pj["alpha"] = params_.alpha;
        pj["c"] = params_.c;
        pj["sigma"] = params_.sigma;
        if (upper_ != 1.0) j["truncate_upper"] = upper_;
        break;
      case LevyKind::kStable:
        pj["C"] = params_.C;
        pj["sigma"] = params_.sigma;
        if (std::isfinite(upper_)) j["truncate_upper"] = upper_;
        break;
      case LevyKind::kLog:
        pj["C"] = params_.C;
        pj["r"] = params_.r;
        break;
      case LevyKind::kGamma:
        pj["theta"] = params_.theta;
        if (std::isfinite(upper_)) j["truncate_upper"] = upper_;
        break;
      case LevyKind::kCustom:
        throw DomainError("custom intensity has no JSON form");
    }
    return j;
  }

  static LevyIntensity from_json(const nlohmann::json& j) {
    try {
      const std::string kind = j.at("kind").get<std::string>();
      const nlohmann::json& pj = j.at("params");
      LevyIntensity out;
      if (kind == "stable_beta") {
        out = stable_beta(pj.at("alpha").get<double>(),
                          pj.at("c").get<double>(),
                          pj.at("sigma").get<double>());
      } else if (kind == "stable") {
        out = stable(pj.at("C").get<double>(), pj.at("sigma").get<double>());
      } else if (kind == "log") {
        out = log(pj.at("C").get<double>(), pj.at("r").get<double>());
      } else if (kind == "gamma") {
        out = gamma(pj.at("theta").get<double>());
      } else {
        throw DomainError("unknown intensity kind: " + kind);
      }
      if (j.contains("truncate_upper")) {
        out = out.truncated(j.at("truncate_upper").get<double>());
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("intensity JSON: ") + e.what());
    }
  }

 private:
  LevyIntensity() = default;

  void require_moment_integrable(double p, double q) const {
    if (!(p >= 0.0) || !(q >= 0.0)) {
      throw DomainError("moment: powers must be >= 0");
    }
    if (!(p + rho0_ > -1.0)) {
      throw DomainError(
          "moment diverges at 0: s^p cannot absorb the s^{" +
          std::to_string(rho0_) + "} singularity (p = " + std::to_string(p) +
          ")");
    }
  }

  LogIntegralResult try_log_moment_quadrature(double p, double q,
                                              const QuadratureSpec& spec)
      const {
    const double u_top = std::min(upper_, 1.0);
    if (u_top >= 1.0) {
      auto h = [this, p, q](double s, double oms) {
        return p * std::log(s) + q * std::log(oms) + log_eval(s, oms);
      };
      return try_integrate_unit_log(h,
                                    spec.with_exponents(p + rho0_, q + rho1_));
    }
    const double log_utop = std::log(u_top);
    auto h = [this, p, q, u_top, log_utop](double u, double omu) {
      const double s = u_top * u;
      const double oms = (1.0 - u_top) + u_top * omu;
      return p * std::log(s) + q * std::log(oms) + log_eval(s, oms) +
             log_utop;
    };
    // (1-s)^q and lambda are smooth at s = u_top < 1, so no exponent at 1.
    return try_integrate_unit_log(h, spec.with_exponents(p + rho0_, 0.0));
  }

  // log of int_1^upper lambda(s) ds, for supports reaching past 1.
  LogIntegralResult try_tail_mass_log(const QuadratureSpec& spec) const {
    if (std::isinf(upper_)) {
      auto h = [this](double t) {
        const double s = 1.0 + t;
        return log_eval(s, -t);
      };
      return try_integrate_halfline_log(h, spec);
    }
    const double width = upper_ - 1.0;
    const double log_width = std::log(width);
    auto h = [this, width, log_width](double v, double) {
      const double s = 1.0 + width * v;
      return log_eval(s, 1.0 - s) + log_width;
    };
    return try_integrate_unit_log(h, spec);
  }

  double finish_log(const LogIntegralResult& res, const char* what) const {
    if (!res.converged) {
      throw QuadratureError(
          std::string(what) + " quadrature for the " +
              levy_kind_name(kind_) + " intensity " +
              (res.nonfinite ? "evaluated non-finite"
                             : "did not converge within the refinement "
                               "budget"),
          res.log_value, res.rel_error_bound);
    }
    return res.log_value;
  }

  double log_custom(double s) const {
    const double v = custom_fn_(s);
    if (std::isnan(v) || v < 0.0) {
      throw DomainError(
          "custom intensity returned a negative or NaN density value");
    }
    return v == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(v);
  }

  LevyKind kind_ = LevyKind::kCustom;
  Params params_;
  double upper_ = 0.0;
  double rho0_ = 0.0;
  double rho1_ = 0.0;      // only stable_beta has structure at s = 1
  double log_coeff_ = 0.0; // stable_beta front coefficient, log scale
  double custom_floor_ = 0.0;
  std::function<double(double)> custom_fn_;
};

}  // namespace featurelab
