// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "featurelab/alloc.hpp"
#include "featurelab/common.hpp"
#include "featurelab/crm.hpp"
#include "featurelab/levy.hpp"
#include "featurelab/numerics.hpp"
#include "featurelab/sp.hpp"
#include "featurelab/species.hpp"

namespace featurelab {

/*
 * Verification lab.  Every check enumerates a declared grid, records one
 * measured value per case next to the threshold it was judged against, and
 * reports pass/fail plus wall-clock runtime.  A report is a pure function of
 * its inputs and seed; runtime is kept out of the JSON form so equal inputs
 * serialize byte-for-byte equal.
 */

struct VerificationCase {
  std::string label;
  double metric = 0.0;
  double threshold = 0.0;
  std::string comparator = "<";  // passing relation of metric to threshold
  bool pass = false;
  std::string note;

  nlohmann::json to_json() const {
    nlohmann::json j{{"label", label},
                     {"metric", metric},
                     {"threshold", threshold},
                     {"comparator", comparator},
                     {"pass", pass}};
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

struct VerificationReport {
  std::string name;
  std::string grid;
  std::uint64_t seed = 0;
  double runtime_seconds = 0.0;
  std::string classification;  // only set by psi_dependence_report
  std::vector<VerificationCase> cases;

  bool passed() const {
    return std::all_of(cases.begin(), cases.end(),
                       [](const VerificationCase& c) { return c.pass; });
  }

  int failures() const {
    return static_cast<int>(std::count_if(
        cases.begin(), cases.end(),
        [](const VerificationCase& c) { return !c.pass; }));
  }

  nlohmann::json to_json() const {
    nlohmann::json jc = nlohmann::json::array();
    for (const VerificationCase& c : cases) jc.push_back(c.to_json());
    nlohmann::json j{{"name", name},
                     {"grid", grid},
                     {"seed", seed},
                     {"passed", passed()},
                     {"cases", jc}};
    if (!classification.empty()) j["classification"] = classification;
    return j;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "== " << name << " ==\n";
    if (!grid.empty()) os << "grid: " << grid << "\n";
    os << "seed: " << seed << "\n";
    if (!classification.empty()) {
      os << "classification: " << classification << "\n";
    }
    os.setf(std::ios::scientific);
    os.precision(3);
    for (const VerificationCase& c : cases) {
      os << (c.pass ? "  pass  " : "  FAIL  ") << c.label << ": " << c.metric
         << " " << c.comparator << " " << c.threshold;
      if (!c.note.empty()) os << "  (" << c.note << ")";
      os << "\n";
    }
    os << (passed() ? "PASS" : "FAIL") << ": " << cases.size() << " cases, "
       << failures() << " failures, " << runtime_seconds << " s\n";
    return os.str();
  }
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline double rel_err(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

// Max pointwise density difference over a shared grid, relative to the peak
// of the first table.  Both tables carry the same grid and trapezoid
// normalization, so the normalizer choice cancels out of the metric.
inline double sup_density_diff(const TabulatedDensity& a,
                               const TabulatedDensity& b) {
  if (a.size() != b.size()) {
    throw DomainError("sup_density_diff: tables must share a grid");
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    peak = std::max(peak, a.density(i));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.density(i) - b.density(i)));
  }
  return worst / peak;
}

inline SuffStats stats_of(int n, std::vector<int> m) {
  SuffStats s;
  s.n = n;
  s.k = static_cast<int>(m.size());
  s.m = std::move(m);
  s.validate();
  return s;
}

inline std::string fmt_m(const std::vector<int>& m) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i > 0) os << ",";
    os << m[i];
  }
  os << "]";
  return os.str();
}

inline VerificationCase make_case(std::string label, double metric,
                                  double threshold) {
  VerificationCase c;
  c.label = std::move(label);
  c.metric = metric;
  c.threshold = threshold;
  c.pass = metric < threshold;  // NaN compares false, as it should
  return c;
}

inline VerificationCase make_error_case(std::string label, double threshold,
                                        const std::string& what) {
  VerificationCase c;
  c.label = std::move(label);
  c.metric = std::numeric_limits<double>::infinity();
  c.threshold = threshold;
  c.pass = false;
  c.note = what;
  return c;
}

inline void bounded_multisets_rec(int slots, int max_val,
                                  std::vector<int>* cur,
                                  std::vector<std::vector<int>>* out) {
  if (slots == 0) {
    out->push_back(*cur);
    return;
  }
  for (int v = max_val; v >= 1; --v) {
    cur->push_back(v);
    bounded_multisets_rec(slots - 1, v, cur, out);
    cur->pop_back();
  }
}

// All nonincreasing multiplicity vectors with at most k_max entries in 1..n,
// the empty vector included: every admissible stats.m at sample size n.
inline std::vector<std::vector<int>> bounded_multisets(int n, int k_max) {
  std::vector<std::vector<int>> out{{}};
  for (int k = 1; k <= k_max; ++k) {
    std::vector<int> cur;
    bounded_multisets_rec(k, n, &cur, &out);
  }
  return out;
}

// Every feature allocation of n customers with at most k_max features,
// enumerated as multisets of nonempty customer subsets (repeats allowed:
// distinct features may share a membership pattern).
inline std::vector<FeatureAllocation> enumerate_allocations(int n, int k_max) {
  const int top = (1 << n) - 1;
  std::vector<FeatureAllocation> out;
  std::vector<int> codes;
  std::function<void(int)> rec = [&](int min_code) {
    std::vector<std::vector<int>> customers(n);
    for (std::size_t f = 0; f < codes.size(); ++f) {
      for (int i = 0; i < n; ++i) {
        if ((codes[f] >> i) & 1) customers[i].push_back(static_cast<int>(f));
      }
    }
    out.push_back(FeatureAllocation::from_customers(customers));
    if (static_cast<int>(codes.size()) == k_max) return;
    for (int code = min_code; code <= top; ++code) {
      codes.push_back(code);
      rec(code);
      codes.pop_back();
    }
  };
  rec(1);
  return out;
}

inline void label_sequences_rec(int n, int max_used, std::vector<int>* cur,
                                std::vector<std::vector<int>>* out) {
  if (static_cast<int>(cur->size()) == n) {
    out->push_back(*cur);
    return;
  }
  for (int v = 0; v <= max_used + 1; ++v) {
    cur->push_back(v);
    label_sequences_rec(n, std::max(max_used, v), cur, out);
    cur->pop_back();
  }
}

// All length-n label sequences in first-occurrence order (one representative
// per set partition of {1..n}).
inline std::vector<std::vector<int>> label_sequences(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  label_sequences_rec(n, -1, &cur, &out);
  return out;
}

inline double log_prob_deviation(double a, double b) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (a == -kInf && b == -kInf) return 0.0;
  const double d = std::abs(a - b);
  return std::isnan(d) ? kInf : d;
}

// log of the allocation probability under a scaled-process model, the latent
// scale integrated out against its prior.
inline double sp_allocation_log_prob(const SPModel& model,
                                     const FeatureAllocation& z,
                                     const QuadratureSpec& spec) {
  const PsiPrior& prior = model.prior;
  auto lk = [&model, &z, &spec](double a) -> double {
    const double lp = model.prior.log_density(a);
    if (lp == -std::numeric_limits<double>::infinity()) return lp;
    return lp + allocation_log_prob(model.lam.scaled_to_unit(a), z, spec);
  };
  LogIntegralResult res;
  if (std::isfinite(prior.upper())) {
    const double lo = prior.lower();
    const double width = prior.upper() - lo;
    const double log_width = std::log(width);
    res = try_integrate_unit_log(
        [&lk, lo, width, log_width](double u, double) {
          return lk(lo + width * u) + log_width;
        },
        spec);
  } else {
    res = try_integrate_halfline_log(lk, spec);
  }
  if (!res.converged || res.nonfinite) {
    throw QuadratureError("allocation marginal did not converge",
                          std::exp(res.log_value), res.rel_error_bound);
  }
  return res.log_value;
}

}  // namespace detail

/*
 * Closed forms against quadrature.  The grid sweeps the intensity family
 * with Pochhammer predictives over (sigma, c, alpha, n, m), both predictive
 * parameters compared per case, then sweeps power-law scale posteriors
 * against their explicit kernel on quadrature-only grids.  A quadrature
 * failure marks its case failed and the sweep moves on.
 */

struct ClosedFormGrid {
  std::vector<double> sigmas{0.1, 0.5, 0.9};
  std::vector<double> cs{0.5, 1.0, 5.0};
  std::vector<double> alphas{2.0};
  std::vector<int> ns{1, 5, 10, 20, 100};
  std::vector<double> sp_sigmas{0.25, 0.5, 0.75};
  std::vector<int> sp_ns{1, 3, 10};
  int sp_k_max = 3;
  int sp_num_nodes = 512;
  double threshold = 1e-8;
};

inline VerificationReport verify_closed_forms(const QuadratureSpec& spec,
                                              const ClosedFormGrid& grid = {}) {
  const detail::Stopwatch watch;
  VerificationReport rep;
  rep.name = "closed_forms";
  {
    std::ostringstream os;
    os << "stable_beta predictives: " << grid.sigmas.size() << " sigma x "
       << grid.cs.size() << " c x " << grid.alphas.size() << " alpha x "
       << grid.ns.size() << " n x m in {1, ceil(n/2), n}; scale posteriors: "
       << grid.sp_sigmas.size() << " sigma x " << grid.sp_ns.size()
       << " n x all m with k <= " << grid.sp_k_max << ", "
       << grid.sp_num_nodes << " nodes";
    rep.grid = os.str();
  }

  for (const double sigma : grid.sigmas) {
    for (const double c : grid.cs) {
      for (const double alpha : grid.alphas) {
        const LevyIntensity lam = LevyIntensity::stable_beta(alpha, c, sigma);
        for (const int n : grid.ns) {
          std::vector<int> ms{1, (n + 1) / 2, n};
          ms.erase(std::unique(ms.begin(), ms.end()), ms.end());
          for (const int m : ms) {
            const SuffStats stats = detail::stats_of(n, {m});
            std::ostringstream base;
            base << "stable_beta alpha=" << alpha << " c=" << c
                 << " sigma=" << sigma << " n=" << n << " m=" << m;
            try {
              const PredictiveLaw closed = predictive(lam, stats, spec);
              const PredictiveLaw quad =
                  predictive_quadrature(lam, stats, spec);
              rep.cases.push_back(detail::make_case(
                  base.str() + " rate",
                  detail::rel_err(closed.new_rate, quad.new_rate),
                  grid.threshold));
              rep.cases.push_back(detail::make_case(
                  base.str() + " prob",
                  detail::rel_err(closed.known_probs[0], quad.known_probs[0]),
                  grid.threshold));
            } catch (const Error& e) {
              rep.cases.push_back(detail::make_error_case(
                  base.str(), grid.threshold, e.what()));
            }
          }
        }
      }
    }
  }

  for (const double sigma : grid.sp_sigmas) {
    const SPModel model = SPModel::make(LevyIntensity::stable(1.0, sigma),
                                        PsiPrior::exponential(1.0), spec);
    for (const int n : grid.sp_ns) {
      const PsiGrid pg(model, n, spec, /*force_quadrature=*/true,
                       grid.sp_num_nodes);
      double sum_b = 0.0;
      for (int i = 1; i <= n; ++i) sum_b += beta_fn(1.0 - sigma, i);
      for (const std::vector<int>& m :
           detail::bounded_multisets(n, grid.sp_k_max)) {
        const SuffStats stats = detail::stats_of(n, m);
        std::ostringstream label;
        label << "sp posterior sigma=" << sigma << " n=" << n
              << " m=" << detail::fmt_m(m);
        try {
          const TabulatedDensity got = pg.posterior(stats);
          const double k = static_cast<double>(m.size());
          std::vector<double> lk(pg.grid().size());
          for (std::size_t i = 0; i < pg.grid().size(); ++i) {
            const double a = pg.grid()[i];
            lk[i] = -k * sigma * std::log(a) -
                    sigma * std::pow(a, -sigma) * sum_b +
                    model.prior.log_density(a);
          }
          const TabulatedDensity want = tabulate_log_values(pg.grid(), lk);
          rep.cases.push_back(detail::make_case(
              label.str(), detail::sup_density_diff(want, got),
              grid.threshold));
        } catch (const Error& e) {
          rep.cases.push_back(
              detail::make_error_case(label.str(), grid.threshold, e.what()));
        }
      }
    }
  }

  rep.runtime_seconds = watch.seconds();
  return rep;
}

/*
 * Posterior dependence classification.  All configurations share one sample
 * size n; posteriors are tabulated on one shared grid and compared pairwise
 * in sup norm.  Distances at or below 1e-8 count as indistinguishable, at or
 * above 1e-6 as distinguishable; anything caught between the bands makes the
 * pair inconclusive and fails the report.
 */

inline constexpr double kPsiIndistinguishable = 1e-8;
inline constexpr double kPsiDistinguishable = 1e-6;

inline VerificationReport psi_dependence_report(
    const SPModel& model, int n, const std::vector<SuffStats>& configs,
    const QuadratureSpec& spec, int num_nodes = kDefaultDensityNodes) {
  const detail::Stopwatch watch;
  if (configs.size() < 2) {
    throw DomainError("psi dependence: need at least two configurations");
  }
  for (const SuffStats& stats : configs) {
    stats.validate();
    if (stats.n != n) {
      throw DomainError("psi dependence: every configuration must share n");
    }
  }

  VerificationReport rep;
  rep.name = "psi_dependence";
  {
    std::ostringstream os;
    os << levy_kind_name(model.lam.kind()) << " intensity, n=" << n << ", "
       << configs.size() << " configurations, " << num_nodes << " nodes";
    rep.grid = os.str();
  }

  const PsiGrid pg(model, n, spec, /*force_quadrature=*/false, num_nodes);
  std::vector<TabulatedDensity> post;
  post.reserve(configs.size());
  for (const SuffStats& stats : configs) post.push_back(pg.posterior(stats));

  bool any_inconclusive = false;
  bool same_k_any_diff = false;
  bool same_k_all_same = true;
  bool cross_k_all_diff = true;
  bool all_same = true;
  int inconclusive_pairs = 0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    for (std::size_t j = i + 1; j < configs.size(); ++j) {
      const double d = detail::sup_density_diff(post[i], post[j]);
      const bool same = d <= kPsiIndistinguishable;
      const bool diff = d >= kPsiDistinguishable;
      const bool same_k = configs[i].k == configs[j].k;
      VerificationCase c;
      c.label = "m=" + detail::fmt_m(configs[i].m) +
                " vs m=" + detail::fmt_m(configs[j].m);
      c.metric = d;
      if (same) {
        c.threshold = kPsiIndistinguishable;
        c.comparator = "<=";
        c.pass = true;
        c.note = "indistinguishable";
      } else if (diff) {
        c.threshold = kPsiDistinguishable;
        c.comparator = ">=";
        c.pass = true;
        c.note = "distinguishable";
      } else {
        c.threshold = kPsiIndistinguishable;
        c.comparator = "<=";
        c.pass = false;
        c.note = "inconclusive: between the bands";
        any_inconclusive = true;
        ++inconclusive_pairs;
      }
      rep.cases.push_back(std::move(c));
      all_same = all_same && same;
      if (same_k) {
        same_k_all_same = same_k_all_same && same;
        same_k_any_diff = same_k_any_diff || diff;
      } else {
        cross_k_all_diff = cross_k_all_diff && diff;
      }
    }
  }

  if (any_inconclusive) {
    rep.classification = "inconclusive";
  } else if (all_same) {
    rep.classification = "n-only";
  } else if (same_k_all_same && cross_k_all_diff) {
    rep.classification = "(n,k)-only";
  } else if (same_k_any_diff) {
    rep.classification = "frequency-dependent";
  } else {
    rep.classification = "inconclusive";
  }

  VerificationCase cls;
  cls.label = "classification";
  cls.metric = static_cast<double>(inconclusive_pairs);
  cls.threshold = 1.0;
  cls.pass = rep.classification != "inconclusive";
  cls.note = rep.classification;
  rep.cases.push_back(std::move(cls));

  rep.runtime_seconds = watch.seconds();
  return rep;
}

/*
 * Prior invariance.  For each configuration the tabulated scale posterior is
 * compared against the prior density in sup norm relative to the prior peak;
 * an intensity whose posterior never moves off the prior passes at 1e-8.
 */

inline VerificationReport prior_invariance_report(
    const SPModel& model, int n, const std::vector<SuffStats>& configs,
    const QuadratureSpec& spec, int num_nodes = kDefaultDensityNodes) {
  const detail::Stopwatch watch;
  if (configs.empty()) {
    throw DomainError("prior invariance: need at least one configuration");
  }
  for (const SuffStats& stats : configs) {
    stats.validate();
    if (stats.n != n) {
      throw DomainError("prior invariance: every configuration must share n");
    }
  }
  constexpr double kTol = 1e-8;

  VerificationReport rep;
  rep.name = "prior_invariance";
  {
    std::ostringstream os;
    os << levy_kind_name(model.lam.kind()) << " intensity, n=" << n << ", "
       << configs.size() << " configurations, " << num_nodes << " nodes";
    rep.grid = os.str();
  }

  const PsiGrid pg(model, n, spec, /*force_quadrature=*/false, num_nodes);
  double prior_peak = 0.0;
  for (const double a : pg.grid()) {
    prior_peak = std::max(prior_peak, model.prior.density(a));
  }
  for (const SuffStats& stats : configs) {
    const std::string label = "m=" + detail::fmt_m(stats.m);
    try {
      const TabulatedDensity post = pg.posterior(stats);
      double worst = 0.0;
      for (std::size_t i = 0; i < post.size(); ++i) {
        worst = std::max(
            worst, std::abs(post.density(i) - model.prior.density(post.grid[i])));
      }
      rep.cases.push_back(detail::make_case(label, worst / prior_peak, kTol));
    } catch (const Error& e) {
      rep.cases.push_back(detail::make_error_case(label, kTol, e.what()));
    }
  }

  rep.runtime_seconds = watch.seconds();
  return rep;
}

/*
 * Exchangeability.  Model probabilities must not depend on observation
 * order: each suite enumerates every outcome up to n_max (allocations with
 * at most three features, or all label sequences) and takes the worst
 * log-probability deviation across all reorderings.
 */

inline VerificationReport exchangeability_suite(const LevyIntensity& lam,
                                                int n_max,
                                                const QuadratureSpec& spec) {
  const detail::Stopwatch watch;
  if (n_max < 1 || n_max > 6) {
    throw DomainError("exchangeability: n_max must be between 1 and 6");
  }
  constexpr double kTol = 1e-9;
  constexpr int kMaxFeatures = 3;

  VerificationReport rep;
  rep.name = "exchangeability_crm";
  {
    std::ostringstream os;
    os << levy_kind_name(lam.kind()) << " intensity, n <= " << n_max
       << ", features <= " << kMaxFeatures << ", all customer orders";
    rep.grid = os.str();
  }

  for (int n = 1; n <= n_max; ++n) {
    const MomentCache cache(lam, spec);
    const std::vector<FeatureAllocation> allocations =
        detail::enumerate_allocations(n, kMaxFeatures);
    double worst = 0.0;
    long orders = 0;
    for (const FeatureAllocation& z : allocations) {
      const double base = allocation_log_prob(cache, z);
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      orders = 1;
      while (std::next_permutation(perm.begin(), perm.end())) {
        const double lp = allocation_log_prob(cache, permute_customers(z, perm));
        worst = std::max(worst, detail::log_prob_deviation(lp, base));
        ++orders;
      }
    }
    std::ostringstream label;
    label << "n=" << n << " (" << allocations.size() << " allocations x "
          << orders << " orders)";
    rep.cases.push_back(detail::make_case(label.str(), worst, kTol));
  }

  rep.runtime_seconds = watch.seconds();
  return rep;
}

inline VerificationReport exchangeability_suite(const GibbsModel& model,
                                                int n_max) {
  const detail::Stopwatch watch;
  if (n_max < 1 || n_max > 6) {
    throw DomainError("exchangeability: n_max must be between 1 and 6");
  }
  constexpr double kTol = 1e-12;

  VerificationReport rep;
  rep.name = "exchangeability_species";
  {
    std::ostringstream os;
    os << gibbs_kind_name(model.kind()) << " weights, n <= " << n_max
       << ", all label sequences x all orders";
    rep.grid = os.str();
  }

  for (int n = 1; n <= n_max; ++n) {
    const std::vector<std::vector<int>> sequences = detail::label_sequences(n);
    double worst = 0.0;
    long orders = 0;
    for (const std::vector<int>& seq : sequences) {
      const double base = eppf_log_prob(model, seq);
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      orders = 1;
      while (std::next_permutation(perm.begin(), perm.end())) {
        std::vector<int> reordered(n);
        for (int i = 0; i < n; ++i) reordered[i] = seq[perm[i]];
        const double lp = eppf_log_prob(model, reordered);
        worst = std::max(worst, detail::log_prob_deviation(lp, base));
        ++orders;
      }
    }
    std::ostringstream label;
    label << "n=" << n << " (" << sequences.size() << " sequences x " << orders
          << " orders)";
    rep.cases.push_back(detail::make_case(label.str(), worst, kTol));
  }

  rep.runtime_seconds = watch.seconds();
  return rep;
}

inline VerificationReport exchangeability_suite(const SPModel& model,
                                                int n_max,
                                                const QuadratureSpec& spec) {
  const detail::Stopwatch watch;
  if (n_max < 1 || n_max > 6) {
    throw DomainError("exchangeability: n_max must be between 1 and 6");
  }
  constexpr double kTol = 1e-8;
  constexpr int kMaxFeatures = 3;

  VerificationReport rep;
  rep.name = "exchangeability_sp";
  {
    std::ostringstream os;
    os << levy_kind_name(model.lam.kind()) << " intensity, scale mixed out, n <= "
       << n_max << ", features <= " << kMaxFeatures
       << ", all customer orders";
    rep.grid = os.str();
  }

  for (int n = 1; n <= n_max; ++n) {
    const std::vector<FeatureAllocation> allocations =
        detail::enumerate_allocations(n, kMaxFeatures);
    double worst = 0.0;
    long orders = 0;
    for (const FeatureAllocation& z : allocations) {
      const double base = detail::sp_allocation_log_prob(model, z, spec);
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      orders = 1;
      while (std::next_permutation(perm.begin(), perm.end())) {
        const double lp = detail::sp_allocation_log_prob(
            model, permute_customers(z, perm), spec);
        worst = std::max(worst, detail::log_prob_deviation(lp, base));
        ++orders;
      }
    }
    std::ostringstream label;
    label << "n=" << n << " (" << allocations.size() << " allocations x "
          << orders << " orders)";
    rep.cases.push_back(detail::make_case(label.str(), worst, kTol));
  }

  rep.runtime_seconds = watch.seconds();
  return rep;
}

/*
 * Growth curves.  Empirical E[K_j] over simulated runs against the analytic
 * curve, one z-score per step, Bonferroni-corrected so the whole curve fails
 * about as often as a single three-sigma test.  Replicate r draws from the
 * stream derived from (seed, r), which makes the result a pure function of
 * (inputs, seed) no matter how replicates are scheduled across threads;
 * per-thread sums are integers, so aggregation is exact and order-free.
 */

inline constexpr double kGrowthFamilyLevel = 0.0026997960632601892;

inline VerificationReport growth_curve(const LevyIntensity& lam, int n,
                                       int replicates, std::uint64_t seed,
                                       const QuadratureSpec& spec,
                                       int num_threads = 0) {
  const detail::Stopwatch watch;
  if (n < 0) throw DomainError("growth curve: n must be >= 0");
  if (replicates < 100) {
    throw DomainError("growth curve: need at least 100 replicates");
  }

  VerificationReport rep;
  rep.name = "growth_curve";
  rep.seed = seed;
  {
    std::ostringstream os;
    os << levy_kind_name(lam.kind()) << " intensity, n=" << n
       << ", replicates=" << replicates;
    rep.grid = os.str();
  }
  if (n == 0) {
    rep.runtime_seconds = watch.seconds();
    return rep;
  }

  const MomentCache cache(lam, spec);
  std::vector<double> want(n);
  for (int j = 0; j < n; ++j) want[j] = expected_num_features(cache, j + 1);

  int threads = num_threads > 0
                    ? num_threads
                    : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, replicates));
  std::vector<std::vector<std::int64_t>> sums(
      threads, std::vector<std::int64_t>(n, 0));
  std::vector<std::vector<std::int64_t>> sumsq(
      threads, std::vector<std::int64_t>(n, 0));
  auto worker = [&lam, &spec, &sums, &sumsq, n, replicates, seed,
                 threads](int t) {
    for (int r = t; r < replicates; r += threads) {
      Rng rng = make_rng(replicate_seed(seed, static_cast<std::uint64_t>(r)));
      FeatureAllocation z;
      for (int step = 0; step < n; ++step) {
        z = sample_next(rng, lam, z, spec);
        const std::int64_t k = z.k();
        sums[t][step] += k;
        sumsq[t][step] += k * k;
      }
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (std::thread& th : pool) th.join();
  }

  const double crit = normal_upper_quantile(kGrowthFamilyLevel / (2.0 * n));
  const double R = static_cast<double>(replicates);
  for (int j = 0; j < n; ++j) {
    std::int64_t s = 0;
    std::int64_t q = 0;
    for (int t = 0; t < threads; ++t) {
      s += sums[t][j];
      q += sumsq[t][j];
    }
    const double mean = static_cast<double>(s) / R;
    const double var =
        (static_cast<double>(q) - static_cast<double>(s) * mean) / (R - 1.0);
    const double se = std::sqrt(std::max(var, 0.0) / R);
    double zscore;
    if (se == 0.0) {
      zscore = mean == want[j] ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
      zscore = (mean - want[j]) / se;
    }
    std::ostringstream label;
    label << "j=" << (j + 1);
    VerificationCase c =
        detail::make_case(label.str(), std::abs(zscore), crit);
    std::ostringstream note;
    note.precision(17);
    note << "mean=" << mean << " expected=" << want[j];
    c.note = note.str();
    rep.cases.push_back(std::move(c));
  }

  rep.runtime_seconds = watch.seconds();
  return rep;
}

}  // namespace featurelab
