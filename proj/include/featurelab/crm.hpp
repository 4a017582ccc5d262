// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "featurelab/alloc.hpp"
#include "featurelab/common.hpp"
#include "featurelab/levy.hpp"
#include "featurelab/numerics.hpp"

namespace featurelab {

/*
 * One-step predictive for feature sampling under a CRM prior on (0,1):
 * a Poisson count of never-seen features plus one Bernoulli per known
 * feature.  Both parameters are moment ratios of the intensity; the
 * stable_beta kind short-circuits to its Pochhammer closed form, and the
 * generic quadrature route stays available as its cross-check.
 */

struct PredictiveLaw {
  double new_rate = 0.0;
  std::vector<double> known_probs;

  nlohmann::json to_json() const {
    return nlohmann::json{{"new_rate", new_rate},
                          {"known_probs", known_probs}};
  }
};

// Memoizes log moment(p, q) for integer powers; one instance per thread.
class MomentCache {
 public:
  MomentCache(const LevyIntensity& lam, const QuadratureSpec& spec)
      : lam_(&lam), spec_(spec) {}

  double log_moment(int p, int q) const {
    const auto key = std::make_pair(p, q);
    const auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
    const double v = lam_->log_moment(p, q, spec_);
    memo_.emplace(key, v);
    return v;
  }

  double moment(int p, int q) const { return std::exp(log_moment(p, q)); }

  const LevyIntensity& intensity() const { return *lam_; }
  const QuadratureSpec& spec() const { return spec_; }

 private:
  const LevyIntensity* lam_;
  QuadratureSpec spec_;
  mutable std::map<std::pair<int, int>, double> memo_;
};

namespace detail {

inline void require_unit_support(const LevyIntensity& lam) {
  if (lam.support_upper() > 1.0) {
    throw DomainError(
        "feature priors need jump sizes in (0,1): restrict the intensity "
        "(truncated / scaled_to_unit) before building predictives");
  }
}

inline double clamp_prob(double p) {
  return std::min(1.0, std::max(0.0, p));
}

}  // namespace detail

// Moment-ratio predictive; `cache` carries the intensity and tolerance.
inline PredictiveLaw predictive(const MomentCache& cache,
                                const SuffStats& stats) {
  detail::require_unit_support(cache.intensity());
  stats.validate();
  PredictiveLaw law;
  law.new_rate = cache.moment(1, stats.n);
  law.known_probs.reserve(stats.k);
  for (int i = 0; i < stats.k; ++i) {
    const int m = stats.m[i];
    const int q = stats.n - m;
    law.known_probs.push_back(detail::clamp_prob(
        std::exp(cache.log_moment(m + 1, q) - cache.log_moment(m, q))));
  }
  return law;
}

inline PredictiveLaw predictive(const LevyIntensity& lam,
                                const SuffStats& stats,
                                const QuadratureSpec& spec) {
  detail::require_unit_support(lam);
  stats.validate();
  if (lam.kind() == LevyKind::kStableBeta && lam.support_upper() == 1.0) {
    const double alpha = lam.params().alpha;
    const double c = lam.params().c;
    const double sigma = lam.params().sigma;
    PredictiveLaw law;
    law.new_rate = alpha * std::exp(log_pochhammer(c + sigma, stats.n) -
                                    log_pochhammer(c + 1.0, stats.n));
    law.known_probs.reserve(stats.k);
    for (int m : stats.m) {
      law.known_probs.push_back((m - sigma) / (stats.n + c));
    }
    return law;
  }
  MomentCache cache(lam, spec);
  return predictive(cache, stats);
}

// Forced generic route: every parameter computed by quadrature, no closed
// forms anywhere.  This is the oracle arm of the closed-form verification.
inline PredictiveLaw predictive_quadrature(const LevyIntensity& lam,
                                           const SuffStats& stats,
                                           const QuadratureSpec& spec) {
  detail::require_unit_support(lam);
  stats.validate();
  PredictiveLaw law;
  law.new_rate = std::exp(lam.log_moment_quadrature(1.0, stats.n, spec));
  law.known_probs.reserve(stats.k);
  for (int m : stats.m) {
    const int q = stats.n - m;
    law.known_probs.push_back(detail::clamp_prob(
        std::exp(lam.log_moment_quadrature(m + 1.0, q, spec) -
                 lam.log_moment_quadrature(m, q, spec))));
  }
  return law;
}

// Appends one customer: a Bernoulli pass over known features in id order,
// then a Poisson count of fresh ones.  The draw order is part of the
// determinism contract.
inline FeatureAllocation sample_next(Rng& rng, const LevyIntensity& lam,
                                     const FeatureAllocation& z,
                                     const QuadratureSpec& spec) {
  const PredictiveLaw law = predictive(lam, suff_stats(z), spec);
  std::vector<int> keep;
  for (int i = 0; i < z.k(); ++i) {
    if (bernoulli_draw(rng, law.known_probs[i])) keep.push_back(i);
  }
  const long long fresh = poisson_draw(rng, law.new_rate);
  FeatureAllocation out = z;
  out.append_customer(keep, static_cast<int>(fresh));
  return out;
}

inline FeatureAllocation sample_allocation(Rng& rng, const LevyIntensity& lam,
                                           int n, const QuadratureSpec& spec) {
  if (n < 0) throw DomainError("sample_allocation: n must be >= 0");
  FeatureAllocation z;
  for (int j = 0; j < n; ++j) z = sample_next(rng, lam, z, spec);
  return z;
}

// Mean number of distinct features after n customers: the new-feature rates
// accumulated over the steps.  The count is an independent Poisson sum, so
// this is also its variance.
inline double expected_num_features(const MomentCache& cache, int n) {
  detail::require_unit_support(cache.intensity());
  if (n < 0) throw DomainError("expected_num_features: n must be >= 0");
  double total = 0.0;
  for (int j = 0; j < n; ++j) total += cache.moment(1, j);
  return total;
}

inline double expected_num_features(const LevyIntensity& lam, int n,
                                    const QuadratureSpec& spec) {
  MomentCache cache(lam, spec);
  return expected_num_features(cache, n);
}

/*
 * Log probability of a whole allocation under the sequential law.  Step j
 * contributes its Poisson intro term and one Bernoulli factor per feature
 * already on the table; the y_j features born at step j are exchangeable
 * atoms, so the Poisson's 1/y_j! is replaced by the number of ways to match
 * those atoms to their distinct future membership patterns -- without this
 * the chain product would depend on the customer order.
 */
inline double allocation_log_prob(const MomentCache& cache,
                                  const FeatureAllocation& z) {
  detail::require_unit_support(cache.intensity());
  const int n = z.n();
  const int k = z.k();
  std::vector<int> intro(k, -1);
  for (int j = 0; j < n; ++j) {
    for (int id : z.customers()[j]) {
      if (intro[id] < 0) intro[id] = j;
    }
  }
  std::vector<std::vector<int>> columns(k);
  for (int j = 0; j < n; ++j) {
    for (int id : z.customers()[j]) columns[id].push_back(j);
  }

  double logp = 0.0;
  std::vector<int> count(k, 0);  // occurrences among customers seen so far
  for (int j = 0; j < n; ++j) {
    // Poisson intro term for this step
    int y = 0;
    std::map<std::vector<int>, int> future_pattern_mult;
    for (int id = 0; id < k; ++id) {
      if (intro[id] == j) {
        ++y;
        std::vector<int> future(columns[id].begin() + 1, columns[id].end());
        future_pattern_mult[future] += 1;
      }
    }
    const double log_rate = cache.log_moment(1, j);
    logp += y * log_rate - std::exp(log_rate);
    for (const auto& [pattern, mult] : future_pattern_mult) {
      logp -= lgamma_pos(mult + 1.0);
    }
    // Bernoulli factors for features already introduced
    std::vector<char> present(k, 0);
    for (int id : z.customers()[j]) present[id] = 1;
    for (int id = 0; id < k; ++id) {
      if (intro[id] >= j) continue;
      const int m = count[id];
      const int q = j - m;
      const double denom = cache.log_moment(m, q);
      if (present[id]) {
        logp += cache.log_moment(m + 1, q) - denom;
      } else {
        // 1 - p as a moment identity, exact in log space
        logp += cache.log_moment(m, q + 1) - denom;
      }
    }
    for (int id : z.customers()[j]) count[id] += 1;
  }
  return logp;
}

inline double allocation_log_prob(const LevyIntensity& lam,
                                  const FeatureAllocation& z,
                                  const QuadratureSpec& spec) {
  MomentCache cache(lam, spec);
  return allocation_log_prob(cache, z);
}

}  // namespace featurelab
