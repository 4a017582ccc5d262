// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "featurelab/alloc.hpp"
#include "featurelab/common.hpp"
#include "featurelab/numerics.hpp"

namespace featurelab {

/*
 * Gibbs-type species sampling: a discount sigma < 1 and a triangular weight
 * array V(n,k) tied together by V(n,k) = (n - sigma k) V(n+1,k) + V(n+1,k+1)
 * with V(1,1) = 1.  The weights drive the one-step predictive: a new species
 * appears with probability V(n+1,k+1)/V(n,k), an observed one recurs with
 * probability proportional to its count minus the discount.
 */

enum class GibbsKind { kDirichlet, kPitmanYor, kCustom };

inline const char* gibbs_kind_name(GibbsKind kind) {
  switch (kind) {
    case GibbsKind::kDirichlet: return "dirichlet";
    case GibbsKind::kPitmanYor: return "pitman_yor";
    case GibbsKind::kCustom: return "custom";
  }
  return "unknown";
}

inline constexpr double kVRecursionTol = 1e-10;

class GibbsModel {
 public:
  static GibbsModel dirichlet(double theta) {
    if (!(theta > 0.0)) {
      throw DomainError("dirichlet weights: theta must be > 0");
    }
    GibbsModel out;
    out.kind_ = GibbsKind::kDirichlet;
    out.sigma_ = 0.0;
    out.theta_ = theta;
    return out;
  }

  static GibbsModel pitman_yor(double sigma, double theta) {
    if (!(sigma > 0.0 && sigma < 1.0)) {
      throw DomainError("pitman-yor weights: sigma must be in (0,1)");
    }
    if (!(theta > -sigma)) {
      throw DomainError("pitman-yor weights: theta must be > -sigma");
    }
    GibbsModel out;
    out.kind_ = GibbsKind::kPitmanYor;
    out.sigma_ = sigma;
    out.theta_ = theta;
    return out;
  }

  // log_v(n, k) must be defined for 1 <= k <= n; -inf marks a zero weight
  // (models with finitely many attainable blocks).
  static GibbsModel custom(double sigma, std::function<double(int, int)> log_v) {
    if (!(sigma < 1.0)) {
      throw DomainError("gibbs weights: sigma must be < 1");
    }
    if (!log_v) throw DomainError("gibbs weights: missing V provider");
    GibbsModel out;
    out.kind_ = GibbsKind::kCustom;
    out.sigma_ = sigma;
    out.custom_log_v_ = std::move(log_v);
    return out;
  }

  GibbsKind kind() const { return kind_; }
  double sigma() const { return sigma_; }
  double theta() const {
    if (kind_ == GibbsKind::kCustom) {
      throw DomainError("custom gibbs weights carry no theta");
    }
    return theta_;
  }

  double log_v(int n, int k) const {
    if (n < 1 || k < 1 || k > n) {
      throw DomainError("gibbs weights: need 1 <= k <= n");
    }
    switch (kind_) {
      case GibbsKind::kDirichlet:
        return k * std::log(theta_) - log_pochhammer(theta_, n);
      case GibbsKind::kPitmanYor: {
        // the i = 0 and j = 0 factors are both theta and cancel, so every
        // remaining factor is positive even for theta in (-sigma, 0)
        double out = 0.0;
        for (int i = 1; i < k; ++i) out += std::log(theta_ + i * sigma_);
        for (int j = 1; j < n; ++j) out -= std::log(theta_ + j);
        return out;
      }
      case GibbsKind::kCustom:
        return custom_log_v_(n, k);
    }
    return -std::numeric_limits<double>::infinity();
  }

  // V(n+1,k+1)/V(n,k) and V(n+1,k)/V(n,k), simplified where the weight
  // system telescopes; these are the only forms the predictive needs, and
  // the analytic ratios stay exact at n in the hundreds.
  double new_ratio(int n, int k) const {
    switch (kind_) {
      case GibbsKind::kDirichlet:
        return theta_ / (theta_ + n);
      case GibbsKind::kPitmanYor:
        return (theta_ + k * sigma_) / (theta_ + n);
      case GibbsKind::kCustom:
        return std::exp(log_v(n + 1, k + 1) - log_v(n, k));
    }
    return 0.0;
  }

  double old_ratio(int n, int k) const {
    switch (kind_) {
      case GibbsKind::kDirichlet:
      case GibbsKind::kPitmanYor:
        return 1.0 / (theta_ + n);
      case GibbsKind::kCustom:
        return std::exp(log_v(n + 1, k) - log_v(n, k));
    }
    return 0.0;
  }

  nlohmann::json to_json() const {
    switch (kind_) {
      case GibbsKind::kDirichlet:
        return nlohmann::json{{"kind", "dirichlet"}, {"theta", theta_}};
      case GibbsKind::kPitmanYor:
        return nlohmann::json{
            {"kind", "pitman_yor"}, {"sigma", sigma_}, {"theta", theta_}};
      case GibbsKind::kCustom:
        throw DomainError("custom gibbs weights have no JSON form");
    }
    return {};
  }

  static GibbsModel from_json(const nlohmann::json& j) {
    try {
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "dirichlet") {
        return dirichlet(j.at("theta").get<double>());
      }
      if (kind == "pitman_yor") {
        return pitman_yor(j.at("sigma").get<double>(),
                          j.at("theta").get<double>());
      }
      throw DomainError("gibbs weights json: unknown kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(std::string("gibbs weights json: ") + e.what());
    }
  }

 private:
  GibbsModel() = default;

  GibbsKind kind_ = GibbsKind::kDirichlet;
  double sigma_ = 0.0;
  double theta_ = 1.0;
  std::function<double(int, int)> custom_log_v_;
};

// ---- predictive --------------------------------------------------------

struct SpeciesPredictive {
  double p_new = 1.0;
  std::vector<double> p_old;

  nlohmann::json to_json() const {
    return nlohmann::json{{"p_new", p_new}, {"p_old", p_old}};
  }
};

inline SpeciesPredictive gibbs_predictive(const GibbsModel& model,
                                          const Partition& part) {
  part.validate();
  SpeciesPredictive out;
  if (part.n == 0) return out;  // the first draw is always a new species
  const int n = part.n;
  const int k = part.k();
  out.p_new = model.new_ratio(n, k);
  const double ratio = model.old_ratio(n, k);
  out.p_old.resize(part.blocks.size());
  for (std::size_t i = 0; i < part.blocks.size(); ++i) {
    out.p_old[i] = ratio * (part.blocks[i] - model.sigma());
  }
  if (!std::isfinite(out.p_new) ||
      !std::all_of(out.p_old.begin(), out.p_old.end(),
                   [](double p) { return std::isfinite(p); })) {
    throw DomainError("gibbs predictive: weight ratio evaluated non-finite");
  }
  return out;
}

// Max relative residual of V(n,k) = (n - sigma k) V(n+1,k) + V(n+1,k+1)
// over n <= N.  Zero weights recurse to zero weights; a zero weight with a
// live successor shows up as an infinite residual.
inline double check_v_recursion(const GibbsModel& model, int N) {
  if (N < 1) throw DomainError("recursion check: N must be >= 1");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (int n = 1; n <= N; ++n) {
    for (int k = 1; k <= n; ++k) {
      const double lv = model.log_v(n, k);
      const double lv_same = model.log_v(n + 1, k);
      const double lv_up = model.log_v(n + 1, k + 1);
      if (lv == -kInf) {
        if (lv_same == -kInf && lv_up == -kInf) continue;
        return kInf;
      }
      const double residual =
          std::abs(1.0 - (n - model.sigma() * k) * std::exp(lv_same - lv) -
                   std::exp(lv_up - lv));
      worst = std::max(worst, residual);
    }
  }
  // V(1,1) = 1 is part of the same normalization contract
  worst = std::max(worst, std::abs(model.log_v(1, 1)));
  return worst;
}

// ---- sampling ----------------------------------------------------------

inline void append_observation(Rng& rng, const GibbsModel& model,
                               Partition* part) {
  const SpeciesPredictive pred = gibbs_predictive(model, *part);
  double u = uniform01(rng);
  u -= pred.p_new;
  if (u < 0.0) {
    part->blocks.push_back(1);
  } else {
    std::size_t pick = part->blocks.size() - 1;
    for (std::size_t i = 0; i < pred.p_old.size(); ++i) {
      u -= pred.p_old[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    part->blocks[pick] += 1;
  }
  part->n += 1;
}

inline Partition sample_partition(Rng& rng, const GibbsModel& model, int n) {
  if (n < 0) throw DomainError("sample_partition: n must be >= 0");
  if (model.kind() == GibbsKind::kCustom && n > 0) {
    const double residual = check_v_recursion(model, n);
    if (!(residual < kVRecursionTol)) {
      throw DomainError(
          "sample_partition: custom weights violate the recursion "
          "(max relative residual " +
          std::to_string(residual) + ")");
    }
  }
  Partition part;
  for (int i = 0; i < n; ++i) append_observation(rng, model, &part);
  return part;
}

// ---- sequence probabilities ---------------------------------------------

// Chain-rule log probability of a full assignment sequence (one integer
// species label per observation; labels are matched by value, first
// occurrences open new blocks).
inline double eppf_log_prob(const GibbsModel& model,
                            const std::vector<int>& labels) {
  Partition part;
  std::map<int, std::size_t> index_of;
  double out = 0.0;
  for (const int label : labels) {
    if (out == -std::numeric_limits<double>::infinity()) return out;
    const SpeciesPredictive pred = gibbs_predictive(model, part);
    const auto it = index_of.find(label);
    if (it == index_of.end()) {
      out += std::log(pred.p_new);
      index_of.emplace(label, part.blocks.size());
      part.blocks.push_back(1);
    } else {
      out += std::log(pred.p_old[it->second]);
      part.blocks[it->second] += 1;
    }
    part.n += 1;
  }
  return out;
}

}  // namespace featurelab
