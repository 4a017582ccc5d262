// Apache License, Version 2.0, refer to LICENSE.txt
//
// featurelab: sampling, prediction, scale-posterior export, and the
// verification lab behind one binary.  Exit codes: 0 success, 1 failed
// verification, 2 argument or parse error, 3 numeric non-convergence.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "featurelab/featurelab.hpp"

using namespace featurelab;

namespace {

// Exactly one of these is set; which one decides what each subcommand does.
struct ParsedModel {
  std::optional<LevyIntensity> crm;
  std::optional<SPModel> sp;
  std::optional<GibbsModel> species;

  nlohmann::json to_json() const {
    if (crm) return crm->to_json();
    if (sp) return sp->to_json();
    return species->to_json();
  }
};

double parse_number(const std::string& key, const std::string& val) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(val, &pos);
    if (pos != val.size()) throw std::invalid_argument(val);
    return v;
  } catch (const std::exception&) {
    throw DomainError("model shorthand: bad numeric value for '" + key +
                      "': '" + val + "'");
  }
}

std::map<std::string, std::string> parse_kv(const std::string& body) {
  std::map<std::string, std::string> kv;
  std::istringstream is(body);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw DomainError("model shorthand: expected key=value, got '" + tok +
                        "'");
    }
    const std::string key = tok.substr(0, eq);
    if (!kv.emplace(key, tok.substr(eq + 1)).second) {
      throw DomainError("model shorthand: duplicate key '" + key + "'");
    }
  }
  return kv;
}

std::string take_str(std::map<std::string, std::string>& kv,
                     const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) {
    throw DomainError("model shorthand: missing key '" + key + "'");
  }
  std::string out = it->second;
  kv.erase(it);
  return out;
}

double take_num(std::map<std::string, std::string>& kv,
                const std::string& key) {
  return parse_number(key, take_str(kv, key));
}

// kind:key=val,...  e.g. stable-beta:alpha=2,c=1,sigma=0.5
// An intensity kind plus prior=uniform,r=... (or prior=exponential,rate=...)
// builds a scaled-process model.
ParsedModel model_from_shorthand(const std::string& s,
                                 const QuadratureSpec& spec) {
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  auto kv = parse_kv(colon == std::string::npos ? "" : s.substr(colon + 1));

  ParsedModel out;
  if (kind == "dirichlet") {
    out.species = GibbsModel::dirichlet(take_num(kv, "theta"));
  } else if (kind == "pitman-yor" || kind == "pitman_yor") {
    const double sigma = take_num(kv, "sigma");
    out.species = GibbsModel::pitman_yor(sigma, take_num(kv, "theta"));
  } else {
    std::optional<LevyIntensity> lam;
    if (kind == "stable-beta" || kind == "stable_beta") {
      const double alpha = take_num(kv, "alpha");
      const double c = take_num(kv, "c");
      lam = LevyIntensity::stable_beta(alpha, c, take_num(kv, "sigma"));
    } else if (kind == "stable") {
      const double c = take_num(kv, "c");
      lam = LevyIntensity::stable(c, take_num(kv, "sigma"));
    } else if (kind == "log") {
      const double c = take_num(kv, "c");
      lam = LevyIntensity::log(c, take_num(kv, "r"));
    } else if (kind == "gamma") {
      lam = LevyIntensity::gamma(take_num(kv, "theta"));
    } else {
      throw DomainError("model shorthand: unknown kind '" + kind + "'");
    }
    if (kv.count("prior") > 0) {
      const std::string prior = take_str(kv, "prior");
      PsiPrior p = PsiPrior::uniform(1.0);
      if (prior == "uniform") {
        p = PsiPrior::uniform(take_num(kv, "r"));
      } else if (prior == "exponential") {
        p = PsiPrior::exponential(take_num(kv, "rate"));
      } else {
        throw DomainError("model shorthand: unknown prior '" + prior + "'");
      }
      out.sp = SPModel::make(std::move(*lam), std::move(p), spec);
    } else {
      out.crm = std::move(lam);
    }
  }
  if (!kv.empty()) {
    throw DomainError("model shorthand: unknown key '" + kv.begin()->first +
                      "' for kind '" + kind + "'");
  }
  return out;
}

ParsedModel model_from_json(const nlohmann::json& j,
                            const QuadratureSpec& spec) {
  ParsedModel out;
  if (j.contains("levy")) {
    out.sp = SPModel::from_json(j, spec);
    return out;
  }
  std::string kind;
  try {
    kind = j.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("model json: ") + e.what());
  }
  if (kind == "dirichlet" || kind == "pitman_yor") {
    out.species = GibbsModel::from_json(j);
  } else {
    out.crm = LevyIntensity::from_json(j);
  }
  return out;
}

nlohmann::json parse_json_text(const std::string& what,
                               const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

// --model accepts inline JSON, a JSON file path, or kind:key=val shorthand.
ParsedModel parse_model(const std::string& arg, const QuadratureSpec& spec) {
  if (!arg.empty() && arg.front() == '{') {
    return model_from_json(parse_json_text("model JSON", arg), spec);
  }
  if (std::ifstream is(arg); is) {
    std::ostringstream text;
    text << is.rdbuf();
    return model_from_json(parse_json_text("model file " + arg, text.str()),
                           spec);
  }
  if (arg.find(':') != std::string::npos) {
    return model_from_shorthand(arg, spec);
  }
  throw DomainError("model '" + arg +
                    "' is neither a readable file, inline JSON, nor "
                    "kind:key=val shorthand");
}

SuffStats parse_stats(const std::string& s) {
  return SuffStats::from_json(parse_json_text("stats JSON", s));
}

// Species statistics are a partition; accept "m" as an alias for "blocks".
Partition parse_partition(const std::string& s) {
  nlohmann::json j = parse_json_text("stats JSON", s);
  if (j.contains("m") && !j.contains("blocks")) j["blocks"] = j["m"];
  return Partition::from_json(j);
}

QuadratureSpec load_spec_from_env() {
  QuadratureSpec spec;
  const char* path = std::getenv("FEATURELAB_CONFIG");
  if (path == nullptr || *path == '\0') return spec;
  std::ifstream is(path);
  if (!is) throw Error(std::string("cannot open config: ") + path);
  std::ostringstream text;
  text << is.rdbuf();
  const nlohmann::json j = parse_json_text("config", text.str());
  try {
    if (j.contains("quadrature")) {
      const nlohmann::json& q = j.at("quadrature");
      spec.rel_tol = q.value("rel_tol", spec.rel_tol);
      spec.abs_tol = q.value("abs_tol", spec.abs_tol);
      spec.max_refinements = q.value("max_refinements", spec.max_refinements);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("config: ") + e.what());
  }
  spec.validate();
  return spec;
}

nlohmann::json spec_to_json(const QuadratureSpec& spec) {
  return nlohmann::json{{"rel_tol", spec.rel_tol},
                        {"abs_tol", spec.abs_tol},
                        {"max_refinements", spec.max_refinements}};
}

void with_output(const std::string& path,
                 const std::function<void(std::ostream&)>& fn) {
  if (path.empty()) {
    fn(std::cout);
    return;
  }
  std::ofstream os(path);
  if (!os) throw Error("cannot open for writing: " + path);
  fn(os);
}

SuffStats stats_of(int n, std::vector<int> m) {
  SuffStats s;
  s.n = n;
  s.k = static_cast<int>(m.size());
  s.m = std::move(m);
  return s;
}

int cmd_sample(const ParsedModel& model, int n, std::uint64_t seed,
               const std::string& out, const QuadratureSpec& spec) {
  Rng rng = make_rng(seed);
  with_output(out, [&](std::ostream& os) {
    if (model.crm) {
      write_jsonl(sample_allocation(rng, *model.crm, n, spec), os);
    } else if (model.sp) {
      write_jsonl(sample_allocation(rng, *model.sp, n, spec), os);
    } else {
      const Partition part = sample_partition(rng, *model.species, n);
      if (part.n > 0) os << part.to_json().dump() << "\n";
    }
  });
  return 0;
}

int cmd_predict(const ParsedModel& model, const std::string& stats_text,
                bool marginal, int y_max, const std::optional<double>& psi,
                const std::string& out, const QuadratureSpec& spec) {
  nlohmann::json result;
  if (model.species) {
    if (marginal || psi) {
      throw DomainError(
          "--marginal/--psi apply to scaled-process models only");
    }
    result = gibbs_predictive(*model.species, parse_partition(stats_text))
                 .to_json();
  } else if (model.crm) {
    if (marginal || psi) {
      throw DomainError(
          "--marginal/--psi apply to scaled-process models only");
    }
    result = predictive(*model.crm, parse_stats(stats_text), spec).to_json();
  } else {
    const SuffStats stats = parse_stats(stats_text);
    if (psi) {
      result = conditional_predictive(*model.sp, stats, *psi, spec).to_json();
    } else {
      result = marginal_predictive(*model.sp, stats, y_max, spec).to_json();
    }
  }
  with_output(out,
              [&](std::ostream& os) { os << result.dump() << "\n"; });
  return 0;
}

int cmd_psi_posterior(const ParsedModel& model, const std::string& stats_text,
                      const std::string& out, const QuadratureSpec& spec) {
  if (!model.sp) {
    throw DomainError("psi-posterior requires a scaled-process model");
  }
  const TabulatedDensity d =
      psi_posterior(*model.sp, parse_stats(stats_text), spec);
  with_output(out, [&](std::ostream& os) { write_density_csv(os, d); });
  return 0;
}

int cmd_growth(const ParsedModel& model, int n, int replicates,
               std::uint64_t seed, int threads, const std::string& out,
               const QuadratureSpec& spec) {
  if (!model.crm) {
    throw DomainError("growth requires a plain intensity model");
  }
  const VerificationReport rep =
      growth_curve(*model.crm, n, replicates, seed, spec, threads);
  const nlohmann::json doc{
      {"config",
       {{"model", model.to_json()},
        {"n", n},
        {"replicates", replicates},
        {"seed", seed},
        {"quadrature", spec_to_json(spec)}}},
      {"report", rep.to_json()}};
  with_output(out, [&](std::ostream& os) { os << doc.dump() << "\n"; });
  std::cerr << rep.to_text();
  return rep.passed() ? 0 : 1;
}

VerificationReport expect_classification(VerificationReport rep,
                                         const std::string& want) {
  VerificationCase c;
  c.label = "classification == " + want;
  c.metric = rep.classification == want ? 0.0 : 1.0;
  c.threshold = 1.0;
  c.pass = rep.classification == want;
  c.note = rep.classification;
  rep.cases.push_back(std::move(c));
  return rep;
}

int cmd_verify(const std::string& suite, const std::string& out,
               const QuadratureSpec& spec) {
  const bool all = suite == "all";
  std::vector<VerificationReport> reports;

  if (all || suite == "closed-forms") {
    reports.push_back(verify_closed_forms(spec));
  }

  if (all || suite == "thm41") {
    // reciprocal intensity: the scale posterior must sit on the prior
    const SPModel flat = SPModel::make(LevyIntensity::log(1.2, 2.0),
                                       PsiPrior::uniform(2.0), spec);
    for (const int n : {2, 4, 6}) {
      const std::vector<SuffStats> configs{
          stats_of(n, {n}),    stats_of(n, {1}),       stats_of(n, {n, 1}),
          stats_of(n, {1, 1}), stats_of(n, {n, n, 1}), stats_of(n, {1, 1, 1})};
      reports.push_back(prior_invariance_report(flat, n, configs, spec));
    }
  }

  if (all || suite == "thm42") {
    // power-law intensity: (n,k)-only; gamma control: frequency-dependent
    const SPModel stable = SPModel::make(LevyIntensity::stable(1.0, 0.5),
                                         PsiPrior::exponential(1.0), spec);
    const std::vector<SuffStats> nk{stats_of(6, {6}), stats_of(6, {5, 1}),
                                    stats_of(6, {3, 3}),
                                    stats_of(6, {2, 2, 2}),
                                    stats_of(6, {4, 1, 1})};
    reports.push_back(expect_classification(
        psi_dependence_report(stable, 6, nk, spec), "(n,k)-only"));

    const SPModel gamma = SPModel::make(LevyIntensity::gamma(1.0),
                                        PsiPrior::exponential(1.0), spec);
    reports.push_back(expect_classification(
        psi_dependence_report(gamma, 6, {stats_of(6, {3}), stats_of(6, {5})},
                              spec),
        "frequency-dependent"));
  }

  if (all || suite == "exchangeability") {
    reports.push_back(exchangeability_suite(
        LevyIntensity::stable_beta(1.0, 1.0, 0.5), 4, spec));
    reports.push_back(exchangeability_suite(GibbsModel::dirichlet(1.0), 5));
    reports.push_back(exchangeability_suite(
        SPModel::make(LevyIntensity::stable(1.0, 0.5),
                      PsiPrior::exponential(1.0), spec),
        3, spec));
  }

  bool passed = true;
  nlohmann::json jr = nlohmann::json::array();
  for (const VerificationReport& rep : reports) {
    passed = passed && rep.passed();
    jr.push_back(rep.to_json());
    std::cerr << rep.to_text();
  }
  const nlohmann::json doc{{"config", {{"quadrature", spec_to_json(spec)}}},
                           {"suite", suite},
                           {"passed", passed},
                           {"reports", jr}};
  with_output(out, [&](std::ostream& os) { os << doc.dump() << "\n"; });
  return passed ? 0 : 1;
}

int run(int argc, char** argv) {
  CLI::App app{
      "feature and species sampling models: simulation, prediction, and "
      "verification"};
  app.require_subcommand(1);

  const std::string model_help =
      "model file, inline JSON, or kind:key=val shorthand (kinds: "
      "stable-beta, stable, log, gamma, dirichlet, pitman-yor; add "
      "prior=uniform,r=... or prior=exponential,rate=... for a scaled "
      "process)";

  std::string model_arg;
  std::string stats_arg;
  std::string out_path;
  std::uint64_t seed = 0;
  int n = 0;
  int replicates = 1000;
  int threads = 0;
  int y_max = -1;
  bool marginal = false;
  double psi_value = 0.0;
  std::string suite;

  CLI::App* sample =
      app.add_subcommand("sample", "draw an allocation or partition");
  sample->add_option("--model", model_arg, model_help)->required();
  sample->add_option("--n", n, "number of observations")
      ->required()
      ->check(CLI::NonNegativeNumber);
  sample->add_option("--seed", seed, "random seed (default 0)");
  sample->add_option("--out", out_path, "output path (default stdout)");

  CLI::App* predict =
      app.add_subcommand("predict", "one-step predictive law");
  predict->add_option("--model", model_arg, model_help)->required();
  predict
      ->add_option("--stats", stats_arg,
                   "observed statistics, e.g. '{\"n\":10,\"m\":[3]}' "
                   "(species models take blocks)")
      ->required();
  predict->add_flag("--marginal", marginal,
                    "scaled process: mix the predictive over the scale "
                    "posterior (default)");
  predict->add_option("--ymax", y_max,
                      "truncation for the marginal new-feature pmf");
  CLI::Option* psi_opt = predict->add_option(
      "--psi", psi_value, "scaled process: condition on this scale value");

  CLI::App* psi_cmd = app.add_subcommand(
      "psi-posterior", "export the scale posterior as CSV (a, density, cdf)");
  psi_cmd->add_option("--model", model_arg, model_help)->required();
  psi_cmd->add_option("--stats", stats_arg, "observed statistics")->required();
  psi_cmd->add_option("--out", out_path, "output path (default stdout)");

  CLI::App* growth = app.add_subcommand(
      "growth", "simulated feature growth against the analytic curve");
  growth->add_option("--model", model_arg, model_help)->required();
  growth->add_option("--n", n, "observations per replicate")
      ->required()
      ->check(CLI::NonNegativeNumber);
  growth->add_option("--reps", replicates, "replicates (>= 100)")->required();
  growth->add_option("--seed", seed, "random seed (default 0)");
  growth->add_option("--threads", threads,
                     "worker threads (0 = hardware default)");
  growth->add_option("--out", out_path, "output path (default stdout)");

  CLI::App* verify = app.add_subcommand("verify", "run a verification suite");
  verify
      ->add_option("--suite", suite,
                   "closed-forms: closed forms vs quadrature; thm41: "
                   "reciprocal-intensity prior invariance; thm42: posterior "
                   "dependence classes; exchangeability: order invariance; "
                   "all: everything")
      ->required()
      ->check(CLI::IsMember(
          {"closed-forms", "thm41", "thm42", "exchangeability", "all"}));
  verify->add_option("--out", out_path, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const QuadratureSpec spec = load_spec_from_env();
  std::optional<double> psi;
  if (psi_opt->count() > 0) psi = psi_value;

  if (sample->parsed()) {
    return cmd_sample(parse_model(model_arg, spec), n, seed, out_path, spec);
  }
  if (predict->parsed()) {
    return cmd_predict(parse_model(model_arg, spec), stats_arg, marginal,
                       y_max, psi, out_path, spec);
  }
  if (psi_cmd->parsed()) {
    return cmd_psi_posterior(parse_model(model_arg, spec), stats_arg, out_path,
                             spec);
  }
  if (growth->parsed()) {
    return cmd_growth(parse_model(model_arg, spec), n, replicates, seed,
                      threads, out_path, spec);
  }
  return cmd_verify(suite, out_path, spec);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const QuadratureError& e) {
    std::cerr << "featurelab: " << e.what() << "\n";
    return 3;
  } catch (const DegeneratePosteriorError& e) {
    std::cerr << "featurelab: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "featurelab: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "featurelab: " << e.what() << "\n";
    return 2;
  }
}
