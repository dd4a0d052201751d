#pragma once

#include <iomanip>

#include "json.hpp"
#include "mnar/general_dcm.hpp"
#include "mnar/joint_likelihood.hpp"
#include "mnar/sensitivity.hpp"
#include "mnar/sim_study.hpp"

namespace mnar {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSON serialization. All containers behind nlohmann::json are ordered, so a
// given in-memory result always dumps to the same bytes (determinism contract
// for reports).
// ---------------------------------------------------------------------------

inline json to_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const MatrixXd& m) {
  json a = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

inline json to_json(const EstimateReport& rep) {
  json j;
  j["method"] = rep.method;
  j["beta_hat"] = to_json(rep.beta_hat);
  if (rep.vcov.size() > 0) {
    j["vcov"] = to_json(rep.vcov);
    json se = json::array();
    for (int k = 0; k < rep.vcov.rows(); ++k)
      se.push_back(std::sqrt(std::max(0.0, rep.vcov(k, k))));
    j["se"] = se;
  }
  if (rep.ci.size() > 0) j["ci"] = to_json(rep.ci);
  j["diagnostics"] = {{"iterations", rep.iterations},
                      {"residual_norm", rep.residual_norm},
                      {"models_used", rep.models_used}};
  return j;
}

inline json to_json(const std::vector<PatternTableRow>& table) {
  json a = json::array();
  for (const auto& r : table)
    a.push_back({{"id", r.id},
                 {"mask", r.mask},
                 {"count", r.count},
                 {"percent", r.percent}});
  return a;
}

inline json to_json(const BootstrapResult& b) {
  return {{"B", b.B},
          {"failures", b.failures},
          {"sd", to_json(b.sd)},
          {"percentile_ci", to_json(b.percentile_ci)}};
}

inline json to_json(const SensitivityCurve& curve) {
  json pts = json::array();
  for (const auto& pt : curve.points) {
    json p;
    p["phi"] = pt.phi;
    json reps;
    for (const auto& [m, rep] : pt.reports) reps[m] = to_json(rep);
    p["reports"] = reps;
    p["failures"] = pt.failures;
    pts.push_back(p);
  }
  return {{"points", pts}};
}

inline json to_json(const SimResult& res) {
  json methods;
  for (const auto& [m, st] : res.by_method) {
    json s = {{"bias", st.bias},
              {"mc_se_of_bias", st.se_bias},
              {"mc_sd", st.mc_sd},
              {"mean_estimated_sd", st.mean_est_sd},
              {"rmse", st.rmse},
              {"coverage", st.coverage}};
    if (!is_na(st.mean_boot_sd)) {
      s["mean_bootstrap_sd"] = st.mean_boot_sd;
      s["mean_estimated_sd_boot_subset"] = st.mean_est_sd_boot_subset;
      s["bootstrap_replicates_used"] = st.boot_replicates_used;
    }
    methods[m] = s;
  }
  return {{"scenario", res.cfg.scenario},
          {"n", res.cfg.n},
          {"replicates", res.cfg.replicates},
          {"truth", res.truth},
          {"failures", res.failures},
          {"methods", methods}};
}

// FNV-1a over the canonical dump of the resolved config
inline std::string config_hash(const json& cfg) {
  const std::string s = cfg.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// every report carries enough metadata to replay the run exactly
inline json report_envelope(const std::string& command, const json& resolved,
                            std::uint64_t seed) {
  json j;
  j["version"] = version_string;
  j["command"] = command;
  j["config"] = resolved;
  j["config_hash"] = config_hash(resolved);
  j["seed"] = seed;
  return j;
}

// ---------------------------------------------------------------------------
// Run configuration: JSON in, resolved model specs out. Pattern references in
// the config may use either a mask string or a dataset pattern id; ids are
// translated to masks once the data is ingested (masks survive resampling).
// ---------------------------------------------------------------------------

struct TermsEntry {
  int pattern = -1;      // dataset id, if given
  std::string mask;      // mask string, if given
  std::vector<std::string> terms;

  std::string resolve_mask(const PatternedDataset& d) const {
    if (!mask.empty()) {
      d.id_by_mask(mask);  // existence check
      return mask;
    }
    return d.pattern(pattern).mask_string();
  }
};

struct RunConfig {
  std::string input;
  std::string na_token = "NA";
  VariableSchema schema;
  std::vector<TermsEntry> odds_entries;
  bool has_law = false;
  LawSpec law;
  std::vector<TermsEntry> mr_entries;
  json resolved;  // the config as parsed, for embedding in reports

  static std::vector<TermsEntry> parse_entries(const json& j,
                                               const std::string& field) {
    std::vector<TermsEntry> out;
    if (!j.is_array())
      throw UserError("config field \"" + field + "\" must be an array");
    for (const auto& e : j) {
      TermsEntry t;
      if (e.contains("mask")) t.mask = e.at("mask").get<std::string>();
      else if (e.contains("pattern")) t.pattern = e.at("pattern").get<int>();
      else
        throw UserError("config field \"" + field +
                        "\": entry needs \"mask\" or \"pattern\"");
      t.terms = e.at("terms").get<std::vector<std::string>>();
      out.push_back(std::move(t));
    }
    return out;
  }

  static RunConfig from_json(const json& j) {
    RunConfig cfg;
    cfg.resolved = j;
    if (j.contains("input")) cfg.input = j.at("input").get<std::string>();
    if (j.contains("na_token"))
      cfg.na_token = j.at("na_token").get<std::string>();
    if (!j.contains("schema"))
      throw UserError("config field \"schema\" is required");
    for (const auto& v : j.at("schema")) {
      Variable var;
      var.name = v.at("name").get<std::string>();
      const std::string kind = v.value("kind", "continuous");
      if (kind == "continuous") var.kind = VarKind::continuous;
      else if (kind == "binary") var.kind = VarKind::binary;
      else if (kind == "categorical") {
        var.kind = VarKind::categorical;
        var.levels = v.at("levels").get<std::vector<std::string>>();
      } else
        throw UserError("config field \"schema\": unknown kind \"" + kind +
                        "\" for variable " + var.name);
      cfg.schema.vars.push_back(std::move(var));
    }
    cfg.schema.validate();
    if (j.contains("odds"))
      cfg.odds_entries = parse_entries(j.at("odds"), "odds");
    if (j.contains("law")) {
      const auto& l = j.at("law");
      const std::string kind = l.at("law").get<std::string>();
      if (kind == "gaussian_linear") {
        cfg.law.kind = LawKind::gaussian_linear;
        cfg.law.outcome = l.at("outcome").get<std::string>();
        cfg.law.predictors =
            l.at("predictors").get<std::vector<std::string>>();
      } else if (kind == "discrete_loglinear") {
        cfg.law.kind = LawKind::discrete_loglinear;
        cfg.law.loglinear_terms =
            l.at("terms").get<std::vector<std::string>>();
      } else
        throw UserError("config field \"law\": unknown kind \"" + kind + "\"");
      cfg.has_law = true;
    }
    if (j.contains("mr_law"))
      cfg.mr_entries = parse_entries(j.at("mr_law"), "mr_law");
    return cfg;
  }

  OddsModelSpec odds_spec(const PatternedDataset& d) const {
    if (odds_entries.empty())
      throw UserError("nonresponse odds model required; add an \"odds\" "
                      "section to the config");
    OddsModelSpec s;
    for (const auto& e : odds_entries)
      s.terms_by_mask[e.resolve_mask(d)] = e.terms;
    return s;
  }

  std::map<std::string, std::vector<std::string>> mr_terms(
      const PatternedDataset& d) const {
    if (mr_entries.empty())
      throw UserError("per-pattern law designs required for mr; add an "
                      "\"mr_law\" section to the config");
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& e : mr_entries) out[e.resolve_mask(d)] = e.terms;
    return out;
  }
};

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UserError("config parse error in " + path + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

// config checks that need the ingested data; returns human-readable
// violations naming the offending field (empty means ok)
inline std::vector<std::string> validate_config(
    const PatternedDataset& d, const RunConfig& cfg,
    const std::vector<std::string>& methods) {
  std::vector<std::string> out;
  if (methods.empty()) out.push_back("method: empty method list");
  bool needs_odds = false, needs_law = false;
  for (const auto& m : methods) {
    if (m == "ipw" || m == "dr" || m == "mr" || m == "mle") needs_odds = true;
    if (m == "pm" || m == "dr") needs_law = true;
    if (m == "dr" && !cfg.has_law)
      out.push_back("law: complete-case law required for dr");
    if (m == "pm" && !cfg.has_law)
      out.push_back("law: complete-case law required for pm");
    if (m == "mr" && cfg.mr_entries.empty())
      out.push_back("mr_law: per-pattern law designs required for mr");
  }
  if (needs_odds) {
    try {
      cfg.odds_spec(d).resolve(d);
    } catch (const UserError& e) {
      out.push_back(std::string("odds: ") + e.what());
    }
  }
  if (needs_law && cfg.has_law) {
    try {
      if (cfg.law.kind == LawKind::gaussian_linear) {
        cfg.schema.index(cfg.law.outcome);
        make_design(cfg.schema, cfg.law.predictors);
      } else {
        detail::design_no_intercept(cfg.schema, cfg.law.loglinear_terms);
        detail::cell_grid(cfg.schema);
      }
    } catch (const UserError& e) {
      out.push_back(std::string("law: ") + e.what());
    }
  }
  if (!cfg.mr_entries.empty()) {
    try {
      for (const auto& [mask, terms] : cfg.mr_terms(d))
        make_design(cfg.schema, terms);
    } catch (const UserError& e) {
      out.push_back(std::string("mr_law: ") + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimand / grid / tilt parsers for the CLI surface.
// ---------------------------------------------------------------------------

// "mean:Y" or "logistic:Y~X1+X2"
inline EstimandSpec parse_estimand(const VariableSchema& schema,
                                   const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw UserError("estimand must look like mean:Y or logistic:Y~X1+X2");
  const std::string kind = s.substr(0, colon);
  const std::string rest = s.substr(colon + 1);
  if (kind == "mean") return coordinate_mean(schema, rest);
  if (kind == "logistic") {
    const auto tilde = rest.find('~');
    if (tilde == std::string::npos)
      throw UserError("logistic estimand must look like logistic:Y~X1+X2");
    const std::string outcome = rest.substr(0, tilde);
    std::vector<std::string> covs;
    std::stringstream ss(rest.substr(tilde + 1));
    std::string tok;
    while (std::getline(ss, tok, '+'))
      if (!tok.empty() && tok != "1") covs.push_back(tok);
    return logistic_score(schema, outcome, covs);
  }
  throw UserError("unknown estimand kind: " + kind);
}

// "lo:hi:step" (inclusive endpoints) or a comma list of values
inline std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  if (s.find(',') != std::string::npos) {
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
  }
  // split on ':' but keep a leading minus sign attached to each number
  std::vector<double> parts;
  std::string cur;
  for (char c : s) {
    if (c == ':') { parts.push_back(std::stod(cur)); cur.clear(); }
    else cur += c;
  }
  if (!cur.empty()) parts.push_back(std::stod(cur));
  if (parts.size() == 1) return {parts[0]};
  if (parts.size() != 3)
    throw UserError("grid must be lo:hi:step or a comma list, got \"" + s +
                    "\"");
  const double lo = parts[0], hi = parts[1], step = parts[2];
  if (step <= 0 || hi < lo) throw UserError("grid needs hi >= lo and step > 0");
  for (int k = 0;; ++k) {
    const double v = lo + k * step;
    if (v > hi + 1e-12 * (1 + std::abs(hi))) break;
    out.push_back(std::abs(v) < 1e-15 ? 0.0 : v);
  }
  return out;
}

namespace detail {

// variable references inside tilt terms may carry a "mis" suffix marking the
// coordinate as missing under the tilted pattern; strip it when the remainder
// names a schema variable
inline std::string strip_mis(const VariableSchema& schema,
                             const std::string& name) {
  if (name.size() > 3 && name.substr(name.size() - 3) == "mis") {
    const std::string base = name.substr(0, name.size() - 3);
    if (schema.has(base) && !schema.has(name)) return base;
  }
  return name;
}

}  // namespace detail

// Tilt clauses "r=2: phi*Ymis" separated by ';'. The expression after "phi*"
// is a design term over schema variables; "Ymis" refers to the (missing) Y.
inline SelectionBiasSpec parse_tilt(const PatternedDataset& d,
                                    const std::string& s) {
  SelectionBiasSpec spec;
  std::stringstream ss(s);
  std::string clause;
  while (std::getline(ss, clause, ';')) {
    auto strip = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t"));
      v.erase(v.find_last_not_of(" \t") + 1);
      return v;
    };
    clause = strip(clause);
    if (clause.empty()) continue;
    if (clause.compare(0, 2, "r=") != 0)
      throw UserError("tilt clause must look like \"r=2: phi*Ymis\", got \"" +
                      clause + "\"");
    const auto colon = clause.find(':');
    if (colon == std::string::npos)
      throw UserError("tilt clause is missing ':' in \"" + clause + "\"");
    const int r = std::stoi(clause.substr(2, colon - 2));
    std::string expr = strip(clause.substr(colon + 1));
    if (expr.compare(0, 4, "phi*") != 0)
      throw UserError("tilt expression must start with phi*, got \"" + expr +
                      "\"");
    expr = strip(expr.substr(4));
    // rewrite each variable reference (":"-separated interaction factors)
    std::string term;
    std::string factor;
    for (size_t i = 0; i <= expr.size(); ++i) {
      if (i == expr.size() || expr[i] == ':') {
        if (!term.empty()) term += ':';
        term += detail::strip_mis(d.schema, factor);
        factor.clear();
      } else
        factor += expr[i];
    }
    const std::string mask = d.pattern(r).mask_string();
    spec.tilt_terms_by_mask[mask].push_back(term);
  }
  if (spec.tilt_terms_by_mask.empty())
    throw UserError("empty tilt specification");
  return spec;
}

// ---------------------------------------------------------------------------
// MLE-based estimation of a full-data estimand: fit the joint law on the
// discrete support, solve the model-implied population equation
// sum_l f_hat(l) U(l; beta) = 0, and delta-method the MLE variance through.
// ---------------------------------------------------------------------------

inline EstimateReport estimate_mle(const PatternedDataset& d,
                                   const RunConfig& cfg,
                                   const EstimandSpec& U) {
  for (const auto& v : d.schema.vars)
    if (v.kind == VarKind::continuous)
      throw UserError("method mle needs an all-categorical schema; " + v.name +
                      " is continuous");
  if (!cfg.has_law || cfg.law.kind != LawKind::discrete_loglinear)
    throw UserError("method mle needs a discrete_loglinear law in the config");

  JointLawModel skel;
  skel.schema = d.schema;
  for (int r = 1; r <= d.J(); ++r) skel.patterns.push_back(d.pattern(r));
  skel.odds_designs = cfg.odds_spec(d).resolve(d);
  for (const auto& [r, des] : skel.odds_designs)
    skel.alpha[r] = VectorXd::Zero(des.dim());
  skel.cc_terms = detail::design_no_intercept(d.schema, cfg.law.loglinear_terms);
  skel.eta = VectorXd::Zero(skel.cc_terms.dim());
  skel.refresh();

  MleFit mle = fit_mle(d, skel);

  auto beta_of = [&](const JointLawModel& m) {
    auto mean_ef = [&](const VectorXd& b) {
      VectorXd acc = VectorXd::Zero(U.p);
      for (Eigen::Index c = 0; c < m.cells.rows(); ++c)
        acc += m.full_data_density(m.cells.row(c)) * U.U(m.cells.row(c), b);
      return acc;
    };
    detail::SolveDiagnostics diag;
    VectorXd b =
        detail::solve_estimating_equation(mean_ef, VectorXd::Zero(U.p), diag);
    return std::make_pair(b, diag);
  };

  auto [beta, diag] = beta_of(mle.model);

  // delta method: d beta / d theta by re-solving at perturbed theta
  const VectorXd theta = mle.model.theta();
  MatrixXd G(U.p, theta.size());
  JointLawModel pert = mle.model;
  for (int j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * (1 + std::abs(theta(j)));
    VectorXd tp = theta, tm = theta;
    tp(j) += h;
    tm(j) -= h;
    pert.set_theta(tp);
    VectorXd bp = beta_of(pert).first;
    pert.set_theta(tm);
    VectorXd bm = beta_of(pert).first;
    G.col(j) = (bp - bm) / (2 * h);
  }

  EstimateReport rep;
  rep.method = "mle";
  rep.beta_hat = beta;
  rep.iterations = mle.iterations;
  rep.residual_norm = diag.residual_norm;
  MatrixXd v = G * mle.vcov * G.transpose();
  rep.vcov = 0.5 * (v + v.transpose());
  rep.ci = wald_ci(rep.beta_hat, rep.vcov);
  rep.models_used = {"joint_mle"};
  return rep;
}

// ---------------------------------------------------------------------------
// CLI-facing runners: each returns the complete JSON report.
// ---------------------------------------------------------------------------

struct EstimateOptions {
  std::string method = "dr";
  std::string estimand = "mean:Y";
  std::string variance = "sandwich";  // sandwich | bootstrap | both
  int boot_reps = 200;
  std::uint64_t seed = 0;
  int threads = 1;
};

inline json run_estimate(const PatternedDataset& d, const RunConfig& cfg,
                         const EstimateOptions& opt) {
  const auto violations = validate_config(d, cfg, {opt.method});
  if (!violations.empty()) {
    std::string msg;
    for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v;
    throw UserError(msg);
  }
  if (opt.variance != "sandwich" && opt.variance != "bootstrap" &&
      opt.variance != "both")
    throw UserError("variance must be sandwich, bootstrap, or both");
  const EstimandSpec U = parse_estimand(d.schema, opt.estimand);

  EstimateReport rep;
  const bool wants_sandwich = opt.variance != "bootstrap";
  if (opt.method == "mle") {
    rep = estimate_mle(d, cfg, U);
  } else {
    NonresponseFit fit;
    CompleteCaseLaw law;
    const NonresponseFit* fp = nullptr;
    const CompleteCaseLaw* lp = nullptr;
    if (opt.method != "pm") {
      fit = fit_pairwise_logistic(d, cfg.odds_spec(d));
      fp = &fit;
    }
    if (opt.method == "pm" || opt.method == "dr") {
      law = cfg.law.fit(d, U, VectorXd::Zero(U.p));
      lp = &law;
    }
    if (opt.method == "ipw") rep = solve_ipw(d, fit, U);
    else if (opt.method == "pm") rep = solve_pm(d, law, U);
    else if (opt.method == "dr") rep = solve_dr(d, fit, law, U);
    else if (opt.method == "mr") {
      auto mr = solve_mr(d, fit, cfg.mr_terms(d), U);
      rep = mr.report;
      law = std::move(mr.law);
      lp = &law;
    } else
      throw UserError("unknown method: " + opt.method);
    rep.models_used.push_back(fp ? "pairwise_odds" : "");
    rep.models_used.push_back(lp ? "complete_case_law" : "");
    std::erase(rep.models_used, "");
    if (wants_sandwich) {
      rep.vcov = sandwich(opt.method, d, fp, lp, U, rep.beta_hat);
      rep.ci = wald_ci(rep.beta_hat, rep.vcov);
    }
  }

  json results = to_json(rep);
  if (opt.variance != "sandwich" && opt.method != "mle") {
    auto pipeline = [&](const PatternedDataset& rd) {
      if (opt.method == "ipw")
        return solve_ipw(rd, fit_pairwise_logistic(rd, cfg.odds_spec(d)), U)
            .beta_hat;
      if (opt.method == "pm")
        return solve_pm(rd, cfg.law.fit(rd, U, VectorXd::Zero(U.p)), U)
            .beta_hat;
      if (opt.method == "dr")
        return solve_dr(rd, fit_pairwise_logistic(rd, cfg.odds_spec(d)),
                        cfg.law.fit(rd, U, VectorXd::Zero(U.p)), U)
            .beta_hat;
      return solve_mr(rd, fit_pairwise_logistic(rd, cfg.odds_spec(d)),
                      cfg.mr_terms(d), U)
          .report.beta_hat;
    };
    auto boot = bootstrap(d, pipeline, opt.boot_reps, opt.seed, opt.threads);
    results["bootstrap"] = to_json(boot);
    if (!wants_sandwich) {
      // bootstrap-only runs report percentile intervals in the ci slot
      results["ci"] = to_json(boot.percentile_ci);
    }
  } else if (opt.variance != "sandwich") {
    throw UserError("bootstrap variance is not available for mle");
  }

  json out = report_envelope(
      "estimate", cfg.resolved, opt.seed);
  out["options"] = {{"method", opt.method},
                    {"estimand", opt.estimand},
                    {"variance", opt.variance},
                    {"boot_reps", opt.boot_reps}};
  out["results"] = results;
  return out;
}

struct SensitivityOptions {
  std::string tilt;
  std::string grid = "-1:1:0.25";
  std::vector<std::string> methods = {"ipw", "dr"};
  std::string estimand = "mean:Y";
  std::uint64_t seed = 0;
};

inline json run_sensitivity(const PatternedDataset& d, const RunConfig& cfg,
                            const SensitivityOptions& opt) {
  const auto violations = validate_config(d, cfg, opt.methods);
  if (!violations.empty()) {
    std::string msg;
    for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v;
    throw UserError(msg);
  }
  const EstimandSpec U = parse_estimand(d.schema, opt.estimand);
  SelectionBiasSpec spec = parse_tilt(d, opt.tilt);
  spec.grid = parse_grid(opt.grid);

  NonresponseFit base = fit_pairwise_logistic(d, cfg.odds_spec(d));
  CompleteCaseLaw law;
  const CompleteCaseLaw* lp = nullptr;
  if (cfg.has_law) {
    law = cfg.law.fit(d, U, VectorXd::Zero(U.p));
    lp = &law;
  }
  SensitivityCurve curve = sweep(d, base, lp, spec, opt.methods, U);

  json out = report_envelope("sensitivity", cfg.resolved, opt.seed);
  out["options"] = {{"tilt", opt.tilt},
                    {"grid", opt.grid},
                    {"methods", opt.methods},
                    {"estimand", opt.estimand}};
  out["results"] = to_json(curve);
  return out;
}

inline json run_simulate(const SimConfig& cfg) {
  SimResult res = run_monte_carlo(cfg);
  json resolved = {{"scenario", cfg.scenario},
                   {"n", cfg.n},
                   {"replicates", cfg.replicates},
                   {"methods", cfg.methods},
                   {"bootstrap_sd", cfg.bootstrap_sd},
                   {"boot_reps", cfg.boot_reps},
                   {"boot_subset", cfg.boot_subset}};
  json out = report_envelope("simulate", resolved, cfg.seed);
  out["results"] = to_json(res);
  return out;
}

inline json run_patterns(const PatternedDataset& d) {
  json resolved = {{"schema_vars", d.schema.K()}};
  json out = report_envelope("patterns", resolved, 0);
  out["results"] = {{"n", d.n()}, {"patterns", to_json(tabulate_patterns(d))}};
  return out;
}

}  // namespace mnar
