#pragma once

#include "mnar/inference.hpp"

namespace mnar {

// Monte Carlo reproduction of the paper's simulation design at desk scale.
//
// Full data (X, Y): 3-component bivariate normal mixture with weights
// (1/2, e/(2+2e), 1/(2+2e)) and means (0,0), (1,1), (1,2), so the target
// E(Y) = (2+e)/(2+2e). Nonresponse: the logit DCM with Odds_2 = exp(X),
// Odds_3 = exp(Y), Odds_4 = exp(-1); pattern 2 observes X only, pattern 3
// observes Y only, pattern 4 observes nothing. The common covariance is
// chosen so the estimator error signatures match the published tables (the
// published display is internally inconsistent; see the repository README).

namespace simdgp {

inline const double e_const = std::exp(1.0);
inline const double truth = (2 + e_const) / (2 + 2 * e_const);

inline Eigen::Vector3d weights() {
  return {0.5, e_const / (2 + 2 * e_const), 1.0 / (2 + 2 * e_const)};
}
inline Eigen::Matrix<double, 3, 2> means() {
  Eigen::Matrix<double, 3, 2> m;
  m << 0, 0, 1, 1, 1, 2;
  return m;
}
inline Eigen::Matrix2d covariance() {
  Eigen::Matrix2d s;
  s << 1.4, 0.9, 0.9, 0.7;
  return s;
}

}  // namespace simdgp

// (X, Y) draws for one replicate; row i consumes counters 8i..8i+7 of stream
// `replicate` under `seed`
inline MatrixXd generate_full_data(int n, std::uint64_t seed,
                                   std::uint64_t replicate = 0) {
  const auto w = simdgp::weights();
  const auto mu = simdgp::means();
  const Eigen::Matrix2d L = simdgp::covariance().llt().matrixL();
  MatrixXd xy(n, 2);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t c = 8ULL * static_cast<std::uint64_t>(i);
    const double u = rng::uniform(seed, replicate, c);
    const int comp = u < w(0) ? 0 : (u < w(0) + w(1) ? 1 : 2);
    const double z1 = rng::normal(seed, replicate, c + 2);
    const double z2 = rng::normal(seed, replicate, c + 4);
    xy(i, 0) = mu(comp, 0) + L(0, 0) * z1;
    xy(i, 1) = mu(comp, 1) + L(1, 0) * z1 + L(1, 1) * z2;
  }
  return xy;
}

// nonresponse pattern probabilities at one point, in order (1, 2, 3, 4)
inline Eigen::Vector4d mechanism_probs(double x, double y) {
  const double o2 = std::exp(x), o3 = std::exp(y), o4 = std::exp(-1.0);
  const double denom = 1 + o2 + o3 + o4;
  return {1 / denom, o2 / denom, o3 / denom, o4 / denom};
}

// multinomial pattern draw + mask application; returns the dataset
inline PatternedDataset assign_patterns(const MatrixXd& xy, std::uint64_t seed,
                                        std::uint64_t replicate = 0) {
  const int n = static_cast<int>(xy.rows());
  MatrixXd vals(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector4d p = mechanism_probs(xy(i, 0), xy(i, 1));
    const double u =
        rng::uniform(seed, replicate, 8ULL * static_cast<std::uint64_t>(i) + 6);
    int r = 4;
    double cum = 0;
    for (int k = 0; k < 4; ++k) {
      cum += p(k);
      if (u <= cum) { r = k + 1; break; }
    }
    vals(i, 0) = (r == 1 || r == 2) ? xy(i, 0) : na();
    vals(i, 1) = (r == 1 || r == 3) ? xy(i, 1) : na();
  }
  VariableSchema schema;
  schema.vars = {{"X", VarKind::continuous, {}}, {"Y", VarKind::continuous, {}}};
  return make_dataset(schema, std::move(vals));
}

struct SimConfig {
  int n = 2000;
  int replicates = 200;
  std::string scenario = "bth";  // bth | nrm | ccm | bad
  std::uint64_t seed = 7;
  std::vector<std::string> methods = {"ipw", "pm", "dr"};
  bool bootstrap_sd = false;  // nested bootstrap on a replicate subset
  int boot_reps = 200;
  int boot_subset = 50;
  int threads = 1;

  void validate() const {
    if (scenario != "bth" && scenario != "nrm" && scenario != "ccm" &&
        scenario != "bad")
      throw UserError("unknown scenario: " + scenario);
    if (replicates < 1) throw UserError("replicates must be >= 1");
    if (n < 10) throw UserError("n too small");
  }
  bool odds_correct() const { return scenario == "bth" || scenario == "nrm"; }
  bool law_correct() const { return scenario == "bth" || scenario == "ccm"; }
};

// scenario wiring: misspecification replaces X, Y by their squares
inline OddsModelSpec scenario_odds_spec(bool correct) {
  OddsModelSpec s;
  s.terms_by_mask["10"] = {"1", correct ? "X" : "X^2"};
  s.terms_by_mask["01"] = {"1", correct ? "Y" : "Y^2"};
  s.terms_by_mask["00"] = {"1"};
  return s;
}
inline LawSpec scenario_law_spec(bool correct) {
  LawSpec l;
  l.kind = LawKind::gaussian_linear;
  l.outcome = "Y";
  l.predictors = {"1", correct ? "X" : "X^2"};
  return l;
}
inline std::map<std::string, std::vector<std::string>>
scenario_mr_law_terms(bool correct) {
  return {{"10", {"1", correct ? "X" : "X^2"}}, {"00", {"1"}}};
}

struct MethodStats {
  double bias = 0, se_bias = 0, mc_sd = 0, mean_est_sd = 0,
         mean_boot_sd = na(), mean_est_sd_boot_subset = na(), rmse = 0,
         coverage = 0;
  int boot_replicates_used = 0;
};

struct SimResult {
  SimConfig cfg;
  double truth = simdgp::truth;
  int failures = 0;
  std::map<std::string, MethodStats> by_method;
  // raw per-replicate values, methods in cfg order
  MatrixXd estimates;  // reps x methods
  MatrixXd est_sds;    // reps x methods
};

inline SimResult run_monte_carlo(const SimConfig& cfg) {
  cfg.validate();
  const int R = cfg.replicates;
  const int M = static_cast<int>(cfg.methods.size());
  if (M == 0) throw UserError("empty method list");
  SimResult res;
  res.cfg = cfg;
  res.estimates = MatrixXd::Constant(R, M, na());
  res.est_sds = MatrixXd::Constant(R, M, na());
  MatrixXd boot_sds = MatrixXd::Constant(R, M, na());
  std::vector<std::string> rep_errors(R);

  const OddsModelSpec odds_spec = scenario_odds_spec(cfg.odds_correct());
  const LawSpec law_spec = scenario_law_spec(cfg.law_correct());
  const auto mr_terms = scenario_mr_law_terms(cfg.law_correct());

  auto run_rep = [&](int rep) {
    try {
      PatternedDataset d =
          assign_patterns(generate_full_data(cfg.n, cfg.seed, rep), cfg.seed,
                          rep);
      VariableSchema schema = d.schema;
      const EstimandSpec U = coordinate_mean(schema, "Y");
      NonresponseFit fit = fit_pairwise_logistic(d, odds_spec);
      CompleteCaseLaw law = law_spec.fit(d, U, VectorXd::Zero(1));

      for (int m = 0; m < M; ++m) {
        const std::string& method = cfg.methods[m];
        EstimateReport rep_out;
        const NonresponseFit* fp = nullptr;
        const CompleteCaseLaw* lp = nullptr;
        CompleteCaseLaw mr_law;
        if (method == "ipw") {
          rep_out = solve_ipw(d, fit, U);
          fp = &fit;
        } else if (method == "pm") {
          rep_out = solve_pm(d, law, U);
          lp = &law;
        } else if (method == "dr") {
          rep_out = solve_dr(d, fit, law, U);
          fp = &fit;
          lp = &law;
        } else if (method == "mr") {
          auto mr = solve_mr(d, fit, mr_terms, U);
          rep_out = mr.report;
          mr_law = std::move(mr.law);
          fp = &fit;
          lp = &mr_law;
        } else {
          throw UserError("unknown method in simulation: " + method);
        }
        res.estimates(rep, m) = rep_out.beta_hat(0);
        MatrixXd v = sandwich(method, d, fp, lp, U, rep_out.beta_hat);
        res.est_sds(rep, m) = std::sqrt(v(0, 0));

        if (cfg.bootstrap_sd && rep < cfg.boot_subset) {
          auto pipeline = [&](const PatternedDataset& rd) {
            NonresponseFit rfit = fit_pairwise_logistic(rd, odds_spec);
            if (method == "ipw") return solve_ipw(rd, rfit, U).beta_hat;
            CompleteCaseLaw rlaw = law_spec.fit(rd, U, VectorXd::Zero(1));
            if (method == "pm") return solve_pm(rd, rlaw, U).beta_hat;
            if (method == "dr") return solve_dr(rd, rfit, rlaw, U).beta_hat;
            return solve_mr(rd, rfit, mr_terms, U).report.beta_hat;
          };
          auto boot = bootstrap(d, pipeline, cfg.boot_reps,
                                rng::mix(cfg.seed, 0xB007, rep), 1);
          boot_sds(rep, m) = boot.sd(0);
        }
      }
    } catch (const std::exception& e) {
      rep_errors[rep] = e.what();
    }
  };
  parallel_for(R, cfg.threads, run_rep);

  std::string first_error;
  for (int rep = 0; rep < R; ++rep)
    if (!rep_errors[rep].empty()) {
      ++res.failures;
      if (first_error.empty()) first_error = rep_errors[rep];
    }
  if (res.failures * 20 > R)
    throw NumericError("more than 5% of replicates failed; first error: " +
                       first_error);

  for (int m = 0; m < M; ++m) {
    MethodStats st;
    double sum = 0, sumsq = 0, cover = 0, sdsum = 0;
    int used = 0;
    for (int rep = 0; rep < R; ++rep) {
      const double est = res.estimates(rep, m);
      if (is_na(est)) continue;
      ++used;
      sum += est;
      sumsq += est * est;
      sdsum += res.est_sds(rep, m);
      cover += std::abs(est - res.truth) <= z975 * res.est_sds(rep, m);
    }
    const double mean = sum / used;
    st.bias = mean - res.truth;
    st.mc_sd = std::sqrt(std::max(0.0, sumsq / used - mean * mean));
    st.se_bias = st.mc_sd / std::sqrt(static_cast<double>(used));
    st.mean_est_sd = sdsum / used;
    st.coverage = cover / used;
    st.rmse = std::sqrt(st.bias * st.bias + st.mc_sd * st.mc_sd);
    if (cfg.bootstrap_sd) {
      // the per-replicate SD varies a lot, so the sandwich/bootstrap
      // comparison must average both estimators over the same replicates
      double bsum = 0, esum = 0;
      int bused = 0;
      for (int rep = 0; rep < R; ++rep)
        if (!is_na(boot_sds(rep, m))) {
          bsum += boot_sds(rep, m);
          esum += res.est_sds(rep, m);
          ++bused;
        }
      if (bused > 0) {
        st.mean_boot_sd = bsum / bused;
        st.mean_est_sd_boot_subset = esum / bused;
      }
      st.boot_replicates_used = bused;
    }
    res.by_method[cfg.methods[m]] = st;
  }
  return res;
}

}  // namespace mnar
