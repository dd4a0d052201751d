// Command-line front end: pattern tabulation, estimation, sensitivity
// analysis, and the Monte Carlo study. Tables go to stdout, diagnostics to
// stderr, JSON reports to --out. Exit codes: 0 ok, 1 user error, 2 numerical
// failure.

#include <chrono>
#include <iostream>

#include "CLI11.hpp"
#include "mnar/report.hpp"

namespace {

using mnar::json;

mnar::PatternedDataset ingest(const mnar::RunConfig& cfg,
                              const std::string& data_override) {
  const std::string path = data_override.empty() ? cfg.input : data_override;
  if (path.empty())
    throw mnar::UserError("no input file: give --data or set \"input\" in the "
                          "config");
  return mnar::ingest_csv(path, cfg.schema, cfg.na_token);
}

// schema-free ingestion for `patterns`: every column continuous
mnar::PatternedDataset ingest_headers_only(const std::string& path,
                                           const std::string& na_token) {
  std::ifstream in(path);
  if (!in) throw mnar::UserError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw mnar::UserError("empty file: " + path);
  mnar::VariableSchema schema;
  for (const auto& name : mnar::detail::split_csv_line(line))
    schema.vars.push_back({name, mnar::VarKind::continuous, {}});
  return mnar::ingest_csv(path, schema, na_token);
}

void write_report(const json& report, const std::string& out_path) {
  if (out_path.empty()) return;
  std::ofstream out(out_path);
  if (!out) throw mnar::UserError("cannot write to " + out_path);
  out << report.dump(2) << "\n";
}

void print_patterns(const json& report) {
  std::cout << "id  mask      count  percent\n";
  for (const auto& r : report["results"]["patterns"]) {
    std::ostringstream os;
    os << std::left << std::setw(4) << r["id"].get<int>() << std::setw(10)
       << r["mask"].get<std::string>() << std::setw(7) << r["count"].get<int>()
       << std::fixed << std::setprecision(2) << r["percent"].get<double>();
    std::cout << os.str() << "\n";
  }
}

void print_estimate(const json& report) {
  const auto& res = report["results"];
  std::cout << "method: " << res["method"].get<std::string>() << "\n";
  std::cout << "coord  estimate      se            ci_lo         ci_hi\n";
  const auto& beta = res["beta_hat"];
  for (size_t k = 0; k < beta.size(); ++k) {
    std::ostringstream os;
    os << std::left << std::setw(7) << k << std::setw(14) << std::setprecision(6)
       << beta[k].get<double>();
    if (res.contains("se"))
      os << std::setw(14) << res["se"][k].get<double>();
    else
      os << std::setw(14) << "-";
    if (res.contains("ci"))
      os << std::setw(14) << res["ci"][k][0].get<double>() << std::setw(14)
         << res["ci"][k][1].get<double>();
    std::cout << os.str() << "\n";
  }
  if (res.contains("bootstrap"))
    std::cout << "bootstrap: B=" << res["bootstrap"]["B"].get<int>()
              << " failures=" << res["bootstrap"]["failures"].get<int>()
              << " sd[0]=" << res["bootstrap"]["sd"][0].get<double>() << "\n";
}

void print_sensitivity(const json& report) {
  std::cout << "phi       method  estimate      ci_lo         ci_hi\n";
  for (const auto& pt : report["results"]["points"]) {
    for (const auto& [m, rep] : pt["reports"].items()) {
      std::ostringstream os;
      os << std::left << std::setw(10) << std::setprecision(4)
         << pt["phi"].get<double>() << std::setw(8) << m << std::setw(14)
         << std::setprecision(6) << rep["beta_hat"][0].get<double>();
      if (rep.contains("ci"))
        os << std::setw(14) << rep["ci"][0][0].get<double>() << std::setw(14)
           << rep["ci"][0][1].get<double>();
      std::cout << os.str() << "\n";
    }
    for (const auto& f : pt["failures"])
      std::cerr << "phi=" << pt["phi"].get<double>() << " failed: "
                << f.get<std::string>() << "\n";
  }
}

void print_simulate(const json& report) {
  const auto& res = report["results"];
  std::cout << "scenario " << res["scenario"].get<std::string>() << ", n="
            << res["n"].get<int>() << ", replicates="
            << res["replicates"].get<int>() << ", truth="
            << std::setprecision(6) << res["truth"].get<double>() << "\n";
  std::cout << "method  bias        mc_sd       est_sd      est/mc   "
               "coverage  rmse\n";
  for (const auto& [m, st] : res["methods"].items()) {
    std::ostringstream os;
    os << std::left << std::setw(8) << m << std::setw(12)
       << std::setprecision(4) << st["bias"].get<double>() << std::setw(12)
       << st["mc_sd"].get<double>() << std::setw(12)
       << st["mean_estimated_sd"].get<double>() << std::setw(9)
       << st["mean_estimated_sd"].get<double>() / st["mc_sd"].get<double>()
       << std::setw(10) << st["coverage"].get<double>() << st["rmse"].get<double>();
    std::cout << os.str() << "\n";
    if (st.contains("mean_bootstrap_sd"))
      std::cout << "        boot_sd=" << st["mean_bootstrap_sd"].get<double>()
                << " (est/boot="
                << st["mean_estimated_sd"].get<double>() /
                       st["mean_bootstrap_sd"].get<double>()
                << ")\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimation and inference for nonmonotone nonignorable "
               "missing data under discrete-choice nonresponse models"};
  app.require_subcommand(1);

  int threads = static_cast<int>(std::thread::hardware_concurrency());
  if (threads < 1) threads = 1;
  app.add_option("--threads", threads, "worker count for parallel sections");

  std::string config_path, data_path, out_path, na_token = "NA";

  // let global options like --threads appear after the subcommand name
  auto* sc_patterns = app.add_subcommand("patterns", "tabulate missingness patterns");
  sc_patterns->fallthrough();
  sc_patterns->add_option("data", data_path, "input CSV")->required();
  sc_patterns->add_option("--config", config_path, "JSON config with the schema");
  sc_patterns->add_option("--na", na_token, "missing-value token");
  sc_patterns->add_option("--out", out_path, "JSON report path");

  mnar::EstimateOptions eopt;
  auto* sc_estimate = app.add_subcommand("estimate", "estimate a full-data parameter");
  sc_estimate->fallthrough();
  sc_estimate->add_option("--config", config_path, "JSON config")->required();
  sc_estimate->add_option("--data", data_path, "input CSV (overrides config)");
  sc_estimate->add_option("--method", eopt.method, "ipw|pm|dr|mr|mle");
  sc_estimate->add_option("--estimand", eopt.estimand, "mean:Y or logistic:Y~X1+X2");
  sc_estimate->add_option("--variance", eopt.variance, "sandwich|bootstrap|both");
  sc_estimate->add_option("--boot-reps", eopt.boot_reps, "bootstrap replicates");
  sc_estimate->add_option("--seed", eopt.seed, "RNG seed");
  sc_estimate->add_option("--out", out_path, "JSON report path");

  mnar::SensitivityOptions sopt;
  std::string methods_csv = "ipw,dr";
  auto* sc_sens = app.add_subcommand("sensitivity", "selection-bias sweep");
  sc_sens->fallthrough();
  sc_sens->add_option("--config", config_path, "JSON config")->required();
  sc_sens->add_option("--data", data_path, "input CSV (overrides config)");
  sc_sens->add_option("--tilt", sopt.tilt, "e.g. \"r=2: phi*Ymis\"")->required();
  sc_sens->add_option("--grid", sopt.grid, "lo:hi:step (must contain 0)");
  sc_sens->add_option("--methods", methods_csv, "comma list of ipw,pm,dr");
  sc_sens->add_option("--estimand", sopt.estimand, "estimand spec");
  sc_sens->add_option("--out", out_path, "JSON report path");

  mnar::SimConfig simcfg;
  std::string sim_methods_csv = "ipw,pm,dr";
  auto* sc_sim = app.add_subcommand("simulate", "Monte Carlo study");
  sc_sim->fallthrough();
  sc_sim->add_option("--scenario", simcfg.scenario, "bth|nrm|ccm|bad");
  sc_sim->add_option("--reps", simcfg.replicates, "replicates");
  sc_sim->add_option("--n", simcfg.n, "sample size per replicate");
  sc_sim->add_option("--seed", simcfg.seed, "RNG seed");
  sc_sim->add_option("--methods", sim_methods_csv, "comma list of ipw,pm,dr,mr");
  sc_sim->add_flag("--bootstrap-sd", simcfg.bootstrap_sd,
                   "nested bootstrap SDs on a replicate subset");
  sc_sim->add_option("--boot-reps", simcfg.boot_reps, "bootstrap replicates");
  sc_sim->add_option("--out", out_path, "JSON report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  auto split_csv = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
  };

  const auto t0 = std::chrono::steady_clock::now();
  try {
    json report;
    if (*sc_patterns) {
      mnar::PatternedDataset d =
          config_path.empty()
              ? ingest_headers_only(data_path, na_token)
              : ingest(mnar::load_config(config_path), data_path);
      report = mnar::run_patterns(d);
      print_patterns(report);
    } else if (*sc_estimate) {
      mnar::RunConfig cfg = mnar::load_config(config_path);
      eopt.threads = threads;
      report = mnar::run_estimate(ingest(cfg, data_path), cfg, eopt);
      print_estimate(report);
    } else if (*sc_sens) {
      mnar::RunConfig cfg = mnar::load_config(config_path);
      sopt.methods = split_csv(methods_csv);
      report = mnar::run_sensitivity(ingest(cfg, data_path), cfg, sopt);
      print_sensitivity(report);
    } else if (*sc_sim) {
      simcfg.methods = split_csv(sim_methods_csv);
      simcfg.threads = threads;
      report = mnar::run_simulate(simcfg);
      print_simulate(report);
    }
    write_report(report, out_path);
    const auto dt = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - t0);
    std::cerr << "done in " << dt.count() << " ms\n";
    return 0;
  } catch (const mnar::UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mnar::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}
