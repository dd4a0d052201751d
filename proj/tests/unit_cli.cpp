#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mnar/report.hpp"

using namespace mnar;

namespace {

std::string cli_path() {
  const char* p = std::getenv("MNAR_CLI");
  REQUIRE_MESSAGE(p != nullptr, "MNAR_CLI must point at the built binary");
  return p;
}

int run(const std::string& args, const std::string& log = "cli_out.txt") {
  const std::string cmd =
      cli_path() + " " + args + " > " + log + " 2> cli_err.txt";
  const int status = std::system(cmd.c_str());
  return (status >> 8) & 0xff;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_sim_csv(const std::string& path, int n, std::uint64_t seed) {
  auto d = assign_patterns(generate_full_data(n, seed), seed);
  std::ofstream f(path);
  f << "X,Y\n";
  f << std::setprecision(17);
  for (int i = 0; i < d.n(); ++i) {
    if (d.observed(i, 0)) f << d.values(i, 0);
    else f << "NA";
    f << ",";
    if (d.observed(i, 1)) f << d.values(i, 1);
    else f << "NA";
    f << "\n";
  }
}

void write_sim_config(const std::string& path, const std::string& csv,
                      bool with_law) {
  json cfg = {
      {"input", csv},
      {"schema",
       {{{"name", "X"}, {"kind", "continuous"}},
        {{"name", "Y"}, {"kind", "continuous"}}}},
      {"odds",
       {{{"mask", "10"}, {"terms", {"1", "X"}}},
        {{"mask", "01"}, {"terms", {"1", "Y"}}},
        {{"mask", "00"}, {"terms", {"1"}}}}},
      {"mr_law",
       {{{"mask", "10"}, {"terms", {"1", "X"}}},
        {{"mask", "00"}, {"terms", {"1"}}}}}};
  if (with_law)
    cfg["law"] = {{"law", "gaussian_linear"},
                  {"outcome", "Y"},
                  {"predictors", {"1", "X"}}};
  std::ofstream f(path);
  f << cfg.dump(2) << "\n";
}

// synthetic data shaped like the application table: three binary variables,
// all eight missingness patterns present, complete cases most frequent
void write_table2_csv(const std::string& path, int n, std::uint64_t seed) {
  std::ofstream f(path);
  f << "X1,X2,Y\n";
  for (int i = 0; i < n; ++i) {
    const double x1 = rng::uniform(seed, 1, i) < 0.5 ? 0 : 1;
    const double x2 = rng::uniform(seed, 2, i) < 0.4 + 0.2 * x1 ? 1 : 0;
    const double y =
        rng::uniform(seed, 3, i) < expit(-0.5 + 0.8 * x1 + 0.4 * x2) ? 1 : 0;
    // nonresponse: 60% complete, the other seven masks share the rest;
    // mask bits: X1 = bit 2, X2 = bit 1, Y = bit 0, mask 7 = complete
    const double u = rng::uniform(seed, 4, i);
    int mask = 7;
    if (u > 0.60) mask = std::min(6, static_cast<int>((u - 0.60) / 0.40 * 7.0));
    f << ((mask & 4) ? std::to_string((int)x1) : "NA") << ","
      << ((mask & 2) ? std::to_string((int)x2) : "NA") << ","
      << ((mask & 1) ? std::to_string((int)y) : "NA") << "\n";
  }
}

void write_table2_config(const std::string& path, const std::string& csv) {
  json odds = json::array();
  // per-mask designs: main effects of whatever is observed, plus the two-way
  // interaction when two covariates are observed
  const std::vector<std::pair<std::string, std::vector<std::string>>> specs = {
      {"110", {"1", "X1", "X2", "X1:X2"}}, {"101", {"1", "X1", "Y", "X1:Y"}},
      {"011", {"1", "X2", "Y", "X2:Y"}},   {"100", {"1", "X1"}},
      {"010", {"1", "X2"}},                {"001", {"1", "Y"}},
      {"000", {"1"}}};
  for (const auto& [mask, terms] : specs)
    odds.push_back({{"mask", mask}, {"terms", terms}});
  json cfg = {{"input", csv},
              {"schema",
               {{{"name", "X1"}, {"kind", "binary"}},
                {{"name", "X2"}, {"kind", "binary"}},
                {{"name", "Y"}, {"kind", "binary"}}}},
              {"odds", odds},
              {"law",
               {{"law", "discrete_loglinear"},
                {"terms", {"X1", "X2", "Y", "X1:X2", "X1:Y", "X2:Y"}}}}};
  std::ofstream f(path);
  f << cfg.dump(2) << "\n";
}

}  // namespace

TEST_CASE("cli: patterns subcommand tabulates a csv") {
  write_sim_csv("cli_data.csv", 500, 71);
  CHECK(run("patterns cli_data.csv --out cli_patterns.json") == 0);
  const std::string out = slurp("cli_out.txt");
  CHECK(out.find("mask") != std::string::npos);
  CHECK(out.find("11") != std::string::npos);
  json rep = json::parse(slurp("cli_patterns.json"));
  CHECK(rep["results"]["patterns"].size() == 4);
  CHECK(rep["results"]["patterns"][0]["id"] == 1);
}

TEST_CASE("cli: estimate validates before running") {
  write_sim_csv("cli_data.csv", 500, 71);
  write_sim_config("cli_cfg_nolaw.json", "cli_data.csv", false);
  CHECK(run("estimate --config cli_cfg_nolaw.json --method dr") == 1);
  CHECK(slurp("cli_err.txt").find("complete-case law required for dr") !=
        std::string::npos);
  CHECK(run("estimate --config missing.json --method ipw") == 1);
  CHECK(run("nonsense") == 1);
}

TEST_CASE("cli: estimate with every method on simulation-style data") {
  write_sim_csv("cli_data.csv", 900, 73);
  write_sim_config("cli_cfg.json", "cli_data.csv", true);
  for (const std::string m : {"ipw", "pm", "dr", "mr"}) {
    CHECK(run("estimate --config cli_cfg.json --method " + m +
              " --estimand mean:Y --out cli_est.json") == 0);
    json rep = json::parse(slurp("cli_est.json"));
    CHECK(rep["results"]["method"] == m);
    CHECK(std::isfinite(rep["results"]["beta_hat"][0].get<double>()));
  }
}

TEST_CASE("cli: simulate is replayable and thread-invariant") {
  const std::string base =
      "simulate --scenario bth --reps 6 --n 300 --seed 1 --methods ipw,dr";
  CHECK(run(base + " --out cli_sim1.json") == 0);
  CHECK(run(base + " --out cli_sim2.json") == 0);
  CHECK(slurp("cli_sim1.json") == slurp("cli_sim2.json"));
  CHECK(run(base + " --threads 1 --out cli_sim3.json") == 0);
  CHECK(run(base + " --threads 4 --out cli_sim4.json") == 0);
  CHECK(slurp("cli_sim3.json") == slurp("cli_sim4.json"));
  CHECK(slurp("cli_sim1.json") == slurp("cli_sim3.json"));
  CHECK(run("simulate --scenario zzz --reps 2 --n 100") == 1);
}

TEST_CASE("cli: sensitivity sweep") {
  write_sim_csv("cli_data.csv", 900, 73);
  write_sim_config("cli_cfg.json", "cli_data.csv", true);
  json cfg = json::parse(slurp("cli_cfg.json"));
  auto d = ingest_csv("cli_data.csv", RunConfig::from_json(cfg).schema);
  const int r2 = d.id_by_mask("10");
  CHECK(run("sensitivity --config cli_cfg.json --tilt \"r=" +
            std::to_string(r2) +
            ": phi*Ymis\" --grid -0.5:0.5:0.25 --methods ipw,dr "
            "--out cli_sens.json") == 0);
  json rep = json::parse(slurp("cli_sens.json"));
  CHECK(rep["results"]["points"].size() == 5);
  for (const auto& pt : rep["results"]["points"])
    CHECK(pt["reports"].contains("ipw"));
}

TEST_CASE("cli: application-shaped run (binary data, logistic estimand, "
          "log-linear law, interaction odds designs)") {
  write_table2_csv("cli_t2.csv", 2500, 81);
  write_table2_config("cli_t2_cfg.json", "cli_t2.csv");

  CHECK(run("patterns cli_t2.csv") == 0);
  const std::string table = slurp("cli_out.txt");
  int rows = 0;
  for (char c : table) rows += c == '\n';
  CHECK(rows == 9);  // header + 8 patterns

  for (const std::string m : {"ipw", "pm", "dr", "mle"}) {
    CHECK_MESSAGE(run("estimate --config cli_t2_cfg.json --method " + m +
                      " --estimand logistic:Y~X1+X2 --out cli_t2_est.json") ==
                      0,
                  "method " << m << ": " << slurp("cli_err.txt"));
    json rep = json::parse(slurp("cli_t2_est.json"));
    CHECK(rep["results"]["beta_hat"].size() == 3);
    for (const auto& b : rep["results"]["beta_hat"])
      CHECK(std::isfinite(b.get<double>()));
  }
}
