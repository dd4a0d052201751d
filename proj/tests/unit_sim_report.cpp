#include "doctest.h"
#include "mnar/report.hpp"

using namespace mnar;

TEST_CASE("data generation is a pure function of (seed, replicate)") {
  auto a = generate_full_data(100, 7, 3);
  auto b = generate_full_data(100, 7, 3);
  CHECK((a.array() == b.array()).all());
  auto c = generate_full_data(100, 7, 4);
  CHECK_FALSE((a.array() == c.array()).all());

  auto d1 = assign_patterns(a, 7, 3);
  auto d2 = assign_patterns(a, 7, 3);
  CHECK(d1.pattern_id == d2.pattern_id);
}

TEST_CASE("generated moments match the mixture design") {
  auto xy = generate_full_data(200000, 12);
  CHECK(xy.col(1).mean() == doctest::Approx(simdgp::truth).epsilon(0.02));
  const Eigen::Vector4d p = mechanism_probs(0.0, 0.0);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p(0) == doctest::Approx(1.0 / (3 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("monte carlo harness: determinism and thread invariance") {
  SimConfig cfg;
  cfg.n = 400;
  cfg.replicates = 12;
  cfg.seed = 5;
  cfg.methods = {"ipw", "dr"};
  cfg.threads = 1;
  auto r1 = run_monte_carlo(cfg);
  cfg.threads = 4;
  auto r2 = run_monte_carlo(cfg);
  CHECK((r1.estimates.array() == r2.estimates.array()).all());
  CHECK((r1.est_sds.array() == r2.est_sds.array()).all());
  CHECK(r1.failures == 0);
  for (const auto& [m, st] : r1.by_method) {
    CHECK(std::isfinite(st.bias));
    CHECK(st.mc_sd > 0);
    CHECK(st.rmse >= std::abs(st.bias));
    CHECK(st.coverage >= 0);
    CHECK(st.coverage <= 1);
  }
  CHECK_THROWS_AS(([&] {
                    SimConfig bad = cfg;
                    bad.scenario = "zzz";
                    run_monte_carlo(bad);
                  })(),
                  UserError);
}

TEST_CASE("report JSON: envelope, hashing, determinism") {
  SimConfig cfg;
  cfg.n = 300;
  cfg.replicates = 6;
  cfg.seed = 9;
  cfg.methods = {"ipw"};
  cfg.threads = 2;
  json a = run_simulate(cfg);
  cfg.threads = 1;
  json b = run_simulate(cfg);
  CHECK(a.dump() == b.dump());  // bit-identical regardless of thread count
  CHECK(a["version"] == version_string);
  CHECK(a["config_hash"] == config_hash(a["config"]));
  CHECK(a["seed"] == 9);
  CHECK(a["results"]["methods"].contains("ipw"));

  json other = a["config"];
  other["n"] = 301;
  CHECK(config_hash(other) != config_hash(a["config"]));
}

TEST_CASE("estimand parsing") {
  VariableSchema s;
  s.vars = {{"X1", VarKind::continuous, {}},
            {"X2", VarKind::continuous, {}},
            {"Y", VarKind::binary, {}}};
  auto mean = parse_estimand(s, "mean:X1");
  CHECK(mean.p == 1);
  auto logi = parse_estimand(s, "logistic:Y~X1+X2");
  CHECK(logi.p == 3);
  CHECK(logi.description == "logistic:Y");
  CHECK_THROWS_AS(parse_estimand(s, "median:Y"), UserError);
  CHECK_THROWS_AS(parse_estimand(s, "logistic:Y"), UserError);
  CHECK_THROWS_AS(parse_estimand(s, "mean:Q"), UserError);
}

TEST_CASE("grid parsing") {
  auto g = parse_grid("-1:1:0.25");
  CHECK(g.size() == 9);
  CHECK(g.front() == -1.0);
  CHECK(g.back() == 1.0);
  bool has_zero = false;
  for (double v : g) has_zero = has_zero || v == 0.0;
  CHECK(has_zero);
  auto lst = parse_grid("-0.3,0,0.3");
  CHECK(lst.size() == 3);
  CHECK(parse_grid("0").size() == 1);
  CHECK_THROWS_AS(parse_grid("1:0:0.5"), UserError);
  CHECK_THROWS_AS(parse_grid("0:1:0.5:2"), UserError);
}

TEST_CASE("tilt parsing resolves the mis suffix against the schema") {
  auto d = assign_patterns(generate_full_data(500, 15), 15);
  auto spec = parse_tilt(d, "r=" + std::to_string(d.id_by_mask("10")) +
                                ": phi*Ymis");
  REQUIRE(spec.tilt_terms_by_mask.count("10") == 1);
  CHECK(spec.tilt_terms_by_mask.at("10") == std::vector<std::string>{"Y"});

  auto multi = parse_tilt(
      d, "r=" + std::to_string(d.id_by_mask("10")) + ": phi*Ymis; r=" +
             std::to_string(d.id_by_mask("00")) + ": phi*X:Ymis");
  CHECK(multi.tilt_terms_by_mask.at("00") == std::vector<std::string>{"X:Y"});

  CHECK_THROWS_AS(parse_tilt(d, "pattern 2 tilt Y"), UserError);
  CHECK_THROWS_AS(parse_tilt(d, "r=2: Y"), UserError);
  CHECK_THROWS_AS(parse_tilt(d, ""), UserError);
}

TEST_CASE("config loading and validation") {
  json cfg_json = {
      {"input", "data.csv"},
      {"schema",
       {{{"name", "X"}, {"kind", "continuous"}},
        {{"name", "Y"}, {"kind", "continuous"}}}},
      {"odds",
       {{{"mask", "10"}, {"terms", {"1", "X"}}},
        {{"mask", "01"}, {"terms", {"1", "Y"}}},
        {{"mask", "00"}, {"terms", {"1"}}}}},
      {"law",
       {{"law", "gaussian_linear"}, {"outcome", "Y"}, {"predictors", {"1", "X"}}}}};
  auto cfg = RunConfig::from_json(cfg_json);
  CHECK(cfg.schema.K() == 2);
  CHECK(cfg.has_law);

  auto d = assign_patterns(generate_full_data(500, 15), 15);
  CHECK(validate_config(d, cfg, {"ipw", "pm", "dr"}).empty());

  SUBCASE("dr without a law names the violation") {
    json no_law = cfg_json;
    no_law.erase("law");
    auto c2 = RunConfig::from_json(no_law);
    auto v = validate_config(d, c2, {"dr"});
    REQUIRE(!v.empty());
    CHECK(v[0].find("complete-case law required for dr") != std::string::npos);
  }
  SUBCASE("odds term on an unobserved variable names the pattern") {
    json bad = cfg_json;
    bad["odds"][0]["terms"] = {"1", "Y"};
    auto c2 = RunConfig::from_json(bad);
    auto v = validate_config(d, c2, {"ipw"});
    REQUIRE(!v.empty());
    CHECK(v[0].find("pattern") != std::string::npos);
    CHECK(v[0].find("unobserved") != std::string::npos);
  }
  SUBCASE("empty method list is a violation") {
    CHECK(!validate_config(d, cfg, {}).empty());
  }
  SUBCASE("pattern-id entries resolve through the dataset") {
    json byid = cfg_json;
    byid["odds"] = json::array();
    byid["odds"].push_back({{"pattern", d.id_by_mask("10")}, {"terms", {"1", "X"}}});
    byid["odds"].push_back({{"pattern", d.id_by_mask("01")}, {"terms", {"1", "Y"}}});
    byid["odds"].push_back({{"pattern", d.id_by_mask("00")}, {"terms", {"1"}}});
    auto c2 = RunConfig::from_json(byid);
    CHECK(validate_config(d, c2, {"ipw"}).empty());
  }
}

TEST_CASE("run_estimate end to end with sandwich and bootstrap variances") {
  auto d = assign_patterns(generate_full_data(800, 25), 25);
  json cfg_json = {
      {"schema",
       {{{"name", "X"}, {"kind", "continuous"}},
        {{"name", "Y"}, {"kind", "continuous"}}}},
      {"odds",
       {{{"mask", "10"}, {"terms", {"1", "X"}}},
        {{"mask", "01"}, {"terms", {"1", "Y"}}},
        {{"mask", "00"}, {"terms", {"1"}}}}},
      {"law",
       {{"law", "gaussian_linear"}, {"outcome", "Y"}, {"predictors", {"1", "X"}}}},
      {"mr_law",
       {{{"mask", "10"}, {"terms", {"1", "X"}}},
        {{"mask", "00"}, {"terms", {"1"}}}}}};
  auto cfg = RunConfig::from_json(cfg_json);

  EstimateOptions opt;
  opt.method = "dr";
  opt.variance = "both";
  opt.boot_reps = 60;
  opt.seed = 3;
  opt.threads = 2;
  json rep = run_estimate(d, cfg, opt);
  CHECK(rep["results"]["method"] == "dr");
  CHECK(rep["results"].contains("se"));
  CHECK(rep["results"]["bootstrap"]["B"] == 60);
  const double est = rep["results"]["beta_hat"][0].get<double>();
  CHECK(std::isfinite(est));

  // determinism across thread counts
  opt.threads = 1;
  json rep2 = run_estimate(d, cfg, opt);
  CHECK(rep.dump() == rep2.dump());

  SUBCASE("mr runs through the same entry point") {
    EstimateOptions mr;
    mr.method = "mr";
    json r = run_estimate(d, cfg, mr);
    CHECK(r["results"]["method"] == "mr");
  }
  SUBCASE("bad variance mode") {
    EstimateOptions bad;
    bad.variance = "jackknife";
    CHECK_THROWS_AS(run_estimate(d, cfg, bad), UserError);
  }
}
