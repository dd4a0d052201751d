#include "doctest.h"
#include "mnar/law.hpp"
#include "mnar/sim_study.hpp"

using namespace mnar;

namespace {

VariableSchema binary_schema(int K) {
  VariableSchema s;
  for (int k = 0; k < K; ++k)
    s.vars.push_back({"B" + std::to_string(k + 1), VarKind::binary, {}});
  return s;
}

}  // namespace

TEST_CASE("gaussian linear law recovers the complete-case regression") {
  auto d = assign_patterns(generate_full_data(20000, 9), 9);
  auto U = coordinate_mean(d.schema, "Y");
  auto law = fit_gaussian_linear(d, "Y", {"1", "X"});
  const auto& g = std::get<GaussianLinearLaw>(law.impl);
  CHECK(g.sigma2 > 0);
  // manual OLS on complete cases
  const auto cc = d.complete_rows();
  MatrixXd X(cc.size(), 2);
  VectorXd y(cc.size());
  for (size_t i = 0; i < cc.size(); ++i) {
    X(i, 0) = 1;
    X(i, 1) = d.values(cc[i], 0);
    y(i) = d.values(cc[i], 1);
  }
  VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  CHECK((g.gamma - ols).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(g.mu_out == doctest::Approx(y.mean()).epsilon(1e-12));
  // influence functions average to zero
  CHECK(VectorXd(law.if_eta.colwise().mean()).lpNorm<Eigen::Infinity>() < 1e-8);

  SUBCASE("conditional expectation substitutes the regression prediction") {
    Eigen::RowVector2d row(0.8, na());
    VectorXd beta = VectorXd::Zero(1);
    VectorXd e = cond_expectation(law, d.pattern(d.id_by_mask("10")), row, U, beta);
    CHECK(e(0) == doctest::Approx(g.gamma(0) + 0.8 * g.gamma(1)).epsilon(1e-12));
  }
  SUBCASE("nothing observed falls back to the complete-case outcome mean") {
    Eigen::RowVector2d row(na(), na());
    VectorXd e = cond_expectation(law, d.pattern(d.id_by_mask("00")), row, U,
                                  VectorXd::Zero(1));
    CHECK(e(0) == doctest::Approx(g.mu_out).epsilon(1e-12));
  }
  SUBCASE("exactness: determined patterns return U itself, bit for bit") {
    Eigen::RowVector2d row(na(), 1.75);  // Y observed, X missing
    VectorXd beta(1);
    beta << 0.3;
    VectorXd e = cond_expectation(law, d.pattern(d.id_by_mask("01")), row, U, beta);
    CHECK(e(0) == 1.75 - 0.3);
  }
  SUBCASE("nonlinear dependence on the missing outcome is rejected") {
    EstimandSpec sq = coordinate_mean(d.schema, "Y");
    sq.U = [](const Eigen::Ref<const Eigen::RowVectorXd>& row,
              const VectorXd& beta) {
      VectorXd u(1);
      u(0) = row(1) * row(1) - beta(0);
      return u;
    };
    Eigen::RowVector2d row(0.8, na());
    CHECK_THROWS_WITH_AS(
        cond_expectation(law, d.pattern(d.id_by_mask("10")), row, sq,
                         VectorXd::Zero(1)),
        doctest::Contains("Monte Carlo"), UserError);
  }
}

TEST_CASE("gaussian law rejects an exact-fit (zero variance) regression") {
  MatrixXd vals(6, 2);
  for (int i = 0; i < 6; ++i) {
    vals(i, 0) = i;
    vals(i, 1) = i < 4 ? 2.0 * i + 1 : na();
  }
  VariableSchema s;
  s.vars = {{"X", VarKind::continuous, {}}, {"Y", VarKind::continuous, {}}};
  auto d = make_dataset(s, vals);
  CHECK_THROWS_AS(fit_gaussian_linear(d, "Y", {"1", "X"}), NumericError);
}

TEST_CASE("discrete log-linear law") {
  // two binary variables; complete cases occupy all four cells unevenly
  VariableSchema s = binary_schema(2);
  std::vector<std::array<double, 2>> cells = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  std::vector<int> counts = {10, 20, 30, 40};
  int n = 100 + 8;
  MatrixXd vals(n, 2);
  int row = 0;
  for (int c = 0; c < 4; ++c)
    for (int k = 0; k < counts[c]; ++k, ++row) {
      vals(row, 0) = cells[c][0];
      vals(row, 1) = cells[c][1];
    }
  for (; row < n; ++row) {  // a few incomplete rows
    vals(row, 0) = row % 2;
    vals(row, 1) = na();
  }
  auto d = make_dataset(s, vals);

  SUBCASE("saturated model reproduces empirical complete-case frequencies") {
    auto law = fit_discrete_loglinear(d, {"B1", "B2", "B1:B2"});
    const auto& l = std::get<DiscreteLoglinearLaw>(law.impl);
    for (int c = 0; c < 4; ++c) {
      Eigen::RowVector2d cell(cells[c][0], cells[c][1]);
      long idx = -1;
      for (Eigen::Index k = 0; k < l.cells.rows(); ++k)
        if ((l.cells.row(k).array() == cell.array()).all()) idx = k;
      REQUIRE(idx >= 0);
      CHECK(std::exp(l.logp(idx)) ==
            doctest::Approx(counts[c] / 100.0).epsilon(1e-8));
    }
    CHECK(VectorXd(law.if_eta.colwise().mean()).lpNorm<Eigen::Infinity>() < 1e-8);

    SUBCASE("conditional expectation matches the empirical conditional") {
      auto U = coordinate_mean(s, "B2");
      Eigen::RowVector2d obs(1.0, na());
      VectorXd e = cond_expectation(law, d.pattern(d.id_by_mask("10")), obs, U,
                                    VectorXd::Zero(1));
      // Pr(B2=1 | B1=1, R=1) = 40 / 70
      CHECK(e(0) == doctest::Approx(40.0 / 70.0).epsilon(1e-8));
    }
    SUBCASE("tower property on the saturated law") {
      // E[ E{U | B1} ] under the fitted cc law equals E[U] under that law
      auto U = coordinate_mean(s, "B2");
      double outer = 0;
      for (int b1 = 0; b1 < 2; ++b1) {
        Eigen::RowVector2d obs(b1, na());
        const double pb1 = (b1 == 0 ? 30.0 : 70.0) / 100.0;
        outer += pb1 * cond_expectation(law, d.pattern(d.id_by_mask("10")),
                                        obs, U, VectorXd::Zero(1))(0);
      }
      CHECK(outer == doctest::Approx(60.0 / 100.0).epsilon(1e-10));
    }
  }
  SUBCASE("eta = 0 gives the uniform law") {
    auto law = fit_discrete_loglinear(d, {"B1"});
    auto uniform = law.with_eta(VectorXd::Zero(1));
    const auto& l = std::get<DiscreteLoglinearLaw>(uniform.impl);
    for (Eigen::Index c = 0; c < l.cells.rows(); ++c)
      CHECK(std::exp(l.logp(c)) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("enumeration cap guards the discrete support") {
  CHECK_THROWS_AS(detail::cell_grid(binary_schema(21)), UserError);
  CHECK_NOTHROW(detail::cell_grid(binary_schema(10)));
  VariableSchema mixed = binary_schema(1);
  mixed.vars.push_back({"X", VarKind::continuous, {}});
  CHECK_THROWS_AS(detail::cell_grid(mixed), UserError);
}

TEST_CASE("per-pattern working regressions") {
  auto d = assign_patterns(generate_full_data(5000, 13), 13);
  auto U = coordinate_mean(d.schema, "Y");
  VectorXd pilot(1);
  pilot << 0.6;
  std::map<std::string, std::vector<std::string>> terms = {
      {"10", {"1", "X"}}, {"00", {"1"}}};
  auto law = fit_pattern_specific(d, terms, U, pilot);
  const auto& pp = std::get<PerPatternRegLaw>(law.impl);
  CHECK(pp.regs.size() == 2);  // mask 01 determines U and is skipped

  // prediction = OLS of U on (1, X) over complete cases, then shifted by
  // J (beta - pilot) with J = -1 for the mean estimand
  const auto cc = d.complete_rows();
  MatrixXd X(cc.size(), 2);
  VectorXd u(cc.size());
  for (size_t i = 0; i < cc.size(); ++i) {
    X(i, 0) = 1;
    X(i, 1) = d.values(cc[i], 0);
    u(i) = d.values(cc[i], 1) - pilot(0);
  }
  VectorXd ols = (X.transpose() * X).ldlt().solve(X.transpose() * u);
  Eigen::RowVector2d row(0.4, na());
  VectorXd at_pilot =
      cond_expectation(law, d.pattern(d.id_by_mask("10")), row, U, pilot);
  CHECK(at_pilot(0) == doctest::Approx(ols(0) + 0.4 * ols(1)).epsilon(1e-10));
  VectorXd beta(1);
  beta << 0.9;
  VectorXd shifted =
      cond_expectation(law, d.pattern(d.id_by_mask("10")), row, U, beta);
  CHECK(shifted(0) == doctest::Approx(at_pilot(0) - (0.9 - 0.6)).epsilon(1e-10));

  SUBCASE("missing design for a needed pattern errors") {
    std::map<std::string, std::vector<std::string>> sparse = {{"10", {"1"}}};
    CHECK_THROWS_AS(fit_pattern_specific(d, sparse, U, pilot), UserError);
  }
  SUBCASE("design using a pattern-unobserved variable errors") {
    std::map<std::string, std::vector<std::string>> bad = {
        {"10", {"1", "Y"}}, {"00", {"1"}}};
    CHECK_THROWS_AS(fit_pattern_specific(d, bad, U, pilot), UserError);
  }
}

TEST_CASE("design term parsing") {
  VariableSchema s;
  s.vars = {{"X", VarKind::continuous, {}},
            {"C", VarKind::categorical, {"a", "b", "c"}}};
  auto des = make_design(s, {"1", "X", "X^2", "X:C"});
  // 1 + X + X^2 + X:(C=b, C=c)
  CHECK(des.dim() == 5);
  Eigen::RowVector2d row(2.0, 2.0);  // C at level "c"
  VectorXd q = des.eval_row(row);
  CHECK(q(0) == 1.0);
  CHECK(q(1) == 2.0);
  CHECK(q(2) == 4.0);
  CHECK(q(3) == 0.0);  // X * 1(C=b)
  CHECK(q(4) == 2.0);  // X * 1(C=c)
  CHECK_THROWS_AS(make_design(s, {"C^2"}), UserError);
  // intercept is forced even when omitted
  auto no1 = make_design(s, {"X"});
  CHECK(no1.dim() == 2);
  CHECK(no1.columns.front().factors.empty());
}
