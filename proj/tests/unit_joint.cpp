#include "doctest.h"
#include "mnar/joint_likelihood.hpp"
#include "mnar/rng.hpp"

using namespace mnar;

namespace {

VariableSchema bin2() {
  VariableSchema s;
  s.vars = {{"B1", VarKind::binary, {}}, {"B2", VarKind::binary, {}}};
  return s;
}

PatternedDataset shape3() {
  MatrixXd vals(4, 2);
  vals << 0, 0, 1, 1, 0, na(), na(), 1;
  return make_dataset(bin2(), vals);
}

JointLawModel known_model(const PatternedDataset& shape) {
  JointLawModel m;
  m.schema = shape.schema;
  for (int r = 1; r <= shape.J(); ++r) m.patterns.push_back(shape.pattern(r));
  OddsModelSpec spec;
  spec.terms_by_mask["10"] = {"1", "B1"};
  spec.terms_by_mask["01"] = {"1", "B2"};
  m.odds_designs = spec.resolve(shape);
  m.alpha[shape.id_by_mask("10")] = (VectorXd(2) << -0.5, 0.7).finished();
  m.alpha[shape.id_by_mask("01")] = (VectorXd(2) << -1.0, 0.4).finished();
  m.cc_terms = detail::design_no_intercept(m.schema, {"B1", "B2", "B1:B2"});
  m.eta = (VectorXd(3) << 0.4, -0.3, 0.5).finished();
  m.refresh();
  return m;
}

// exact sampler from the joint law by inverse CDF over (r, cell)
PatternedDataset sample_from(const JointLawModel& m, int n, std::uint64_t seed) {
  std::vector<std::pair<int, long>> atoms;
  std::vector<double> cum;
  double acc = 0;
  for (int r = 1; r <= m.J(); ++r)
    for (long c = 0; c < m.cells.rows(); ++c) {
      acc += m.joint_density(r, m.cells.row(c));
      atoms.push_back({r, c});
      cum.push_back(acc);
    }
  MatrixXd vals(n, m.schema.K());
  for (int i = 0; i < n; ++i) {
    const double u = rng::uniform(seed, 0, i);
    size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (k >= atoms.size()) k = atoms.size() - 1;
    const auto [r, c] = atoms[k];
    const auto& mask = m.patterns[r - 1].observed_mask;
    for (int v = 0; v < m.schema.K(); ++v)
      vals(i, v) = mask[v] ? m.cells(c, v) : na();
  }
  return make_dataset(m.schema, vals);
}

double observed_loglik(const JointLawModel& m, const PatternedDataset& d) {
  double ll = 0;
  for (int i = 0; i < d.n(); ++i)
    ll += std::log(m.observed_mass(d.pattern_id[i], d.values.row(i)));
  return ll;
}

}  // namespace

TEST_CASE("constant odds, uniform law: closed-form joint densities") {
  auto shape = shape3();
  JointLawModel m;
  m.schema = shape.schema;
  for (int r = 1; r <= shape.J(); ++r) m.patterns.push_back(shape.pattern(r));
  OddsModelSpec spec;
  spec.terms_by_mask["10"] = {"1"};
  spec.terms_by_mask["01"] = {"1"};
  m.odds_designs = spec.resolve(shape);
  m.alpha[shape.id_by_mask("10")] = (VectorXd(1) << std::log(0.5)).finished();
  m.alpha[shape.id_by_mask("01")] = (VectorXd(1) << std::log(0.25)).finished();
  m.cc_terms = detail::design_no_intercept(m.schema, {"B1"});
  m.eta = VectorXd::Zero(1);  // uniform over the 4 cells
  m.refresh();

  CHECK(m.normalizer == doctest::Approx(1.75).epsilon(1e-13));
  Eigen::RowVector2d cell(1.0, 0.0);
  CHECK(m.joint_density(1, cell) == doctest::Approx(0.25 / 1.75).epsilon(1e-13));
  // full-data density is uniform by symmetry
  for (long c = 0; c < m.cells.rows(); ++c)
    CHECK(m.full_data_density(m.cells.row(c)) ==
          doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("joint law identities on a non-trivial model") {
  auto shape = shape3();
  auto m = known_model(shape);
  const int r2 = shape.id_by_mask("10"), r3 = shape.id_by_mask("01");

  SUBCASE("densities sum to one") {
    double total = 0;
    for (int r = 1; r <= m.J(); ++r)
      for (long c = 0; c < m.cells.rows(); ++c)
        total += m.joint_density(r, m.cells.row(c));
    CHECK(std::abs(total - 1.0) < 1e-12);
    double full = 0;
    for (long c = 0; c < m.cells.rows(); ++c)
      full += m.full_data_density(m.cells.row(c));
    CHECK(std::abs(full - 1.0) < 1e-12);
  }

  SUBCASE("CCMV conditional identity cell-wise") {
    // f(B2 | B1, R=r2) == f(B2 | B1, R=1) for both B1 values
    for (int b1 = 0; b1 < 2; ++b1) {
      double num_r = 0, den_r = 0, num_1 = 0, den_1 = 0;
      for (long c = 0; c < m.cells.rows(); ++c) {
        if (m.cells(c, 0) != b1) continue;
        const double fr = m.joint_density(r2, m.cells.row(c));
        const double f1 = m.joint_density(1, m.cells.row(c));
        den_r += fr;
        den_1 += f1;
        if (m.cells(c, 1) == 1) { num_r += fr; num_1 += f1; }
      }
      CHECK(std::abs(num_r / den_r - num_1 / den_1) < 1e-12);
    }
  }

  SUBCASE("pairwise-odds identity") {
    for (long c = 0; c < m.cells.rows(); ++c) {
      const double f1 = m.joint_density(1, m.cells.row(c));
      const double fr = m.joint_density(r3, m.cells.row(c));
      const double o = std::exp(m.alpha.at(r3).dot(
          m.odds_designs.at(r3).eval_row(m.cells.row(c))));
      CHECK(std::abs(fr / (f1 + fr) - o / (1 + o)) < 1e-12);
    }
  }

  SUBCASE("marginalization consistency of the observed mass") {
    // observed mass of (r2, B1 = 1) vs direct sum over B2
    Eigen::RowVector2d obs(1.0, na());
    double direct = 0;
    for (long c = 0; c < m.cells.rows(); ++c)
      if (m.cells(c, 0) == 1.0) direct += m.joint_density(r2, m.cells.row(c));
    CHECK(std::abs(m.observed_mass(r2, obs) - direct) < 1e-12);
    // total observed mass over all (r, observable values) is 1
    double total = m.observed_mass(1, Eigen::RowVector2d(0, 0)) +
                   m.observed_mass(1, Eigen::RowVector2d(0, 1)) +
                   m.observed_mass(1, Eigen::RowVector2d(1, 0)) +
                   m.observed_mass(1, Eigen::RowVector2d(1, 1)) +
                   m.observed_mass(r2, Eigen::RowVector2d(0, na())) +
                   m.observed_mass(r2, Eigen::RowVector2d(1, na())) +
                   m.observed_mass(r3, Eigen::RowVector2d(na(), 0)) +
                   m.observed_mass(r3, Eigen::RowVector2d(na(), 1));
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("MLE recovers the generating parameters and maximizes the likelihood") {
  auto shape = shape3();
  auto truth = known_model(shape);
  auto d = sample_from(truth, 20000, 77);

  JointLawModel skel = truth;
  skel.eta.setZero();
  for (auto& [r, a] : skel.alpha) a.setZero();
  skel.refresh();
  auto mle = fit_mle(d, skel);
  CHECK(mle.grad_norm <= 1e-6);

  const VectorXd theta_hat = mle.model.theta();
  const VectorXd theta0 = truth.theta();
  for (int j = 0; j < theta0.size(); ++j) {
    const double se = std::sqrt(mle.vcov(j, j));
    CHECK(std::abs(theta_hat(j) - theta0(j)) < 3.5 * se);
  }
  // maximality against the generating parameters
  CHECK(mle.loglik >= observed_loglik(truth, d) - 1e-9);
  CHECK(mle.loglik == doctest::Approx(observed_loglik(mle.model, d)).epsilon(1e-10));
}

TEST_CASE("MLE with fully observed data reduces to the complete-case fit") {
  // single-pattern data: alpha absent, eta is the plain multinomial MLE
  MatrixXd vals(40, 2);
  for (int i = 0; i < 40; ++i) {
    vals(i, 0) = (i % 4) / 2;
    vals(i, 1) = i % 2;
  }
  auto d = make_dataset(bin2(), vals);
  JointLawModel skel;
  skel.schema = d.schema;
  skel.patterns.push_back(d.pattern(1));
  skel.cc_terms = detail::design_no_intercept(d.schema, {"B1", "B2"});
  skel.eta = VectorXd::Zero(2);
  skel.refresh();
  auto mle = fit_mle(d, skel);
  auto cc = fit_discrete_loglinear(d, {"B1", "B2"});
  CHECK((mle.model.eta - std::get<DiscreteLoglinearLaw>(cc.impl).eta)
            .lpNorm<Eigen::Infinity>() < 1e-5);
}
