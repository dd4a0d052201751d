#pragma once

#include <memory>
#include <variant>

#include "mnar/estimand.hpp"
#include "mnar/ldcm.hpp"

namespace mnar {

// ---------------------------------------------------------------------------
// Complete-case law f(L | R=1; eta) and the conditional expectations
// E[U(L; beta) | L_(r), R=1; eta] that PM/DR/MR estimation consumes.
// ---------------------------------------------------------------------------

enum class LawKind { gaussian_linear, discrete_loglinear, per_pattern_regression };

inline constexpr long max_enumeration_cells = 1000000;

struct GaussianLinearLaw {
  int outcome = -1;
  Design design;       // predictors (intercept forced)
  VectorXd gamma;      // OLS coefficients
  double sigma2 = 0;   // residual variance
  double mu_out = 0;   // complete-case mean of the outcome
};

struct DiscreteLoglinearLaw {
  Design terms;        // sufficient statistics (no intercept; normalized law)
  VectorXd eta;
  MatrixXd cells;      // full support, ncells x K
  VectorXd logp;       // normalized log cell probabilities

  void renormalize() {
    VectorXd lin(cells.rows());
    for (Eigen::Index c = 0; c < cells.rows(); ++c)
      lin(c) = eta.dot(terms.eval_row(cells.row(c)));
    const double m = lin.maxCoeff();
    const double logz = m + std::log((lin.array() - m).exp().sum());
    logp = lin.array() - logz;
  }
};

struct PerPatternRegLaw {
  struct PatternReg {
    int r = 0;
    Design design;
    MatrixXd coef_u;              // dim x p, regression of U at the pilot beta
    MatrixXd coef_j;              // dim x (p*p), regression of dU entries
  };
  std::vector<PatternReg> regs;   // only patterns where U is not determined
  VectorXd pilot_beta;
};

struct CompleteCaseLaw {
  LawKind kind = LawKind::gaussian_linear;
  std::variant<GaussianLinearLaw, DiscreteLoglinearLaw, PerPatternRegLaw> impl;
  int dim_eta = 0;
  MatrixXd if_eta;  // n x dim_eta, zero outside complete cases

  VectorXd eta() const {
    if (kind == LawKind::gaussian_linear) {
      const auto& g = std::get<GaussianLinearLaw>(impl);
      VectorXd e(g.gamma.size() + 1);
      e << g.gamma, g.mu_out;
      return e;
    }
    if (kind == LawKind::discrete_loglinear)
      return std::get<DiscreteLoglinearLaw>(impl).eta;
    const auto& pp = std::get<PerPatternRegLaw>(impl);
    VectorXd e(dim_eta);
    int off = 0;
    for (const auto& reg : pp.regs)
      for (int k = 0; k < reg.coef_u.cols(); ++k) {
        e.segment(off, reg.coef_u.rows()) = reg.coef_u.col(k);
        off += reg.coef_u.rows();
      }
    return e;
  }

  CompleteCaseLaw with_eta(const VectorXd& e) const {
    CompleteCaseLaw out = *this;
    if (kind == LawKind::gaussian_linear) {
      auto& g = std::get<GaussianLinearLaw>(out.impl);
      g.gamma = e.head(g.gamma.size());
      g.mu_out = e(e.size() - 1);
    } else if (kind == LawKind::discrete_loglinear) {
      auto& l = std::get<DiscreteLoglinearLaw>(out.impl);
      l.eta = e;
      l.renormalize();
    } else {
      auto& pp = std::get<PerPatternRegLaw>(out.impl);
      int off = 0;
      for (auto& reg : pp.regs)
        for (int k = 0; k < reg.coef_u.cols(); ++k) {
          reg.coef_u.col(k) = e.segment(off, reg.coef_u.rows());
          off += reg.coef_u.rows();
        }
    }
    return out;
  }
};

namespace detail {

// full categorical/binary support grid
inline MatrixXd cell_grid(const VariableSchema& schema) {
  long ncells = 1;
  std::vector<int> sizes;
  for (const auto& v : schema.vars) {
    int m;
    if (v.kind == VarKind::binary) m = 2;
    else if (v.kind == VarKind::categorical) m = static_cast<int>(v.levels.size());
    else throw UserError("discrete law requires an all-categorical schema; " +
                         v.name + " is continuous");
    sizes.push_back(m);
    ncells *= m;
    if (ncells > max_enumeration_cells)
      throw UserError("discrete support exceeds the enumeration cap");
  }
  MatrixXd cells(ncells, schema.K());
  for (long c = 0; c < ncells; ++c) {
    long rem = c;
    for (int k = schema.K() - 1; k >= 0; --k) {
      cells(c, k) = static_cast<double>(rem % sizes[k]);
      rem /= sizes[k];
    }
  }
  return cells;
}

inline Design design_no_intercept(const VariableSchema& schema,
                                  const std::vector<std::string>& terms) {
  Design des = make_design(schema, terms);
  // normalized laws absorb the constant; drop the forced intercept column
  if (!des.columns.empty() && des.columns.front().factors.empty()) {
    des.columns.erase(des.columns.begin());
    des.terms.erase(std::find(des.terms.begin(), des.terms.end(), "1"));
  }
  if (des.columns.empty())
    throw UserError("log-linear law needs at least one non-intercept term");
  return des;
}

}  // namespace detail

// OLS complete-case regression of the outcome on a predictor design.
inline CompleteCaseLaw fit_gaussian_linear(const PatternedDataset& d,
                                           const std::string& outcome,
                                           const std::vector<std::string>& predictors) {
  GaussianLinearLaw g;
  g.outcome = d.schema.index(outcome);
  g.design = make_design(d.schema, predictors);
  const auto cc = d.complete_rows();
  MatrixXd X = g.design.matrix(d, cc);
  VectorXd y(cc.size());
  for (size_t i = 0; i < cc.size(); ++i) y(i) = d.values(cc[i], g.outcome);
  MatrixXd xtx = X.transpose() * X;
  Eigen::LDLT<MatrixXd> ldlt(xtx);
  g.gamma = ldlt.solve(X.transpose() * y);
  if (!g.gamma.allFinite())
    throw NumericError("singular design in complete-case regression");
  VectorXd resid = y - X * g.gamma;
  g.sigma2 = resid.squaredNorm() / cc.size();
  const double var_y = (y.array() - y.mean()).square().mean();
  if (g.sigma2 <= 1e-12 * (1.0 + var_y))
    throw NumericError("residual variance is zero: the outcome is an exact "
                       "function of the predictors");
  g.mu_out = y.mean();

  CompleteCaseLaw law;
  law.kind = LawKind::gaussian_linear;
  law.dim_eta = g.design.dim() + 1;
  law.if_eta = MatrixXd::Zero(d.n(), law.dim_eta);
  MatrixXd xtx_pn_inv = (xtx / d.n()).inverse();
  const double cc_share = static_cast<double>(cc.size()) / d.n();
  for (size_t i = 0; i < cc.size(); ++i) {
    law.if_eta.row(cc[i]).head(g.design.dim()) =
        (xtx_pn_inv * X.row(i).transpose() * resid(i)).transpose();
    law.if_eta(cc[i], g.design.dim()) = (y(i) - g.mu_out) / cc_share;
  }
  law.impl = std::move(g);
  return law;
}

// Multinomial log-linear MLE Pr(L=l | R=1) propto exp{eta' t(l)} on the full
// discrete support, fit by Newton on the complete-case log-likelihood.
inline CompleteCaseLaw fit_discrete_loglinear(const PatternedDataset& d,
                                              const std::vector<std::string>& terms) {
  DiscreteLoglinearLaw l;
  l.terms = detail::design_no_intercept(d.schema, terms);
  l.cells = detail::cell_grid(d.schema);
  const int dim = l.terms.dim();
  l.eta = VectorXd::Zero(dim);

  const auto cc = d.complete_rows();
  MatrixXd T = l.terms.matrix(d, cc);           // n_cc x dim
  MatrixXd Tc(l.cells.rows(), dim);
  for (Eigen::Index c = 0; c < l.cells.rows(); ++c)
    Tc.row(c) = l.terms.eval_row(l.cells.row(c)).transpose();
  VectorXd tbar = T.colwise().mean();

  auto moments = [&](const VectorXd& eta) {
    VectorXd lin = Tc * eta;
    const double m = lin.maxCoeff();
    VectorXd p = (lin.array() - m).exp();
    p /= p.sum();
    VectorXd mean = Tc.transpose() * p;
    MatrixXd cov = Tc.transpose() * p.asDiagonal() * Tc - mean * mean.transpose();
    return std::make_pair(mean, cov);
  };

  double ll = -std::numeric_limits<double>::infinity();
  auto loglik = [&](const VectorXd& eta) {
    VectorXd lin = Tc * eta;
    const double m = lin.maxCoeff();
    const double logz = m + std::log((lin.array() - m).exp().sum());
    return static_cast<double>(cc.size()) * ((T * eta).mean() - logz);
  };
  ll = loglik(l.eta);
  VectorXd mean;
  MatrixXd cov;
  bool converged = false;
  // improvements below the rounding noise of ll count as flat, not worse
  const auto noise = [](double v) {
    return 8 * std::numeric_limits<double>::epsilon() * (1 + std::abs(v));
  };
  for (int it = 0; it < 200; ++it) {
    std::tie(mean, cov) = moments(l.eta);
    VectorXd g = tbar - mean;  // mean score per complete case
    if (g.lpNorm<Eigen::Infinity>() <= 1e-11) { converged = true; break; }
    Eigen::LDLT<MatrixXd> ldlt(cov);
    VectorXd step = ldlt.solve(g);
    if (!step.allFinite())
      throw NumericError("singular Hessian in log-linear fit");
    double scale = 1;
    VectorXd en = l.eta + step;
    double lln = loglik(en);
    // pure Newton once the mean score is small: the noisy summed
    // log-likelihood cannot resolve the remaining improvements
    const bool endgame = g.lpNorm<Eigen::Infinity>() <= 1e-6;
    int halvings = 0;
    while (!endgame && lln < ll - noise(ll) && halvings < 30) {
      scale /= 2;
      en = l.eta + scale * step;
      lln = loglik(en);
      ++halvings;
    }
    l.eta = en;
    ll = lln;
  }
  if (!converged) throw NumericError("log-linear MLE did not converge");
  l.renormalize();

  CompleteCaseLaw law;
  law.kind = LawKind::discrete_loglinear;
  law.dim_eta = dim;
  law.if_eta = MatrixXd::Zero(d.n(), dim);
  std::tie(mean, cov) = moments(l.eta);
  MatrixXd neg_hess_pn_inv =
      (cov * (static_cast<double>(cc.size()) / d.n())).inverse();
  for (size_t i = 0; i < cc.size(); ++i)
    law.if_eta.row(cc[i]) =
        (neg_hess_pn_inv * (T.row(i).transpose() - mean)).transpose();
  law.impl = std::move(l);
  return law;
}

// Pattern-specific working regressions for the MR estimator: OLS of each U
// coordinate (and of the dU/dbeta entries, for the local-in-beta prediction)
// at a pilot beta, on the pattern's observed-variable design, complete cases
// only. Patterns where U is determined by L_(r) are skipped (exactness rule).
inline CompleteCaseLaw fit_pattern_specific(
    const PatternedDataset& d,
    const std::map<std::string, std::vector<std::string>>& terms_by_mask,
    const EstimandSpec& U, const VectorXd& pilot_beta) {
  PerPatternRegLaw pp;
  pp.pilot_beta = pilot_beta;
  const auto cc = d.complete_rows();
  const int p = U.p;

  MatrixXd Umat(cc.size(), p);
  MatrixXd Jmat(cc.size(), p * p);
  for (size_t i = 0; i < cc.size(); ++i) {
    Umat.row(i) = U.U(d.values.row(cc[i]), pilot_beta).transpose();
    MatrixXd J = U.dU(d.values.row(cc[i]), pilot_beta);
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) Jmat(i, b * p + a) = J(a, b);
  }

  CompleteCaseLaw law;
  law.kind = LawKind::per_pattern_regression;
  law.dim_eta = 0;
  std::vector<std::pair<MatrixXd, MatrixXd>> if_blocks;  // (X, xtx_pn_inv)
  for (int r = 2; r <= d.J(); ++r) {
    const auto& pc = d.pattern(r);
    if (U.determined_by(pc)) continue;
    auto it = terms_by_mask.find(pc.mask_string());
    if (it == terms_by_mask.end())
      throw UserError("no per-pattern law design for pattern " +
                      std::to_string(r) + " (mask " + pc.mask_string() + ")");
    PerPatternRegLaw::PatternReg reg;
    reg.r = r;
    reg.design = make_design(d.schema, it->second);
    for (int v : reg.design.vars_used())
      if (!pc.observed_mask[v])
        throw UserError("per-pattern law for pattern " + std::to_string(r) +
                        " uses a variable unobserved under that pattern");
    MatrixXd X = reg.design.matrix(d, cc);
    Eigen::LDLT<MatrixXd> ldlt(X.transpose() * X);
    reg.coef_u = ldlt.solve(X.transpose() * Umat);
    reg.coef_j = ldlt.solve(X.transpose() * Jmat);
    if (!reg.coef_u.allFinite())
      throw NumericError("singular design in pattern-" + std::to_string(r) +
                         " working regression");
    if_blocks.push_back({X, (X.transpose() * X / d.n()).inverse()});
    law.dim_eta += reg.design.dim() * p;
    pp.regs.push_back(std::move(reg));
  }
  law.if_eta = MatrixXd::Zero(d.n(), law.dim_eta);
  int off = 0;
  for (size_t b = 0; b < pp.regs.size(); ++b) {
    const auto& reg = pp.regs[b];
    const auto& [X, inv] = if_blocks[b];
    MatrixXd resid = Umat - X * reg.coef_u;  // n_cc x p
    for (int k = 0; k < p; ++k) {
      for (size_t i = 0; i < cc.size(); ++i)
        law.if_eta.row(cc[i]).segment(off, reg.design.dim()) =
            (inv * X.row(i).transpose() * resid(i, k)).transpose();
      off += reg.design.dim();
    }
  }
  law.impl = std::move(pp);
  return law;
}

// ---------------------------------------------------------------------------
// Conditional expectations
// ---------------------------------------------------------------------------

// Optional multiplicative tilt on the conditional law of the missing block
// (used by the sensitivity module): weight(theta) evaluated on completed rows.
using CellTilt = std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

inline VectorXd cond_expectation(const CompleteCaseLaw& law,
                                 const PatternCode& pc,
                                 const Eigen::Ref<const Eigen::RowVectorXd>& row,
                                 const EstimandSpec& U, const VectorXd& beta,
                                 const CellTilt& tilt = nullptr) {
  // exactness: when L_(r) determines U, no model smoothing is applied
  if (U.determined_by(pc)) return U.U(row, beta);

  if (law.kind == LawKind::discrete_loglinear) {
    const auto& l = std::get<DiscreteLoglinearLaw>(law.impl);
    VectorXd acc = VectorXd::Zero(U.p);
    double wsum = 0;
    for (Eigen::Index c = 0; c < l.cells.rows(); ++c) {
      bool match = true;
      for (size_t k = 0; k < pc.observed_mask.size(); ++k)
        if (pc.observed_mask[k] && l.cells(c, k) != row(k)) { match = false; break; }
      if (!match) continue;
      double w = std::exp(l.logp(c));
      if (tilt) w *= tilt(l.cells.row(c));
      acc += w * U.U(l.cells.row(c), beta);
      wsum += w;
    }
    if (wsum <= 0) throw NumericError("empty conditional support");
    return acc / wsum;
  }

  if (law.kind == LawKind::gaussian_linear) {
    if (tilt)
      throw UserError("tilted conditional expectations for gaussian_linear "
                      "are handled by the sensitivity module");
    const auto& g = std::get<GaussianLinearLaw>(law.impl);
    for (int v : U.vars_used)
      if (!pc.observed_mask[v] && v != g.outcome)
        throw UserError(
            "U depends on a missing continuous coordinate the law does not "
            "model; Monte Carlo integration is out of scope");
    bool predictors_ok = true;
    for (int v : g.design.vars_used())
      if (!pc.observed_mask[v]) { predictors_ok = false; break; }
    const double yhat =
        predictors_ok ? g.gamma.dot(g.design.eval_row(row)) : g.mu_out;
    Eigen::RowVectorXd completed = row;
    completed(g.outcome) = yhat;
    VectorXd u0 = U.U(completed, beta);
    // closed-form substitution is only valid for U affine in the outcome
    completed(g.outcome) = yhat + 1;
    VectorXd up = U.U(completed, beta);
    completed(g.outcome) = yhat - 1;
    VectorXd um = U.U(completed, beta);
    if ((up + um - 2 * u0).lpNorm<Eigen::Infinity>() >
        1e-8 * (1 + u0.lpNorm<Eigen::Infinity>()))
      throw UserError(
          "U depends nonlinearly on the missing outcome; Monte Carlo "
          "integration is out of scope");
    return u0;
  }

  const auto& pp = std::get<PerPatternRegLaw>(law.impl);
  if (tilt)
    throw UserError("tilted expectations are not defined for the per-pattern "
                    "regression law");
  for (const auto& reg : pp.regs) {
    if (reg.r != pc.id) continue;
    VectorXd q = reg.design.eval_row(row);
    VectorXd pred = reg.coef_u.transpose() * q;          // U at pilot
    VectorXd jvec = reg.coef_j.transpose() * q;          // dU entries
    MatrixXd J(U.p, U.p);
    for (int a = 0; a < U.p; ++a)
      for (int b = 0; b < U.p; ++b) J(a, b) = jvec(b * U.p + a);
    return pred + J * (beta - pp.pilot_beta);
  }
  throw UserError("no working regression stored for pattern " +
                  std::to_string(pc.id));
}

// Dispatcher mirroring the paper's two fitting routes.
struct LawSpec {
  LawKind kind = LawKind::gaussian_linear;
  std::string outcome;                                   // gaussian_linear
  std::vector<std::string> predictors;                   // gaussian_linear
  std::vector<std::string> loglinear_terms;              // discrete_loglinear
  std::map<std::string, std::vector<std::string>> per_pattern_terms_by_mask;

  CompleteCaseLaw fit(const PatternedDataset& d, const EstimandSpec& U,
                      const VectorXd& pilot_beta) const {
    switch (kind) {
      case LawKind::gaussian_linear:
        return fit_gaussian_linear(d, outcome, predictors);
      case LawKind::discrete_loglinear:
        return fit_discrete_loglinear(d, loglinear_terms);
      case LawKind::per_pattern_regression:
        return fit_pattern_specific(d, per_pattern_terms_by_mask, U, pilot_beta);
    }
    throw UserError("unknown law kind");
  }
};

}  // namespace mnar
