#pragma once

#include <map>
#include <string>
#include <vector>

#include "mnar/design.hpp"

namespace mnar {

// Newton-Raphson logistic regression with step halving. Templated on scalar;
// the rest of the library instantiates with double.
template <typename Scalar>
struct LogisticFitResult {
  Eigen::Vector<Scalar, Eigen::Dynamic> coef;
  int iterations = 0;
  Scalar grad_norm = 0;
  bool converged = false;
};

template <typename Scalar, typename DerivedX, typename DerivedY>
LogisticFitResult<Scalar> newton_logistic(
    const Eigen::MatrixBase<DerivedX>& X, const Eigen::MatrixBase<DerivedY>& y,
    Scalar tol = Scalar(1e-8), int max_iter = 100,
    Scalar separation_norm = Scalar(30)) {
  using Vec = Eigen::Vector<Scalar, Eigen::Dynamic>;
  const auto n = X.rows();
  const auto d = X.cols();
  Vec b = Vec::Zero(d);
  auto loglik = [&](const Vec& bb) {
    Vec xb = X * bb;
    // log p = -log(1+e^{-xb}), log(1-p) = -log(1+e^{xb}), stable via log1p
    Scalar ll = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Scalar z = xb(i);
      ll += y(i) * (z - (z > 0 ? z + std::log1p(std::exp(-z))
                                : std::log1p(std::exp(z))))
            + (1 - y(i)) * (-(z > 0 ? z + std::log1p(std::exp(-z))
                                     : std::log1p(std::exp(z))));
    }
    return ll;
  };
  LogisticFitResult<Scalar> out;
  Scalar ll = loglik(b);
  // near the optimum the log-likelihood improvement drops below the rounding
  // noise of ll itself; treat such steps as flat rather than rejecting them
  const auto noise = [&](Scalar v) {
    return 8 * std::numeric_limits<Scalar>::epsilon() * (1 + std::abs(v));
  };
  for (int it = 0; it < max_iter; ++it) {
    Vec p = (1.0 + (-(X * b).array()).exp()).inverse().matrix();
    Vec g = X.transpose() * (y - p);
    out.grad_norm = g.template lpNorm<Eigen::Infinity>() / n;
    out.iterations = it;
    if (out.grad_norm <= tol) {
      out.converged = true;
      break;
    }
    Vec w = p.array() * (1.0 - p.array());
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> H =
        X.transpose() * w.asDiagonal() * X;
    Eigen::LDLT<decltype(H)> ldlt(H);
    Vec step = ldlt.solve(g);
    if (!step.allFinite() || (H * step - g).norm() > 1e-6 * (1 + g.norm()))
      throw NumericError(
          "singular information matrix in logistic fit; consider a ridge "
          "retry with a reduced design");
    Scalar scale = 1;
    Vec bn = b + step;
    Scalar lln = loglik(bn);
    // in the endgame the true improvement per step falls below the rounding
    // noise of the summed log-likelihood; take pure Newton steps there instead
    // of letting a noisy line search reject them
    const bool endgame = out.grad_norm <= Scalar(1e-6);
    int halvings = 0;
    while (!endgame && lln < ll - noise(ll) && halvings < 30) {
      scale /= 2;
      bn = b + scale * step;
      lln = loglik(bn);
      ++halvings;
    }
    b = bn;
    ll = lln;
    if (b.template lpNorm<Eigen::Infinity>() > separation_norm)
      throw NumericError("separation in logistic fit: coefficient norm "
                         "exceeds " + std::to_string((double)separation_norm));
  }
  out.coef = b;
  return out;
}

// Per-pattern odds-model designs keyed by missingness mask, so the spec can be
// re-resolved against bootstrap resamples whose frequency-ordered ids differ.
struct OddsModelSpec {
  std::map<std::string, std::vector<std::string>> terms_by_mask;

  static OddsModelSpec by_id(const PatternedDataset& d,
                             std::map<int, std::vector<std::string>> terms) {
    OddsModelSpec s;
    for (auto& [r, t] : terms)
      s.terms_by_mask[d.pattern(r).mask_string()] = std::move(t);
    return s;
  }

  // id -> Design for this dataset; validates the observability constraint
  std::map<int, Design> resolve(const PatternedDataset& d) const {
    std::map<int, Design> out;
    for (int r = 2; r <= d.J(); ++r) {
      const auto& pc = d.pattern(r);
      auto it = terms_by_mask.find(pc.mask_string());
      if (it == terms_by_mask.end())
        throw UserError("no odds design given for pattern " +
                        std::to_string(r) + " (mask " + pc.mask_string() + ")");
      Design des = make_design(d.schema, it->second);
      for (int v : des.vars_used())
        if (!pc.observed_mask[v])
          throw UserError("odds design for pattern " + std::to_string(r) +
                          " uses variable " + d.schema.vars[v].name +
                          ", which is unobserved under that pattern");
      out[r] = std::move(des);
    }
    return out;
  }
};

struct PatternFitInfo {
  int iterations = 0;
  double grad_norm = 0;
};

struct NonresponseFit {
  std::map<int, Design> designs;          // r != 1
  std::map<int, VectorXd> alpha;          // r != 1
  std::map<int, PatternFitInfo> info;
  std::map<int, int> offset;              // r -> offset into stacked alpha
  int dim_alpha = 0;
  MatrixXd if_alpha;                      // n x dim_alpha, zero off-subset

  VectorXd alpha_stacked() const {
    VectorXd a(dim_alpha);
    for (const auto& [r, ar] : alpha) a.segment(offset.at(r), ar.size()) = ar;
    return a;
  }

  NonresponseFit with_alpha(const VectorXd& a) const {
    NonresponseFit f = *this;
    for (auto& [r, ar] : f.alpha) ar = a.segment(offset.at(r), ar.size());
    return f;
  }
};

inline double odds(const NonresponseFit& fit, int r,
                   const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const Design& des = fit.designs.at(r);
  for (int v : des.vars_used())
    if (is_na(row(v)))
      throw UserError("odds for pattern " + std::to_string(r) +
                      " needs a variable that is missing in this row");
  const double o = std::exp(fit.alpha.at(r).dot(des.eval_row(row)));
  if (!std::isfinite(o)) throw NumericError("non-finite odds value");
  return o;
}

// Pi_r = Odds_r / (1 + sum_{s != 1} Odds_s); Pi_1 has numerator 1. The full
// row is needed because the normalizer pools every pattern's design.
inline double pi(const NonresponseFit& fit, int r,
                 const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  double denom = 1.0, numer = (r == 1) ? 1.0 : 0.0;
  for (const auto& [s, des] : fit.designs) {
    const double o = odds(fit, s, row);
    denom += o;
    if (s == r) numer = o;
  }
  return numer / denom;
}

inline VectorXd pi1_on_complete_cases(const NonresponseFit& fit,
                                      const PatternedDataset& d) {
  const auto cc = d.complete_rows();
  VectorXd out(cc.size());
  for (size_t i = 0; i < cc.size(); ++i)
    out(i) = pi(fit, 1, d.values.row(cc[i]));
  return out;
}

// Restricted MLE: for each pattern r != 1, logistic regression of pattern r
// vs complete cases on the subset {R in {1, r}}. Continuous columns are
// standardized inside the solver for conditioning and mapped back on output.
inline NonresponseFit fit_pairwise_logistic(const PatternedDataset& d,
                                            const OddsModelSpec& spec) {
  NonresponseFit fit;
  fit.designs = spec.resolve(d);
  fit.dim_alpha = 0;
  for (const auto& [r, des] : fit.designs) {
    fit.offset[r] = fit.dim_alpha;
    fit.dim_alpha += des.dim();
  }
  fit.if_alpha = MatrixXd::Zero(d.n(), fit.dim_alpha);
  MatrixXd hess_pn = MatrixXd::Zero(fit.dim_alpha, fit.dim_alpha);
  MatrixXd scores = MatrixXd::Zero(d.n(), fit.dim_alpha);

  for (const auto& [r, des] : fit.designs) {
    std::vector<int> subset;
    int n_r = 0;
    for (int i = 0; i < d.n(); ++i)
      if (d.pattern_id[i] == 1 || d.pattern_id[i] == r) {
        subset.push_back(i);
        n_r += d.pattern_id[i] == r;
      }
    if (n_r == 0 || n_r == static_cast<int>(subset.size()))
      throw NumericError("pattern " + std::to_string(r) +
                         ": empty arm in the pairwise subset {R in {1," +
                         std::to_string(r) + "}}");
    MatrixXd X = des.matrix(d, subset);
    VectorXd y(subset.size());
    for (size_t i = 0; i < subset.size(); ++i)
      y(i) = d.pattern_id[subset[i]] == r ? 1.0 : 0.0;

    // standardize non-intercept columns (column 0 is the forced intercept)
    VectorXd center = VectorXd::Zero(X.cols()), scale = VectorXd::Ones(X.cols());
    for (int c = 1; c < X.cols(); ++c) {
      center(c) = X.col(c).mean();
      double sd = std::sqrt((X.col(c).array() - center(c)).square().mean());
      if (sd > 0) scale(c) = sd;
    }
    MatrixXd Z = X;
    for (int c = 1; c < X.cols(); ++c)
      Z.col(c) = (X.col(c).array() - center(c)) / scale(c);

    LogisticFitResult<double> res;
    try {
      // tighter than the reporting tolerance so downstream influence-function
      // identities hold well past 1e-8
      res = newton_logistic<double>(Z, y, 1e-11);
    } catch (const NumericError& e) {
      throw NumericError("pattern " + std::to_string(r) + ": " + e.what());
    }
    // map back: b_c = bz_c / s_c, b_0 = bz_0 - sum_c bz_c m_c / s_c
    VectorXd b = res.coef;
    for (int c = 1; c < X.cols(); ++c) b(c) = res.coef(c) / scale(c);
    for (int c = 1; c < X.cols(); ++c) b(0) -= res.coef(c) * center(c) / scale(c);

    if (b.lpNorm<Eigen::Infinity>() > 30) {
      int worst = 0;
      b.cwiseAbs().maxCoeff(&worst);
      throw NumericError("pattern " + std::to_string(r) +
                         ": complete separation suspected (coefficient for "
                         "term " + des.columns[worst].name + " beyond 30)");
    }
    // report convergence on the original scale (mean score per row)
    VectorXd p = (1.0 + (-(X * b).array()).exp()).inverse().matrix();
    VectorXd g = (X.transpose() * (y - p)) / static_cast<double>(subset.size());
    if (!res.converged && g.lpNorm<Eigen::Infinity>() > 1e-8)
      throw NumericError("pattern " + std::to_string(r) +
                         ": Newton did not converge");
    fit.alpha[r] = b;
    fit.info[r] = {res.iterations, g.lpNorm<Eigen::Infinity>()};

    // per-row scores and the P_n-scaled Hessian block for IF_alpha
    const int off = fit.offset[r];
    for (size_t i = 0; i < subset.size(); ++i)
      scores.row(subset[i]).segment(off, X.cols()) =
          X.row(i) * (y(i) - p(i));
    VectorXd w = p.array() * (1.0 - p.array());
    hess_pn.block(off, off, X.cols(), X.cols()) =
        -(X.transpose() * w.asDiagonal() * X) / d.n();
  }
  // IF_alpha = score * inv(-P_n Hessian)^T (block-diagonal system)
  fit.if_alpha = scores * (-hess_pn).inverse().transpose();
  return fit;
}

inline PositivityReport check_positivity(const PatternedDataset& d,
                                         const NonresponseFit& fit,
                                         double sigma) {
  PositivityReport rep;
  rep.threshold = sigma;
  for (int i : d.complete_rows()) {
    const double p1 = pi(fit, 1, d.values.row(i));
    rep.min_estimated_pi1 = std::min(rep.min_estimated_pi1, p1);
    if (p1 < sigma) rep.flagged_rows.push_back(i);
  }
  return rep;
}

}  // namespace mnar
