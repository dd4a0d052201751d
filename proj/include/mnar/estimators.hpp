#pragma once

#include "mnar/law.hpp"

namespace mnar {

struct EstimateReport {
  std::string method;
  VectorXd beta_hat;
  MatrixXd vcov;   // p x p; empty until a variance op fills it
  MatrixXd ci;     // p x 2 Wald interval
  int iterations = 0;
  double residual_norm = 0;
  std::vector<std::string> models_used;
};

namespace detail {

inline MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                            const VectorXd& x, double rel_step) {
  const VectorXd f0 = f(x);
  MatrixXd J(f0.size(), x.size());
  for (int j = 0; j < x.size(); ++j) {
    const double h = rel_step * (1.0 + std::abs(x(j)));
    VectorXd xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

struct SolveDiagnostics {
  int iterations = 0;
  double residual_norm = 0;
};

// Damped Newton on a p-dimensional empirical estimating equation, with a
// bracketing/bisection safeguard for scalar problems.
inline VectorXd solve_estimating_equation(
    const std::function<VectorXd(const VectorXd&)>& mean_ef, VectorXd beta,
    SolveDiagnostics& diag, double tol = 1e-11, int max_iter = 200) {
  VectorXd m = mean_ef(beta);
  double norm = m.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < max_iter && norm > tol; ++it) {
    diag.iterations = it + 1;
    MatrixXd J = fd_jacobian(mean_ef, beta, 1e-6);
    VectorXd step = J.fullPivLu().solve(-m);
    if (!step.allFinite()) break;
    double scale = 1;
    VectorXd bn = beta + step;
    VectorXd mn = mean_ef(bn);
    int halvings = 0;
    while ((!mn.allFinite() || mn.lpNorm<Eigen::Infinity>() >= norm) &&
           halvings < 40) {
      scale /= 2;
      bn = beta + scale * step;
      mn = mean_ef(bn);
      ++halvings;
    }
    if (halvings == 40) break;  // stalled; maybe the scalar fallback saves us
    beta = bn;
    m = mn;
    norm = m.lpNorm<Eigen::Infinity>();
  }
  if (norm > tol && beta.size() == 1) {
    // expanding bracket + bisection
    double lo = beta(0) - 1, hi = beta(0) + 1;
    auto f1 = [&](double b) {
      VectorXd v(1);
      v << b;
      return mean_ef(v)(0);
    };
    double flo = f1(lo), fhi = f1(hi);
    for (int k = 0; k < 60 && flo * fhi > 0; ++k) {
      lo = beta(0) - std::pow(2.0, k);
      hi = beta(0) + std::pow(2.0, k);
      flo = f1(lo);
      fhi = f1(hi);
    }
    if (flo * fhi <= 0) {
      for (int k = 0; k < 200; ++k) {
        double mid = 0.5 * (lo + hi), fm = f1(mid);
        if (std::abs(fm) <= tol) { lo = hi = mid; break; }
        (flo * fm <= 0 ? hi : lo) = mid;
        (flo * fm <= 0 ? fhi : flo) = fm;
      }
      beta(0) = 0.5 * (lo + hi);
      m = mean_ef(beta);
      norm = m.lpNorm<Eigen::Infinity>();
    }
  }
  diag.residual_norm = norm;
  if (norm > std::max(tol, 1e-10))
    throw NumericError("estimating-equation solver did not reach residual "
                       "1e-10 (got " + std::to_string(norm) + ")");
  return beta;
}

}  // namespace detail

// Complete-case solution of P_n{1(R=1) U(beta)} = 0: the starting point for
// every solver (always computable; consistent under MCAR).
inline VectorXd complete_case_start(const PatternedDataset& d,
                                    const EstimandSpec& U) {
  const auto cc = d.complete_rows();
  VectorXd beta = VectorXd::Zero(U.p);
  for (int it = 0; it < 100; ++it) {
    VectorXd m = VectorXd::Zero(U.p);
    MatrixXd J = MatrixXd::Zero(U.p, U.p);
    for (int i : cc) {
      m += U.U(d.values.row(i), beta);
      J += U.dU(d.values.row(i), beta);
    }
    m /= cc.size();
    J /= cc.size();
    if (m.lpNorm<Eigen::Infinity>() <= 1e-12) break;
    VectorXd step = J.fullPivLu().solve(-m);
    if (!step.allFinite())
      throw NumericError("singular Jacobian in complete-case start");
    beta += step;
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Per-row estimating-function contributions (n x p). Incomplete rows get the
// method-appropriate term; summation order is fixed by row order.
// ---------------------------------------------------------------------------

inline MatrixXd ef_ipw(const PatternedDataset& d, const NonresponseFit& fit,
                       const EstimandSpec& U, const VectorXd& beta) {
  MatrixXd out = MatrixXd::Zero(d.n(), U.p);
  for (int i = 0; i < d.n(); ++i) {
    if (d.pattern_id[i] != 1) continue;
    const double p1 = pi(fit, 1, d.values.row(i));
    out.row(i) = U.U(d.values.row(i), beta).transpose() / p1;
  }
  return out;
}

inline MatrixXd ef_pm(const PatternedDataset& d, const CompleteCaseLaw& law,
                      const EstimandSpec& U, const VectorXd& beta) {
  MatrixXd out(d.n(), U.p);
  for (int i = 0; i < d.n(); ++i) {
    const int r = d.pattern_id[i];
    if (r == 1)
      out.row(i) = U.U(d.values.row(i), beta).transpose();
    else
      out.row(i) =
          cond_expectation(law, d.pattern(r), d.values.row(i), U, beta)
              .transpose();
  }
  return out;
}

// V = 1(R=1) U / Pi_1 - 1(R=1) sum_{r!=1} Odds_r E[U|L_(r)]
//     + sum_{r!=1} 1(R=r) E[U|L_(r)]       (Pi_r / Pi_1 = Odds_r)
inline MatrixXd ef_dr(const PatternedDataset& d, const NonresponseFit& fit,
                      const CompleteCaseLaw& law, const EstimandSpec& U,
                      const VectorXd& beta) {
  MatrixXd out(d.n(), U.p);
  for (int i = 0; i < d.n(); ++i) {
    const int r = d.pattern_id[i];
    const auto row = d.values.row(i);
    if (r == 1) {
      double denom = 1.0;
      VectorXd aug = VectorXd::Zero(U.p);
      for (const auto& [s, des] : fit.designs) {
        const double o = odds(fit, s, row);
        denom += o;
        aug += o * cond_expectation(law, d.pattern(s), row, U, beta);
      }
      out.row(i) = (denom * U.U(row, beta) - aug).transpose();
    } else {
      out.row(i) =
          cond_expectation(law, d.pattern(r), row, U, beta).transpose();
    }
  }
  return out;
}

namespace detail {

inline EstimateReport solve_with(
    const std::string& method, const PatternedDataset& d,
    const EstimandSpec& U,
    const std::function<MatrixXd(const VectorXd&)>& ef_rows) {
  EstimateReport rep;
  rep.method = method;
  SolveDiagnostics diag;
  auto mean_ef = [&](const VectorXd& b) {
    return VectorXd(ef_rows(b).colwise().mean());
  };
  rep.beta_hat =
      solve_estimating_equation(mean_ef, complete_case_start(d, U), diag);
  rep.iterations = diag.iterations;
  rep.residual_norm = diag.residual_norm;
  return rep;
}

}  // namespace detail

inline EstimateReport solve_ipw(const PatternedDataset& d,
                                const NonresponseFit& fit,
                                const EstimandSpec& U) {
  return detail::solve_with("ipw", d, U, [&](const VectorXd& b) {
    return ef_ipw(d, fit, U, b);
  });
}

inline EstimateReport solve_pm(const PatternedDataset& d,
                               const CompleteCaseLaw& law,
                               const EstimandSpec& U) {
  return detail::solve_with("pm", d, U, [&](const VectorXd& b) {
    return ef_pm(d, law, U, b);
  });
}

inline EstimateReport solve_dr(const PatternedDataset& d,
                               const NonresponseFit& fit,
                               const CompleteCaseLaw& law,
                               const EstimandSpec& U) {
  return detail::solve_with("dr", d, U, [&](const VectorXd& b) {
    return ef_dr(d, fit, law, U, b);
  });
}

// MR: the DR solve path with pattern-specific working regressions; the
// regressions are re-centered at the solved beta and the solve repeated until
// the pilot stabilizes (affine built-in estimands converge after one refit).
struct MrResult {
  EstimateReport report;
  CompleteCaseLaw law;
};

inline MrResult solve_mr(
    const PatternedDataset& d, const NonresponseFit& fit,
    const std::map<std::string, std::vector<std::string>>& law_terms_by_mask,
    const EstimandSpec& U) {
  VectorXd pilot = solve_ipw(d, fit, U).beta_hat;
  CompleteCaseLaw law = fit_pattern_specific(d, law_terms_by_mask, U, pilot);
  EstimateReport rep;
  for (int loop = 0; loop < 5; ++loop) {
    rep = detail::solve_with("mr", d, U, [&](const VectorXd& b) {
      return ef_dr(d, fit, law, U, b);
    });
    if ((rep.beta_hat - pilot).lpNorm<Eigen::Infinity>() < 1e-8) break;
    pilot = rep.beta_hat;
    law = fit_pattern_specific(d, law_terms_by_mask, U, pilot);
  }
  return {rep, law};
}

// spec-shaped overload: caller supplies an already fitted per-pattern law
inline EstimateReport solve_mr(const PatternedDataset& d,
                               const NonresponseFit& fit,
                               const CompleteCaseLaw& per_pattern_law,
                               const EstimandSpec& U) {
  if (per_pattern_law.kind != LawKind::per_pattern_regression)
    throw UserError("solve_mr requires a per_pattern_regression law");
  auto rep = detail::solve_with("mr", d, U, [&](const VectorXd& b) {
    return ef_dr(d, fit, per_pattern_law, U, b);
  });
  return rep;
}

}  // namespace mnar
