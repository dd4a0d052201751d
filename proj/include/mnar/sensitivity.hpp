#pragma once

#include "mnar/inference.hpp"

namespace mnar {

// Selection-bias functions theta_r for departures from CCMV, as exponential
// tilts theta_r = exp(phi * t_r(L)) with a per-pattern feature map t_r.
// theta == 1 (phi == 0) recovers the base estimators.
struct SelectionBiasSpec {
  std::map<std::string, std::vector<std::string>> tilt_terms_by_mask;
  std::vector<double> grid;  // must contain 0 for sweeps
};

namespace detail {

inline Design tilt_design(const VariableSchema& schema,
                          const std::vector<std::string>& terms) {
  if (terms.size() == 1 && terms[0] == "1")
    return make_design(schema, terms);  // constant tilt
  return design_no_intercept(schema, terms);
}

}  // namespace detail

// resolved tilt at a fixed phi
struct Tilt {
  std::map<int, Design> designs;  // r -> feature map; absent means theta_r = 1
  double phi = 0;

  static Tilt resolve(const PatternedDataset& d, const SelectionBiasSpec& spec,
                      double phi) {
    Tilt t;
    t.phi = phi;
    for (const auto& [mask, terms] : spec.tilt_terms_by_mask) {
      const int r = d.id_by_mask(mask);
      if (r == 1) throw UserError("no tilt on the complete-case pattern");
      t.designs[r] = detail::tilt_design(d.schema, terms);
    }
    return t;
  }

  double theta(int r, const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    auto it = designs.find(r);
    if (it == designs.end()) return 1.0;
    const double v = std::exp(phi * it->second.eval_row(row).sum());
    if (!(v > 0) || !std::isfinite(v))
      throw NumericError("selection-bias tilt is not positive finite");
    return v;
  }
};

// alpha(theta): solves the theta-modified moments
//   P_n{ G_r [1{R=r} - 1{R=1} theta_r(L) Odds_r(alpha)] } = 0
// with instrument G_r = q_r / (1 + Odds_r), chosen so that the theta == 1
// system is identically the restricted pairwise-MLE score (exact null
// reduction, continuous curves through phi = 0).
inline NonresponseFit fit_alpha_theta(const PatternedDataset& d,
                                      const NonresponseFit& base,
                                      const Tilt& tilt) {
  if (tilt.phi == 0) return base;
  NonresponseFit fit = base;

  auto row_contrib = [&](const std::map<int, VectorXd>& al, int i,
                         VectorXd& m) {
    const int r = d.pattern_id[i];
    const auto row = d.values.row(i);
    if (r == 1) {
      for (const auto& [s, des] : fit.designs) {
        const VectorXd q = des.eval_row(row);
        const double o = std::exp(al.at(s).dot(q));
        m.segment(fit.offset.at(s), des.dim()) -=
            q * (tilt.theta(s, row) * o / (1.0 + o));
      }
    } else {
      const auto& des = fit.designs.at(r);
      const VectorXd q = des.eval_row(row);
      const double o = std::exp(al.at(r).dot(q));
      m.segment(fit.offset.at(r), des.dim()) += q / (1.0 + o);
    }
  };
  auto unpack = [&](const VectorXd& a) {
    std::map<int, VectorXd> al;
    for (const auto& [r, des] : fit.designs)
      al[r] = a.segment(fit.offset.at(r), des.dim());
    return al;
  };
  auto moments = [&](const VectorXd& a) {
    auto al = unpack(a);
    VectorXd m = VectorXd::Zero(fit.dim_alpha);
    for (int i = 0; i < d.n(); ++i) row_contrib(al, i, m);
    return VectorXd(m / d.n());
  };

  detail::SolveDiagnostics diag;
  VectorXd a =
      detail::solve_estimating_equation(moments, base.alpha_stacked(), diag,
                                        1e-11, 200);
  fit.alpha = unpack(a);
  for (auto& [r, inf] : fit.info) inf = {diag.iterations, diag.residual_norm};

  // influence functions from the tilted moments
  MatrixXd S = MatrixXd::Zero(d.n(), fit.dim_alpha);
  auto al = unpack(a);
  for (int i = 0; i < d.n(); ++i) {
    VectorXd m = VectorXd::Zero(fit.dim_alpha);
    row_contrib(al, i, m);
    S.row(i) = m.transpose();
  }
  MatrixXd Jm = detail::fd_jacobian(moments, a, 1e-6);
  fit.if_alpha = S * (-Jm).inverse().transpose();
  return fit;
}

// E*[U | L_(r), R=r] under the tilted law: the exponential-tilt ratio
// E[U theta_r | L_(r), R=1] / E[theta_r | L_(r), R=1].
inline VectorXd cond_expectation_tilted(
    const PatternedDataset& d, const CompleteCaseLaw& law,
    const PatternCode& pc, const Eigen::Ref<const Eigen::RowVectorXd>& row,
    const EstimandSpec& U, const VectorXd& beta, const Tilt& tilt) {
  auto it = tilt.designs.find(pc.id);
  if (it == tilt.designs.end() || U.determined_by(pc))
    return cond_expectation(law, pc, row, U, beta);

  if (law.kind == LawKind::discrete_loglinear) {
    const Design& td = it->second;
    const double phi = tilt.phi;
    return cond_expectation(law, pc, row, U, beta,
                            [&td, phi](const Eigen::Ref<const Eigen::RowVectorXd>& cell) {
                              return std::exp(phi * td.eval_row(cell).sum());
                            });
  }
  if (law.kind == LawKind::gaussian_linear) {
    const auto& g = std::get<GaussianLinearLaw>(law.impl);
    const bool empty_pattern =
        std::none_of(pc.observed_mask.begin(), pc.observed_mask.end(),
                     [](std::uint8_t b) { return b == 1; });
    if (empty_pattern) {
      // conditioning on nothing: reweight the complete-case empirical law
      VectorXd acc = VectorXd::Zero(U.p);
      double wsum = 0;
      for (int i : d.complete_rows()) {
        const double w = tilt.theta(pc.id, d.values.row(i));
        acc += w * U.U(d.values.row(i), beta);
        wsum += w;
      }
      return acc / wsum;
    }
    // outcome-linear tilt of a gaussian regression: mean shift phi * sigma^2
    const Design& td = it->second;
    const bool outcome_only =
        td.columns.size() == 1 && td.columns[0].factors.size() == 1 &&
        td.columns[0].factors[0].var == g.outcome &&
        td.columns[0].factors[0].level < 0;
    bool predictors_ok = true;
    for (int v : g.design.vars_used())
      if (!pc.observed_mask[v]) { predictors_ok = false; break; }
    if (!outcome_only || !predictors_ok)
      throw UserError("tilted gaussian expectations support only an "
                      "outcome-linear tilt with observed predictors");
    const double yhat =
        g.gamma.dot(g.design.eval_row(row)) + tilt.phi * g.sigma2;
    Eigen::RowVectorXd completed = row;
    completed(g.outcome) = yhat;
    return U.U(completed, beta);
  }
  throw UserError("tilted expectations are not defined for this law kind");
}

// ---------------------------------------------------------------------------
// theta-modified estimating functions and solvers. Pi_1* and Pi_r* follow
//   Pi_1* = {1 + sum theta_r Odds_r}^{-1},  Pi_r*/Pi_1* = theta_r Odds_r.
// ---------------------------------------------------------------------------

namespace detail {

inline MatrixXd ef_ipw_sens(const PatternedDataset& d,
                            const NonresponseFit& fit, const Tilt& tilt,
                            const EstimandSpec& U, const VectorXd& beta) {
  MatrixXd out = MatrixXd::Zero(d.n(), U.p);
  for (int i = 0; i < d.n(); ++i) {
    if (d.pattern_id[i] != 1) continue;
    const auto row = d.values.row(i);
    double denom = 1.0;
    for (const auto& [s, des] : fit.designs)
      denom += tilt.theta(s, row) * odds(fit, s, row);
    out.row(i) = U.U(row, beta).transpose() * denom;
  }
  return out;
}

inline MatrixXd ef_pm_sens(const PatternedDataset& d,
                           const CompleteCaseLaw& law, const Tilt& tilt,
                           const EstimandSpec& U, const VectorXd& beta) {
  MatrixXd out(d.n(), U.p);
  for (int i = 0; i < d.n(); ++i) {
    const int r = d.pattern_id[i];
    if (r == 1)
      out.row(i) = U.U(d.values.row(i), beta).transpose();
    else
      out.row(i) = cond_expectation_tilted(d, law, d.pattern(r),
                                           d.values.row(i), U, beta, tilt)
                       .transpose();
  }
  return out;
}

inline MatrixXd ef_dr_sens(const PatternedDataset& d,
                           const NonresponseFit& fit,
                           const CompleteCaseLaw& law, const Tilt& tilt,
                           const EstimandSpec& U, const VectorXd& beta) {
  MatrixXd out(d.n(), U.p);
  for (int i = 0; i < d.n(); ++i) {
    const int r = d.pattern_id[i];
    const auto row = d.values.row(i);
    if (r == 1) {
      double denom = 1.0;
      VectorXd aug = VectorXd::Zero(U.p);
      for (const auto& [s, des] : fit.designs) {
        const double to = tilt.theta(s, row) * odds(fit, s, row);
        denom += to;
        aug += to * cond_expectation_tilted(d, law, d.pattern(s), row, U,
                                            beta, tilt);
      }
      out.row(i) = (denom * U.U(row, beta) - aug).transpose();
    } else {
      out.row(i) = cond_expectation_tilted(d, law, d.pattern(r), row, U,
                                           beta, tilt)
                       .transpose();
    }
  }
  return out;
}

}  // namespace detail

inline EstimateReport ipw_sens(const PatternedDataset& d,
                               const NonresponseFit& fit_theta,
                               const Tilt& tilt, const EstimandSpec& U) {
  auto rep = detail::solve_with("ipw", d, U, [&](const VectorXd& b) {
    return detail::ef_ipw_sens(d, fit_theta, tilt, U, b);
  });
  auto ef = [&](const VectorXd& b, const NonresponseFit* f,
                const CompleteCaseLaw*) {
    return detail::ef_ipw_sens(d, *f, tilt, U, b);
  };
  rep.vcov = sandwich_parts(d, U, rep.beta_hat, ef, &fit_theta, nullptr).vcov;
  rep.ci = wald_ci(rep.beta_hat, rep.vcov);
  return rep;
}

inline EstimateReport pm_sens(const PatternedDataset& d,
                              const CompleteCaseLaw& law, const Tilt& tilt,
                              const EstimandSpec& U) {
  auto rep = detail::solve_with("pm", d, U, [&](const VectorXd& b) {
    return detail::ef_pm_sens(d, law, tilt, U, b);
  });
  auto ef = [&](const VectorXd& b, const NonresponseFit*,
                const CompleteCaseLaw* l) {
    return detail::ef_pm_sens(d, *l, tilt, U, b);
  };
  rep.vcov = sandwich_parts(d, U, rep.beta_hat, ef, nullptr, &law).vcov;
  rep.ci = wald_ci(rep.beta_hat, rep.vcov);
  return rep;
}

inline EstimateReport dr_sens(const PatternedDataset& d,
                              const NonresponseFit& fit_theta,
                              const CompleteCaseLaw& law, const Tilt& tilt,
                              const EstimandSpec& U) {
  auto rep = detail::solve_with("dr", d, U, [&](const VectorXd& b) {
    return detail::ef_dr_sens(d, fit_theta, law, tilt, U, b);
  });
  auto ef = [&](const VectorXd& b, const NonresponseFit* f,
                const CompleteCaseLaw* l) {
    return detail::ef_dr_sens(d, *f, *l, tilt, U, b);
  };
  rep.vcov = sandwich_parts(d, U, rep.beta_hat, ef, &fit_theta, &law).vcov;
  rep.ci = wald_ci(rep.beta_hat, rep.vcov);
  return rep;
}

struct SensitivityPoint {
  double phi = 0;
  std::map<std::string, EstimateReport> reports;
  std::vector<std::string> failures;
};

struct SensitivityCurve {
  std::vector<SensitivityPoint> points;  // in grid order
};

// Sweep the phi grid. The phi = 0 entry reuses the base fits and estimators
// (bit-for-bit base reproduction); other points refit alpha(theta) with warm
// starts spreading outward from 0.
inline SensitivityCurve sweep(const PatternedDataset& d,
                              const NonresponseFit& base,
                              const CompleteCaseLaw* law,
                              const SelectionBiasSpec& spec,
                              const std::vector<std::string>& methods,
                              const EstimandSpec& U) {
  if (spec.grid.empty()) throw UserError("sensitivity grid is empty");
  if (std::none_of(spec.grid.begin(), spec.grid.end(),
                   [](double v) { return v == 0; }))
    throw UserError("sensitivity grid must contain 0");
  for (const auto& m : methods) {
    if (m != "ipw" && m != "pm" && m != "dr")
      throw UserError("sensitivity supports methods ipw, pm, dr; got " + m);
    if (m != "ipw" && law == nullptr)
      throw UserError("method " + m + " needs a complete-case law");
  }

  SensitivityCurve curve;
  curve.points.resize(spec.grid.size());
  std::vector<size_t> order(spec.grid.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return std::abs(spec.grid[a]) < std::abs(spec.grid[b]);
  });

  NonresponseFit warm = base;
  for (size_t oi : order) {
    SensitivityPoint& pt = curve.points[oi];
    pt.phi = spec.grid[oi];
    try {
      Tilt tilt = Tilt::resolve(d, spec, pt.phi);
      NonresponseFit fit_theta =
          pt.phi == 0 ? base : fit_alpha_theta(d, warm, tilt);
      if (pt.phi != 0) warm = fit_theta;
      for (const auto& m : methods) {
        try {
          EstimateReport rep;
          if (pt.phi == 0) {
            if (m == "ipw") rep = solve_ipw(d, base, U);
            else if (m == "pm") rep = solve_pm(d, *law, U);
            else rep = solve_dr(d, base, *law, U);
            rep.vcov = sandwich(m, d, &base, law, U, rep.beta_hat);
            rep.ci = wald_ci(rep.beta_hat, rep.vcov);
          } else if (m == "ipw") {
            rep = ipw_sens(d, fit_theta, tilt, U);
          } else if (m == "pm") {
            rep = pm_sens(d, *law, tilt, U);
          } else {
            rep = dr_sens(d, fit_theta, *law, tilt, U);
          }
          pt.reports[m] = std::move(rep);
        } catch (const std::exception& e) {
          pt.failures.push_back(m + ": " + e.what());
        }
      }
    } catch (const std::exception& e) {
      pt.failures.push_back(std::string("alpha(theta): ") + e.what());
    }
  }
  return curve;
}

}  // namespace mnar
