#pragma once

#include "mnar/law.hpp"

namespace mnar {

// Odds-ratio factorization of the joint law of (R, L) on a finite support:
//   f(r, l) = Odds_r(l_(r))^{1(r != 1)} f(l | R=1) / Z
// with Z summing the numerator over all (r, l). The two components are
// variation independent, which is what makes the model just-identified.
struct JointLawModel {
  VariableSchema schema;
  std::vector<PatternCode> patterns;     // id 1..J, id 1 complete
  std::map<int, Design> odds_designs;    // r != 1
  std::map<int, VectorXd> alpha;
  Design cc_terms;                       // log-linear f(l | R=1), no intercept
  VectorXd eta;

  // caches
  MatrixXd cells;        // support grid
  VectorXd cc_logp;      // normalized log f(l | R=1)
  MatrixXd odds_cells;   // ncells x (J-1), Odds_r at each cell
  double normalizer = 0;

  int J() const { return static_cast<int>(patterns.size()); }

  void refresh() {
    if (cells.rows() == 0) cells = detail::cell_grid(schema);
    VectorXd lin(cells.rows());
    for (Eigen::Index c = 0; c < cells.rows(); ++c)
      lin(c) = eta.dot(cc_terms.eval_row(cells.row(c)));
    const double m = lin.maxCoeff();
    const double logz = m + std::log((lin.array() - m).exp().sum());
    cc_logp = lin.array() - logz;

    odds_cells.resize(cells.rows(), J() - 1);
    for (Eigen::Index c = 0; c < cells.rows(); ++c)
      for (int r = 2; r <= J(); ++r)
        odds_cells(c, r - 2) =
            std::exp(alpha.at(r).dot(odds_designs.at(r).eval_row(cells.row(c))));
    normalizer = 0;
    for (Eigen::Index c = 0; c < cells.rows(); ++c) {
      const double s = 1.0 + odds_cells.row(c).sum();
      if (!std::isfinite(s)) throw NumericError("infinite normalizer");
      normalizer += std::exp(cc_logp(c)) * s;
    }
    if (!(normalizer > 0) || !std::isfinite(normalizer))
      throw NumericError("infinite normalizer");
  }

  long cell_index(const Eigen::Ref<const Eigen::RowVectorXd>& l) const {
    for (Eigen::Index c = 0; c < cells.rows(); ++c)
      if ((cells.row(c).array() == l.array()).all()) return c;
    throw UserError("cell not in the support");
  }

  double joint_density(int r, const Eigen::Ref<const Eigen::RowVectorXd>& l) const {
    const long c = cell_index(l);
    const double num =
        std::exp(cc_logp(c)) * (r == 1 ? 1.0 : odds_cells(c, r - 2));
    return num / normalizer;
  }

  double full_data_density(const Eigen::Ref<const Eigen::RowVectorXd>& l) const {
    const long c = cell_index(l);
    return std::exp(cc_logp(c)) * (1.0 + odds_cells.row(c).sum()) / normalizer;
  }

  // model-implied mass of the observed datum (r, l_(r)): marginalize the
  // missing block by cell summation
  double observed_mass(int r, const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    const auto& pc = patterns.at(r - 1);
    double acc = 0;
    for (Eigen::Index c = 0; c < cells.rows(); ++c) {
      bool match = true;
      for (size_t k = 0; k < pc.observed_mask.size(); ++k)
        if (pc.observed_mask[k] && cells(c, k) != row(k)) { match = false; break; }
      if (!match) continue;
      acc += std::exp(cc_logp(c)) * (r == 1 ? 1.0 : odds_cells(c, r - 2));
    }
    return acc / normalizer;
  }

  VectorXd theta() const {
    int dim = static_cast<int>(eta.size());
    for (const auto& [r, a] : alpha) dim += static_cast<int>(a.size());
    VectorXd t(dim);
    t.head(eta.size()) = eta;
    int off = static_cast<int>(eta.size());
    for (const auto& [r, a] : alpha) {
      t.segment(off, a.size()) = a;
      off += static_cast<int>(a.size());
    }
    return t;
  }

  void set_theta(const VectorXd& t) {
    eta = t.head(eta.size());
    int off = static_cast<int>(eta.size());
    for (auto& [r, a] : alpha) {
      a = t.segment(off, a.size());
      off += static_cast<int>(a.size());
    }
    refresh();
  }
};

struct MleFit {
  JointLawModel model;
  MatrixXd vcov;        // inverse observed information
  double loglik = 0;
  double grad_norm = 0;
  int iterations = 0;
};

// Full MLE of theta = (eta, alpha) by quasi-Newton (BFGS, finite-difference
// gradients) on the observed-data log-likelihood; discrete support only.
inline MleFit fit_mle(const PatternedDataset& d, JointLawModel skeleton) {
  // group identical observed rows so the likelihood is a short weighted sum
  struct Group {
    int r;
    Eigen::RowVectorXd row;
    int count;
  };
  std::map<std::string, Group> groups;
  for (int i = 0; i < d.n(); ++i) {
    const int r = d.pattern_id[i];
    std::string key = std::to_string(r);
    for (int k = 0; k < d.schema.K(); ++k)
      key += "," + (d.observed(i, k) ? std::to_string(d.values(i, k)) : "na");
    auto it = groups.find(key);
    if (it == groups.end())
      groups[key] = {r, d.values.row(i), 1};
    else
      ++it->second.count;
  }
  // dataset patterns must correspond to the skeleton's ids by mask
  skeleton.patterns.clear();
  for (int r = 1; r <= d.J(); ++r) skeleton.patterns.push_back(d.pattern(r));

  JointLawModel work = skeleton;
  auto neg_loglik = [&](const VectorXd& t) {
    work.set_theta(t);
    double ll = 0;
    for (const auto& [key, g] : groups) {
      const double mass = work.observed_mass(g.r, g.row);
      if (!(mass > 0)) return std::numeric_limits<double>::infinity();
      ll += g.count * std::log(mass);
    }
    return -ll / d.n();
  };
  auto grad = [&](const VectorXd& t) {
    const int dim = static_cast<int>(t.size());
    VectorXd g(dim);
    for (int j = 0; j < dim; ++j) {
      const double h = 1e-6 * (1 + std::abs(t(j)));
      VectorXd tp = t, tm = t;
      tp(j) += h;
      tm(j) -= h;
      g(j) = (neg_loglik(tp) - neg_loglik(tm)) / (2 * h);
    }
    return g;
  };

  VectorXd t = skeleton.theta();
  const int dim = static_cast<int>(t.size());
  MatrixXd Hinv = MatrixXd::Identity(dim, dim);
  double f = neg_loglik(t);
  VectorXd g = grad(t);
  MleFit out;
  for (int it = 0; it < 500; ++it) {
    out.iterations = it;
    if (g.lpNorm<Eigen::Infinity>() <= 1e-6) break;
    VectorXd p = -Hinv * g;
    if (p.dot(g) >= 0) {  // not a descent direction; reset
      Hinv = MatrixXd::Identity(dim, dim);
      p = -g;
    }
    double step = 1;
    VectorXd tn = t + step * p;
    double fn = neg_loglik(tn);
    int backtracks = 0;
    while (fn > f + 1e-4 * step * g.dot(p) && backtracks < 60) {
      step /= 2;
      tn = t + step * p;
      fn = neg_loglik(tn);
      ++backtracks;
    }
    if (backtracks == 60)
      throw NumericError("MLE line search failed");
    VectorXd gn = grad(tn);
    VectorXd s = tn - t, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      MatrixXd I = MatrixXd::Identity(dim, dim);
      Hinv = (I - s * y.transpose() / sy) * Hinv *
                 (I - y * s.transpose() / sy) +
             s * s.transpose() / sy;
    }
    t = tn;
    f = fn;
    g = gn;
  }
  out.grad_norm = g.lpNorm<Eigen::Infinity>();
  if (out.grad_norm > 1e-6)
    throw NumericError("observed-data MLE did not converge (gradient " +
                       std::to_string(out.grad_norm) + ")");
  work.set_theta(t);
  out.model = work;
  out.loglik = -f * d.n();

  // observed information: FD Hessian of the total negative log-likelihood
  MatrixXd H(dim, dim);
  for (int j = 0; j < dim; ++j) {
    const double h = 1e-5 * (1 + std::abs(t(j)));
    VectorXd tp = t, tm = t;
    tp(j) += h;
    tm(j) -= h;
    H.col(j) = (grad(tp) - grad(tm)) / (2 * h) * d.n();
  }
  H = 0.5 * (H + H.transpose());
  Eigen::FullPivLU<MatrixXd> lu(H);
  if (!lu.isInvertible())
    throw NumericError("rank-deficient observed information; model not "
                       "identified at the MLE");
  out.vcov = lu.inverse();
  return out;
}

}  // namespace mnar
