#pragma once

#include <functional>
#include <set>
#include <string>

#include "mnar/design.hpp"

namespace mnar {

// Full-data estimating function U(L; beta) with Jacobian dU/dbeta.
// E{U(L; beta_0)} = 0 defines the target parameter.
struct EstimandSpec {
  int p = 1;
  std::function<VectorXd(const Eigen::Ref<const Eigen::RowVectorXd>&,
                         const VectorXd&)> U;
  std::function<MatrixXd(const Eigen::Ref<const Eigen::RowVectorXd>&,
                         const VectorXd&)> dU;  // p x p
  std::set<int> vars_used;
  std::string description;

  bool determined_by(const PatternCode& pc) const {
    for (int v : vars_used)
      if (!pc.observed_mask[v]) return false;
    return true;
  }
};

// U = L_j - beta (mean of one coordinate)
inline EstimandSpec coordinate_mean(const VariableSchema& schema,
                                    const std::string& var) {
  const int j = schema.index(var);
  EstimandSpec s;
  s.p = 1;
  s.vars_used = {j};
  s.description = "mean:" + var;
  s.U = [j](const Eigen::Ref<const Eigen::RowVectorXd>& row,
            const VectorXd& beta) {
    VectorXd u(1);
    u(0) = row(j) - beta(0);
    return u;
  };
  s.dU = [](const Eigen::Ref<const Eigen::RowVectorXd>&, const VectorXd&) {
    MatrixXd m(1, 1);
    m(0, 0) = -1.0;
    return m;
  };
  return s;
}

inline double expit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// U = x (y - expit(x'beta)) with x = (1, covariates...) design row
inline EstimandSpec logistic_score(const VariableSchema& schema,
                                   const std::string& outcome,
                                   const std::vector<std::string>& covariates) {
  const int yj = schema.index(outcome);
  std::vector<std::string> terms = {"1"};
  terms.insert(terms.end(), covariates.begin(), covariates.end());
  auto des = std::make_shared<Design>(make_design(schema, terms));
  EstimandSpec s;
  s.p = des->dim();
  s.vars_used = des->vars_used();
  s.vars_used.insert(yj);
  s.description = "logistic:" + outcome;
  s.U = [des, yj](const Eigen::Ref<const Eigen::RowVectorXd>& row,
                  const VectorXd& beta) {
    VectorXd x = des->eval_row(row);
    return VectorXd(x * (row(yj) - expit(x.dot(beta))));
  };
  s.dU = [des](const Eigen::Ref<const Eigen::RowVectorXd>& row,
               const VectorXd& beta) {
    VectorXd x = des->eval_row(row);
    const double pr = expit(x.dot(beta));
    return MatrixXd(-(pr * (1 - pr)) * (x * x.transpose()));
  };
  return s;
}

}  // namespace mnar
