#pragma once

#include <set>
#include <string>
#include <vector>

#include "mnar/data_model.hpp"

namespace mnar {

// One multiplicative factor of a design column: either a raw numeric value
// (continuous/binary, optionally squared via repetition) or a categorical
// level indicator.
struct DesignFactor {
  int var = -1;
  int level = -1;  // >= 0 for a categorical indicator
  double value(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double x = row(var);
    return level >= 0 ? (x == static_cast<double>(level) ? 1.0 : 0.0) : x;
  }
};

struct DesignColumn {
  std::vector<DesignFactor> factors;  // empty = intercept
  std::string name = "1";
  double value(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double v = 1.0;
    for (const auto& f : factors) v *= f.value(row);
    return v;
  }
};

// Linear-in-parameters feature map built from term strings:
//   "1" intercept, "X" main effect, "X^2" square, "X:Y" pairwise interaction.
// Categorical main effects one-hot expand to (levels - 1) indicator columns
// (first level is the reference); squares are rejected for categoricals.
struct Design {
  std::vector<DesignColumn> columns;
  std::vector<std::string> terms;  // as given, for reporting

  int dim() const { return static_cast<int>(columns.size()); }

  std::set<int> vars_used() const {
    std::set<int> out;
    for (const auto& c : columns)
      for (const auto& f : c.factors) out.insert(f.var);
    return out;
  }

  VectorXd eval_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    VectorXd q(dim());
    for (int c = 0; c < dim(); ++c) q(c) = columns[c].value(row);
    return q;
  }

  // rows x dim design matrix over the given row indices
  MatrixXd matrix(const PatternedDataset& d, const std::vector<int>& rows) const {
    MatrixXd X(rows.size(), dim());
    for (size_t i = 0; i < rows.size(); ++i)
      X.row(i) = eval_row(d.values.row(rows[i])).transpose();
    return X;
  }
};

namespace detail {

// expansion of one variable reference into factors (one per column)
inline std::vector<std::pair<DesignFactor, std::string>> expand_var(
    const VariableSchema& schema, const std::string& name) {
  const int k = schema.index(name);
  const Variable& v = schema.vars[k];
  std::vector<std::pair<DesignFactor, std::string>> out;
  if (v.kind == VarKind::categorical) {
    for (int l = 1; l < static_cast<int>(v.levels.size()); ++l)
      out.push_back({{k, l}, name + "=" + v.levels[l]});
  } else {
    out.push_back({{k, -1}, name});
  }
  return out;
}

}  // namespace detail

inline Design make_design(const VariableSchema& schema,
                          const std::vector<std::string>& terms) {
  Design des;
  des.terms = terms;
  bool have_intercept = false;
  for (const auto& t : terms) {
    if (t == "1") {
      if (!have_intercept) {
        des.columns.push_back({});
        have_intercept = true;
      }
      continue;
    }
    auto colon = t.find(':');
    auto caret = t.find("^2");
    if (colon != std::string::npos) {
      auto a = detail::expand_var(schema, t.substr(0, colon));
      auto b = detail::expand_var(schema, t.substr(colon + 1));
      for (const auto& [fa, na_] : a)
        for (const auto& [fb, nb] : b)
          des.columns.push_back({{fa, fb}, na_ + ":" + nb});
    } else if (caret != std::string::npos && caret == t.size() - 2) {
      const std::string name = t.substr(0, caret);
      const int k = schema.index(name);
      if (schema.vars[k].kind == VarKind::categorical)
        throw UserError("squared term on categorical variable " + name);
      DesignFactor f{k, -1};
      des.columns.push_back({{f, f}, name + "^2"});
    } else {
      for (const auto& [f, nm] : detail::expand_var(schema, t))
        des.columns.push_back({{f}, nm});
    }
  }
  if (!have_intercept) {
    // intercept always included, leading position
    des.columns.insert(des.columns.begin(), DesignColumn{});
    des.terms.insert(des.terms.begin(), "1");
  }
  return des;
}

}  // namespace mnar
