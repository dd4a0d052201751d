#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mnar/common.hpp"

namespace mnar {

enum class VarKind { continuous, binary, categorical };

struct Variable {
  std::string name;
  VarKind kind = VarKind::continuous;
  std::vector<std::string> levels;  // categorical only
};

struct VariableSchema {
  std::vector<Variable> vars;

  int K() const { return static_cast<int>(vars.size()); }

  int index(const std::string& name) const {
    for (int k = 0; k < K(); ++k)
      if (vars[k].name == name) return k;
    throw UserError("unknown variable: " + name);
  }

  bool has(const std::string& name) const {
    return std::any_of(vars.begin(), vars.end(),
                       [&](const Variable& v) { return v.name == name; });
  }

  void validate() const {
    if (vars.empty()) throw UserError("schema needs at least one variable");
    for (int a = 0; a < K(); ++a) {
      if (vars[a].kind == VarKind::categorical && vars[a].levels.empty())
        throw UserError("categorical variable " + vars[a].name +
                        " has no levels");
      for (int b = a + 1; b < K(); ++b)
        if (vars[a].name == vars[b].name)
          throw UserError("duplicate variable name: " + vars[a].name);
    }
  }
};

struct PatternCode {
  std::vector<std::uint8_t> observed_mask;  // 1 = observed
  int id = 0;                               // 1..J, 1 = complete case

  std::string mask_string() const {
    std::string s;
    for (auto b : observed_mask) s += b ? '1' : '0';
    return s;
  }
  bool complete() const {
    return std::all_of(observed_mask.begin(), observed_mask.end(),
                       [](std::uint8_t b) { return b == 1; });
  }
};

// Rectangular data with per-row missingness pattern codes. Values are stored
// as doubles (categoricals as level indices); NaN marks a missing cell.
// Immutable after construction.
struct PatternedDataset {
  VariableSchema schema;
  MatrixXd values;               // n x K, NaN where missing
  std::vector<int> pattern_id;   // per row, 1..J
  std::vector<PatternCode> patterns;  // patterns[r-1] has id r
  std::vector<int> counts;            // counts[r-1]

  int n() const { return static_cast<int>(values.rows()); }
  int J() const { return static_cast<int>(patterns.size()); }

  bool observed(int i, int k) const { return !is_na(values(i, k)); }

  const PatternCode& pattern(int r) const { return patterns.at(r - 1); }

  int id_by_mask(const std::string& mask) const {
    for (const auto& p : patterns)
      if (p.mask_string() == mask) return p.id;
    throw UserError("no pattern with mask " + mask + " in dataset");
  }

  std::vector<int> rows_with_pattern(int r) const {
    std::vector<int> out;
    for (int i = 0; i < n(); ++i)
      if (pattern_id[i] == r) out.push_back(i);
    return out;
  }

  std::vector<int> complete_rows() const { return rows_with_pattern(1); }
};

namespace detail {

// Assign dense pattern ids: complete case forced to 1, the rest by descending
// frequency, ties broken by the mask read as a binary number (descending).
inline void assign_pattern_ids(PatternedDataset& d) {
  const int n = d.n(), K = d.schema.K();
  std::map<std::string, int> count_by_mask;
  std::vector<std::string> row_mask(n);
  for (int i = 0; i < n; ++i) {
    std::string m(K, '1');
    for (int k = 0; k < K; ++k)
      if (!d.observed(i, k)) m[k] = '0';
    row_mask[i] = m;
    ++count_by_mask[m];
  }
  const std::string full(K, '1');
  if (!count_by_mask.count(full))
    throw UserError("no complete cases present");

  struct Entry { std::string mask; int count; };
  std::vector<Entry> entries;
  for (const auto& [m, c] : count_by_mask) entries.push_back({m, c});
  std::sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
    if (a.mask == full) return true;
    if (b.mask == full) return false;
    if (a.count != b.count) return a.count > b.count;
    return a.mask > b.mask;  // '1' > '0', MSB = first variable
  });

  d.patterns.clear();
  d.counts.clear();
  std::map<std::string, int> id_by_mask;
  for (int j = 0; j < static_cast<int>(entries.size()); ++j) {
    PatternCode pc;
    pc.id = j + 1;
    for (char c : entries[j].mask) pc.observed_mask.push_back(c == '1');
    d.patterns.push_back(pc);
    d.counts.push_back(entries[j].count);
    id_by_mask[entries[j].mask] = j + 1;
  }
  d.pattern_id.resize(n);
  for (int i = 0; i < n; ++i) d.pattern_id[i] = id_by_mask[row_mask[i]];
}

// Minimal CSV splitter with quoted-field support.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool in_quotes = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') { cur += '"'; ++i; }
        else in_quotes = false;
      } else cur += c;
    } else if (c == '"') in_quotes = true;
    else if (c == ',') { out.push_back(cur); cur.clear(); }
    else if (c != '\r') cur += c;
  }
  out.push_back(cur);
  return out;
}

inline double parse_cell(const std::string& raw, const Variable& var, int row,
                         const std::string& na_token) {
  if (raw.empty() || raw == na_token) return na();
  switch (var.kind) {
    case VarKind::continuous: {
      size_t pos = 0;
      double v;
      try { v = std::stod(raw, &pos); } catch (...) { pos = 0; }
      if (pos != raw.size())
        throw UserError("row " + std::to_string(row) + ", column " + var.name +
                        ": cannot parse \"" + raw + "\" as continuous");
      return v;
    }
    case VarKind::binary:
      if (raw == "0") return 0.0;
      if (raw == "1") return 1.0;
      throw UserError("row " + std::to_string(row) + ", column " + var.name +
                      ": binary cell must be 0 or 1, got \"" + raw + "\"");
    case VarKind::categorical:
      for (size_t l = 0; l < var.levels.size(); ++l)
        if (var.levels[l] == raw) return static_cast<double>(l);
      throw UserError("row " + std::to_string(row) + ", column " + var.name +
                      ": unknown level \"" + raw + "\"");
  }
  return na();
}

}  // namespace detail

// Build a dataset from an in-memory matrix (NaN = missing); the route used by
// the simulator and tests.
inline PatternedDataset make_dataset(VariableSchema schema, MatrixXd values) {
  schema.validate();
  if (values.cols() != schema.K())
    throw UserError("value matrix has " + std::to_string(values.cols()) +
                    " columns, schema has " + std::to_string(schema.K()));
  PatternedDataset d;
  d.schema = std::move(schema);
  d.values = std::move(values);
  detail::assign_pattern_ids(d);
  return d;
}

inline PatternedDataset ingest_csv(const std::string& path,
                                   VariableSchema schema,
                                   const std::string& na_token = "NA") {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw UserError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw UserError("empty file: " + path);
  auto header = detail::split_csv_line(line);
  if (static_cast<int>(header.size()) != schema.K())
    throw UserError("header has " + std::to_string(header.size()) +
                    " columns, schema expects " + std::to_string(schema.K()));
  for (int k = 0; k < schema.K(); ++k)
    if (header[k] != schema.vars[k].name)
      throw UserError("unknown column \"" + header[k] + "\" (expected " +
                      schema.vars[k].name + ")");

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != schema.K())
      throw UserError("row " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(schema.K()));
    std::vector<double> row(schema.K());
    for (int k = 0; k < schema.K(); ++k)
      row[k] = detail::parse_cell(cells[k], schema.vars[k], lineno, na_token);
    rows.push_back(std::move(row));
  }
  MatrixXd values(rows.size(), schema.K());
  for (size_t i = 0; i < rows.size(); ++i)
    for (int k = 0; k < schema.K(); ++k) values(i, k) = rows[i][k];
  return make_dataset(std::move(schema), std::move(values));
}

struct PatternTableRow {
  int id;
  std::string mask;
  int count;
  double percent;
};

inline std::vector<PatternTableRow> tabulate_patterns(
    const PatternedDataset& d) {
  std::vector<PatternTableRow> out;
  for (int r = 1; r <= d.J(); ++r)
    out.push_back({r, d.pattern(r).mask_string(), d.counts[r - 1],
                   100.0 * d.counts[r - 1] / d.n()});
  return out;
}

struct PositivityReport {
  double min_estimated_pi1 = 1.0;
  std::vector<int> flagged_rows;
  double threshold = 0.0;
};

}  // namespace mnar
