#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mnar {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// User-correctable problems: bad config, bad file, bad schema. CLI exit 1.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures: non-convergence, separation, singular systems. CLI exit 2.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* version_string = "0.1.0";

// z_{0.975}, pinned so Wald intervals are reproducible across platforms
inline constexpr double z975 = 1.959964;

inline bool is_na(double x) { return std::isnan(x); }
inline double na() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace mnar
