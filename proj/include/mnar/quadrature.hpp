#pragma once

#include <Eigen/Eigenvalues>
#include <functional>

#include "mnar/common.hpp"

namespace mnar {

// Gauss-Hermite rule for the probabilists' weight (standard normal density):
// Golub-Welsch on the Jacobi matrix with off-diagonals sqrt(k). Weights sum
// to 1. Templated on scalar like the rest of the numeric core.
template <typename Scalar = double>
struct HermiteRule {
  Eigen::Vector<Scalar, Eigen::Dynamic> nodes;
  Eigen::Vector<Scalar, Eigen::Dynamic> weights;
};

template <typename Scalar = double>
HermiteRule<Scalar> hermite_rule(int M) {
  if (M < 2) throw UserError("quadrature order must be at least 2");
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat J = Mat::Zero(M, M);
  for (int k = 1; k < M; ++k) {
    const Scalar off = std::sqrt(static_cast<Scalar>(k));
    J(k, k - 1) = off;
    J(k - 1, k) = off;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  HermiteRule<Scalar> rule;
  rule.nodes = es.eigenvalues();
  rule.weights.resize(M);
  for (int m = 0; m < M; ++m) {
    const Scalar v = es.eigenvectors()(0, m);
    rule.weights(m) = v * v;
  }
  return rule;
}

// Adaptive Simpson over the whole real line via the tan substitution;
// the generic (oracle) integration path for arbitrary error distributions.
namespace detail {

inline double adaptive_simpson(const std::function<double(double)>& f,
                               double a, double b, double fa, double fm,
                               double fb, double whole, double tol,
                               int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol)
    return left + right + (left + right - whole) / 15;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

}  // namespace detail

inline double integrate_real_line(const std::function<double(double)>& g,
                                  double tol = 1e-10) {
  auto f = [&](double t) {
    const double c = std::cos(t);
    const double x = std::tan(t);
    return g(x) / (c * c);
  };
  // start from fixed panels so a narrow or shifted peak cannot slip between
  // the initial sample points of a single whole-line Simpson estimate
  constexpr int panels = 32;
  const double a = -std::numbers::pi / 2 + 1e-12;
  const double b = std::numbers::pi / 2 - 1e-12;
  const double h = (b - a) / panels;
  double total = 0;
  for (int k = 0; k < panels; ++k) {
    const double lo = a + k * h, hi = lo + h;
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo), fmid = f(mid), fhi = f(hi);
    const double whole = (hi - lo) / 6 * (flo + 4 * fmid + fhi);
    total += detail::adaptive_simpson(f, lo, hi, flo, fmid, fhi, whole,
                                      tol / panels, 40);
  }
  return total;
}

}  // namespace mnar
