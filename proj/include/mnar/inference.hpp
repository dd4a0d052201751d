#pragma once

#include <atomic>
#include <mutex>
#include <thread>

#include "mnar/estimators.hpp"
#include "mnar/rng.hpp"

namespace mnar {

// work items write only to their own slot, so any thread count gives
// bit-identical results
template <typename F>
void parallel_for(int n_items, int threads, F&& f) {
  if (threads <= 1 || n_items <= 1) {
    for (int i = 0; i < n_items; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n_items);
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_items) break;
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct SandwichParts {
  MatrixXd gamma_hat;  // bread: -d/dbeta P_n{estimating fn}
  MatrixXd omega_hat;  // meat: sum psi psi' / n^2 (variance-of-beta scaling)
  MatrixXd vcov;
  double gamma_condition = 0;
};

// Sandwich variance with nuisance-estimation corrections:
//   psi_i = ef_i(beta_hat) + IF_alpha,i D_alpha' + IF_eta,i D_eta'
// where D_* are central finite differences of P_n{ef} in the nuisance
// parameters, and vcov = Gamma^{-1} Omega Gamma^{-T} estimates Var(beta_hat)
// directly (the 1/n of the asymptotic-variance convention is absorbed).
inline SandwichParts sandwich_parts(
    const PatternedDataset& d, const EstimandSpec& U, const VectorXd& beta_hat,
    const std::function<MatrixXd(const VectorXd& beta,
                                 const NonresponseFit* fit,
                                 const CompleteCaseLaw* law)>& ef_rows,
    const NonresponseFit* fit, const CompleteCaseLaw* law) {
  const int n = d.n(), p = U.p;
  SandwichParts parts;

  auto mean_ef_beta = [&](const VectorXd& b) {
    return VectorXd(ef_rows(b, fit, law).colwise().mean());
  };
  parts.gamma_hat = -detail::fd_jacobian(mean_ef_beta, beta_hat, 1e-6);

  MatrixXd psi = ef_rows(beta_hat, fit, law);

  if (fit != nullptr && fit->dim_alpha > 0) {
    auto mean_ef_alpha = [&](const VectorXd& a) {
      NonresponseFit fa = fit->with_alpha(a);
      return VectorXd(ef_rows(beta_hat, &fa, law).colwise().mean());
    };
    MatrixXd d_alpha =
        detail::fd_jacobian(mean_ef_alpha, fit->alpha_stacked(), 1e-5);
    psi += fit->if_alpha * d_alpha.transpose();
  }
  if (law != nullptr && law->dim_eta > 0) {
    auto mean_ef_eta = [&](const VectorXd& e) {
      CompleteCaseLaw le = law->with_eta(e);
      return VectorXd(ef_rows(beta_hat, fit, &le).colwise().mean());
    };
    MatrixXd d_eta = detail::fd_jacobian(mean_ef_eta, law->eta(), 1e-5);
    psi += law->if_eta * d_eta.transpose();
  }

  parts.omega_hat = (psi.transpose() * psi) / (static_cast<double>(n) * n);
  parts.omega_hat = 0.5 * (parts.omega_hat + parts.omega_hat.transpose());

  Eigen::FullPivLU<MatrixXd> lu(parts.gamma_hat);
  if (!lu.isInvertible())
    throw NumericError("singular bread matrix in sandwich variance");
  MatrixXd ginv = lu.inverse();
  {
    Eigen::JacobiSVD<MatrixXd> svd(parts.gamma_hat);
    parts.gamma_condition = svd.singularValues()(0) /
                            svd.singularValues()(p - 1);
  }
  MatrixXd v = ginv * parts.omega_hat * ginv.transpose();
  parts.vcov = 0.5 * (v + v.transpose());
  return parts;
}

inline MatrixXd sandwich(const std::string& method, const PatternedDataset& d,
                         const NonresponseFit* fit, const CompleteCaseLaw* law,
                         const EstimandSpec& U, const VectorXd& beta_hat) {
  std::function<MatrixXd(const VectorXd&, const NonresponseFit*,
                         const CompleteCaseLaw*)>
      ef;
  if (method == "ipw") {
    if (!fit) throw UserError("ipw sandwich needs a nonresponse fit");
    ef = [&](const VectorXd& b, const NonresponseFit* f,
             const CompleteCaseLaw*) { return ef_ipw(d, *f, U, b); };
    return sandwich_parts(d, U, beta_hat, ef, fit, nullptr).vcov;
  }
  if (method == "pm") {
    if (!law) throw UserError("pm sandwich needs a complete-case law");
    ef = [&](const VectorXd& b, const NonresponseFit*,
             const CompleteCaseLaw* l) { return ef_pm(d, *l, U, b); };
    return sandwich_parts(d, U, beta_hat, ef, nullptr, law).vcov;
  }
  if (method == "dr" || method == "mr") {
    if (!fit || !law)
      throw UserError(method + " sandwich needs both nuisance fits");
    ef = [&](const VectorXd& b, const NonresponseFit* f,
             const CompleteCaseLaw* l) { return ef_dr(d, *f, *l, U, b); };
    return sandwich_parts(d, U, beta_hat, ef, fit, law).vcov;
  }
  throw UserError("no sandwich variance for method " + method);
}

// inverse standard normal CDF (Acklam's rational approximation + one
// Halley refinement); exact pinned value at the 0.975 point
inline double normal_quantile(double p) {
  if (p <= 0 || p >= 1) throw UserError("quantile level out of (0,1)");
  if (p == 0.975) return z975;
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  double q, x;
  if (p < 0.02425) {
    q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
  } else if (p > 1 - 0.02425) {
    q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
  } else {
    q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

inline MatrixXd wald_ci(const VectorXd& beta_hat, const MatrixXd& vcov,
                        double level = 0.95) {
  const double z = normal_quantile(1 - (1 - level) / 2);
  MatrixXd ci(beta_hat.size(), 2);
  for (int j = 0; j < beta_hat.size(); ++j) {
    const double v = vcov(j, j);
    if (v < -1e-12) throw NumericError("negative variance in Wald interval");
    const double sd = std::sqrt(std::max(0.0, v));
    ci(j, 0) = beta_hat(j) - z * sd;
    ci(j, 1) = beta_hat(j) + z * sd;
  }
  return ci;
}

struct BootstrapResult {
  int B = 0;
  int failures = 0;
  MatrixXd replicates;  // successes x p
  VectorXd sd;
  MatrixXd percentile_ci;  // p x 2
};

// Nonparametric bootstrap: replicate b resamples n rows with replacement from
// stream (seed, b) and reruns the whole pipeline (all nuisances refit).
inline BootstrapResult bootstrap(
    const PatternedDataset& d,
    const std::function<VectorXd(const PatternedDataset&)>& pipeline, int B,
    std::uint64_t seed, int threads = 1) {
  if (B < 50) throw UserError("bootstrap needs B >= 50");
  const int n = d.n();
  std::vector<VectorXd> slot(B);
  std::vector<char> ok(B, 0);
  parallel_for(B, threads, [&](int b) {
    MatrixXd vals(n, d.schema.K());
    for (int i = 0; i < n; ++i) {
      const int idx = std::min<int>(
          n - 1, static_cast<int>(rng::uniform(seed, b, i) * n));
      vals.row(i) = d.values.row(idx);
    }
    try {
      PatternedDataset rd = make_dataset(d.schema, std::move(vals));
      slot[b] = pipeline(rd);
      ok[b] = 1;
    } catch (const std::exception&) {
      ok[b] = 0;  // dropped and counted; separation happens in resamples
    }
  });
  BootstrapResult out;
  out.B = B;
  int succ = 0;
  for (int b = 0; b < B; ++b) succ += ok[b];
  out.failures = B - succ;
  if (out.failures > B / 10)
    throw NumericError("more than 10% of bootstrap replicates failed (" +
                       std::to_string(out.failures) + "/" +
                       std::to_string(B) + ")");
  const int p = [&] {
    for (int b = 0; b < B; ++b)
      if (ok[b]) return static_cast<int>(slot[b].size());
    throw NumericError("all bootstrap replicates failed");
  }();
  out.replicates.resize(succ, p);
  int row = 0;
  for (int b = 0; b < B; ++b)
    if (ok[b]) out.replicates.row(row++) = slot[b].transpose();
  out.sd.resize(p);
  out.percentile_ci.resize(p, 2);
  for (int j = 0; j < p; ++j) {
    VectorXd col = out.replicates.col(j);
    const double m = col.mean();
    out.sd(j) = std::sqrt((col.array() - m).square().sum() /
                          std::max(1, succ - 1));
    std::vector<double> sorted(col.data(), col.data() + succ);
    std::sort(sorted.begin(), sorted.end());
    auto quant = [&](double q) {
      const double h = q * (succ - 1);
      const int lo = static_cast<int>(h);
      const int hi = std::min(lo + 1, succ - 1);
      return sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
    };
    out.percentile_ci(j, 0) = quant(0.025);
    out.percentile_ci(j, 1) = quant(0.975);
  }
  return out;
}

}  // namespace mnar
