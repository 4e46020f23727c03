#ifndef PATHSMOOTH_DIAGNOSTICS_HPP_
#define PATHSMOOTH_DIAGNOSTICS_HPP_

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pathsmooth/common.hpp"
#include "pathsmooth/exact.hpp"
#include "pathsmooth/mhips.hpp"
#include "pathsmooth/rng.hpp"
#include "pathsmooth/smc.hpp"

namespace pathsmooth {

using PathFunctional = std::function<double(std::span<const double>)>;

inline double path_sum(std::span<const double> path) {
  double acc = 0.0;
  for (double x : path) acc += x;
  return acc;
}

// Effective sample size per time step: the inverse mean squared
// normalized error of the per-repetition posterior-mean estimates against
// the exact marginals. An estimator as accurate as the mean of N_eff iid
// draws scores N_eff.
struct NeffReport {
  std::vector<double> per_time_neff;
  int repetitions = 0;
  std::vector<std::vector<double>> estimator_values;  // retained on request
};

inline NeffReport effective_sample_size(const std::vector<std::vector<double>>& estimates,
                                        const ExactMarginals& oracle,
                                        bool retain_estimates = false) {
  const int reps = static_cast<int>(estimates.size());
  if (reps < 2) {
    throw InsufficientSampleError("effective_sample_size: need at least 2 repetitions");
  }
  const int horizon = oracle.horizon();
  for (const auto& row : estimates) {
    if (static_cast<int>(row.size()) != horizon) {
      throw ConfigError("effective_sample_size: estimate row length does not match oracle");
    }
  }
  NeffReport report;
  report.repetitions = reps;
  report.per_time_neff.resize(horizon);
  for (int t = 0; t < horizon; ++t) {
    const double mu = oracle.means[t];
    const double sd = std::sqrt(oracle.variances[t]);
    double acc = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double z = (estimates[r][t] - mu) / sd;
      acc += z * z;
    }
    // Zero empirical error happens legitimately in degenerate tests;
    // report +inf rather than failing.
    report.per_time_neff[t] =
        acc > 0.0 ? reps / acc : std::numeric_limits<double>::infinity();
  }
  if (retain_estimates) report.estimator_values = estimates;
  return report;
}

// Weighted estimate of the smoothed additive functional sum_t x_t.
inline double additive_functional(const PathEnsemble& ensemble) {
  if (ensemble.state_dim != 1) {
    throw ConfigError("additive_functional: requires 1-D states");
  }
  double acc = 0.0;
  for (int i = 0; i < ensemble.n_particles; ++i) {
    acc += std::exp(ensemble.log_weights[i]) * path_sum(ensemble.path(i));
  }
  return acc;
}

// Asymptotic-variance estimate from a single equal-weight population: the
// sample variance of {h(path_i)} divided by N estimates Var_Pi(h)/N, so a
// confidence interval needs no extra Monte Carlo passes.
struct CltReport {
  double functional_mean = 0.0;
  double variance_estimate_single_run = 0.0;
  std::optional<double> empirical_variance;
  int n_particles = 0;
  int k_used = 0;
};

inline CltReport clt_variance_single_run(const PathEnsemble& ensemble,
                                         const PathFunctional& h, int k_used = 0) {
  const int n = ensemble.n_particles;
  if (n < 2) {
    throw InsufficientSampleError("clt_variance_single_run: need at least 2 particles");
  }
  const double uniform_lw = -std::log(static_cast<double>(n));
  for (double lw : ensemble.log_weights) {
    if (std::abs(lw - uniform_lw) > 1e-9) {
      throw ContractError("clt_variance_single_run: ensemble weights must be equal");
    }
  }
  std::vector<double> values(n);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    values[i] = h(ensemble.path(i));
    mean += values[i];
  }
  mean /= n;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  CltReport report;
  report.functional_mean = mean;
  report.variance_estimate_single_run = ss / (n - 1) / n;
  report.n_particles = n;
  report.k_used = k_used;
  return report;
}

// Empirical mean squared error of the improved estimator as a function of
// the pass count, against the exact value pi_h, for either weighting mode.
// The predicted large-K limit is Var_Pi(h) * E[sum_i w_i^2].
enum class WeightMode { kOriginal, kResampled };

inline std::string to_string(WeightMode mode) {
  return mode == WeightMode::kOriginal ? "original" : "resampled";
}

struct MsePassesPlan {
  // Builds the initial weighted ensemble of repetition `rep`.
  std::function<PathEnsemble(int rep, Rng&)> make_initial;
  const HmmModel* model = nullptr;
  const ObservationRecord* obs = nullptr;
  const GibbsKernelFamily* kernels = nullptr;
  std::vector<int> k_values;
  int repetitions = 100;
  double pi_h = std::numeric_limits<double>::quiet_NaN();
  double var_pi_h = std::numeric_limits<double>::quiet_NaN();
};

struct MsePassesRow {
  int k = 0;
  WeightMode weight_mode = WeightMode::kResampled;
  double mse = 0.0;
  double predicted_limit = 0.0;
};

inline std::vector<MsePassesRow> mse_vs_passes(const MsePassesPlan& plan,
                                               const PathFunctional& h, WeightMode mode,
                                               Rng& rng) {
  if (!std::isfinite(plan.pi_h) || !std::isfinite(plan.var_pi_h)) {
    throw ConfigError("mse_vs_passes: exact oracle values pi_h and var_pi_h are required");
  }
  if (plan.repetitions < 1) throw ConfigError("mse_vs_passes: need at least one repetition");
  if (plan.k_values.empty()) throw ConfigError("mse_vs_passes: empty pass schedule");
  for (std::size_t i = 0; i < plan.k_values.size(); ++i) {
    if (plan.k_values[i] < 0 || (i > 0 && plan.k_values[i] <= plan.k_values[i - 1])) {
      throw ConfigError("mse_vs_passes: pass schedule must be nonnegative and increasing");
    }
  }
  const int max_k = plan.k_values.back();

  std::vector<double> sq_err(plan.k_values.size(), 0.0);
  double mean_sum_sq_weights = 0.0;
  for (int rep = 0; rep < plan.repetitions; ++rep) {
    Rng rep_rng = rng.stream(rep);
    PathEnsemble ensemble = plan.make_initial(rep, rep_rng);
    if (mode == WeightMode::kResampled) {
      ensemble = multinomial_resample(ensemble, rep_rng);
    }
    const auto weights = ensemble.weights();
    double ssw = 0.0;
    for (double w : weights) ssw += w * w;
    mean_sum_sq_weights += ssw;

    auto record = [&](std::size_t slot) {
      double est = 0.0;
      for (int i = 0; i < ensemble.n_particles; ++i) {
        est += weights[i] * h(ensemble.path(i));
      }
      const double err = est - plan.pi_h;
      sq_err[slot] += err * err;
    };

    std::size_t slot = 0;
    if (plan.k_values[0] == 0) record(slot++);
    if (max_k > 0) {
      MhipsRunner runner(std::move(ensemble), *plan.model, *plan.obs, *plan.kernels, rep_rng);
      for (int k = 1; k <= max_k; ++k) {
        runner.run_pass();
        if (slot < plan.k_values.size() && plan.k_values[slot] == k) {
          ensemble = runner.ensemble();
          record(slot++);
        }
      }
    }
  }
  mean_sum_sq_weights /= plan.repetitions;

  std::vector<MsePassesRow> rows(plan.k_values.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].k = plan.k_values[i];
    rows[i].weight_mode = mode;
    rows[i].mse = sq_err[i] / plan.repetitions;
    rows[i].predicted_limit = plan.var_pi_h * mean_sum_sq_weights;
  }
  return rows;
}

// First term of the deviation inequality for an equal-weight population:
// P(|mean - Pi h| > eps) <= 2 exp(-N eps^2 / (2 osc(h)^2)) + initialization
// deviation. The second term is an experiment-level quantity reported by
// the MSE machinery, not by this bound.
inline double hoeffding_bound(double osc_h, int n_particles, double epsilon) {
  if (!(osc_h > 0.0)) throw ConfigError("hoeffding_bound: osc_h must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("hoeffding_bound: epsilon must be positive");
  if (n_particles < 0) throw ConfigError("hoeffding_bound: negative particle count");
  return 2.0 * std::exp(-n_particles * epsilon * epsilon / (2.0 * osc_h * osc_h));
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_DIAGNOSTICS_HPP_
