#ifndef PATHSMOOTH_EXACT_HPP_
#define PATHSMOOTH_EXACT_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "pathsmooth/common.hpp"
#include "pathsmooth/hmm.hpp"

namespace pathsmooth {

// Per-time smoothing means and variances of X_t | Y_{0:T}.
struct ExactMarginals {
  std::vector<double> means;
  std::vector<double> variances;

  int horizon() const { return static_cast<int>(means.size()); }
};

struct KalmanResult {
  ExactMarginals smoothed;
  std::vector<double> filtered_means;
  std::vector<double> filtered_variances;
  std::vector<double> predicted_means;
  std::vector<double> predicted_variances;
};

// Forward Kalman recursion plus RTS backward pass for the LGM. Variances
// are carried directly; the 1-D recursions are stable at this scale.
inline KalmanResult kalman_filter_smoother(const LgmParams& params,
                                           const ObservationRecord& obs) {
  validate(params);
  const int horizon = obs.horizon();
  if (horizon < 1) {
    throw ConfigError("kalman_smoother: observations must be nonempty");
  }
  const double phi = params.phi;
  const double su2 = params.sigma_u * params.sigma_u;
  const double sv2 = params.sigma_v * params.sigma_v;

  KalmanResult r;
  r.predicted_means.resize(horizon);
  r.predicted_variances.resize(horizon);
  r.filtered_means.resize(horizon);
  r.filtered_variances.resize(horizon);

  double mp = 0.0;
  double pp = params.initial_variance();
  for (int t = 0; t < horizon; ++t) {
    if (t > 0) {
      mp = phi * r.filtered_means[t - 1];
      pp = phi * phi * r.filtered_variances[t - 1] + su2;
    }
    if (!(pp > 0.0) || !std::isfinite(pp)) {
      throw AlgorithmError("kalman_smoother: non-positive predicted variance at t=" +
                           std::to_string(t));
    }
    r.predicted_means[t] = mp;
    r.predicted_variances[t] = pp;
    const double gain = pp / (pp + sv2);
    r.filtered_means[t] = mp + gain * (obs.observations[t] - mp);
    r.filtered_variances[t] = (1.0 - gain) * pp;
  }

  r.smoothed.means.resize(horizon);
  r.smoothed.variances.resize(horizon);
  r.smoothed.means[horizon - 1] = r.filtered_means[horizon - 1];
  r.smoothed.variances[horizon - 1] = r.filtered_variances[horizon - 1];
  for (int t = horizon - 2; t >= 0; --t) {
    const double gain = r.filtered_variances[t] * phi / r.predicted_variances[t + 1];
    r.smoothed.means[t] =
        r.filtered_means[t] + gain * (r.smoothed.means[t + 1] - r.predicted_means[t + 1]);
    r.smoothed.variances[t] =
        r.filtered_variances[t] +
        gain * gain * (r.smoothed.variances[t + 1] - r.predicted_variances[t + 1]);
  }
  return r;
}

inline ExactMarginals kalman_smoother(const LgmParams& params, const ObservationRecord& obs) {
  return kalman_filter_smoother(params, obs).smoothed;
}

struct GridSpec {
  double lo = -6.0;
  double hi = 6.0;
  int n_points = 2000;

  double spacing() const { return (hi - lo) / (n_points - 1); }
  double point(int k) const { return lo + k * spacing(); }
  // Trapezoidal quadrature weight of grid cell k.
  double quad_weight(int k) const {
    return (k == 0 || k == n_points - 1) ? spacing() / 2.0 : spacing();
  }
};

namespace detail {

// Normalizes v in place to sum 1; returns false when the total mass is zero
// or non-finite.
inline bool normalize_mass(std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  if (!(sum > 0.0) || !std::isfinite(sum)) return false;
  for (double& x : v) x /= sum;
  return true;
}

// exp(values - max) elementwise; the common scale cancels after
// normalization.
inline std::vector<double> exp_shifted(const std::vector<double>& log_values) {
  const double m = *std::max_element(log_values.begin(), log_values.end());
  std::vector<double> out(log_values.size());
  if (!std::isfinite(m)) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  for (std::size_t i = 0; i < log_values.size(); ++i) {
    out[i] = std::exp(log_values[i] - m);
  }
  return out;
}

}  // namespace detail

struct GridSmootherResult {
  ExactMarginals marginals;
  // max over t of the smoothing mass in the first/last grid cell, a
  // coverage diagnostic.
  double boundary_mass = 0.0;
};

// Exact forward-backward smoothing on a quadrature discretization of a 1-D
// state space. Ground truth for models without closed-form smoothers.
inline GridSmootherResult grid_smoother_full(const HmmModel& model,
                                             const ObservationRecord& obs,
                                             const GridSpec& grid) {
  if (model.state_dim != 1) {
    throw ConfigError("grid_smoother: model must have a 1-D state");
  }
  if (grid.n_points < 2) {
    throw ConfigError("grid_smoother: need at least 2 grid points");
  }
  if (!(grid.hi > grid.lo)) {
    throw ConfigError("grid_smoother: empty grid interval");
  }
  const int n = grid.n_points;
  const int horizon = obs.horizon();

  std::vector<double> points(n), qw(n);
  for (int k = 0; k < n; ++k) {
    points[k] = grid.point(k);
    qw[k] = grid.quad_weight(k);
  }

  // Transition matrix with quadrature weights folded into the destination.
  std::vector<double> trans(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    const StateRef xi(&points[i], 1);
    for (int j = 0; j < n; ++j) {
      trans[static_cast<std::size_t>(i) * n + j] =
          std::exp(model.log_transition_density(xi, StateRef(&points[j], 1))) * qw[j];
    }
  }

  // Per-time emission vectors.
  std::vector<std::vector<double>> emit(horizon, std::vector<double>(n));
  for (int t = 0; t < horizon; ++t) {
    std::vector<double> log_e(n);
    for (int k = 0; k < n; ++k) {
      log_e[k] = model.log_observation_density(StateRef(&points[k], 1), obs.observations[t]);
    }
    emit[t] = detail::exp_shifted(log_e);
  }

  // Forward pass, renormalized each step.
  std::vector<std::vector<double>> alpha(horizon, std::vector<double>(n));
  {
    std::vector<double> log_init(n);
    for (int k = 0; k < n; ++k) {
      log_init[k] = model.log_initial_density(StateRef(&points[k], 1));
    }
    auto init = detail::exp_shifted(log_init);
    for (int k = 0; k < n; ++k) alpha[0][k] = init[k] * qw[k] * emit[0][k];
    if (!detail::normalize_mass(alpha[0])) {
      throw GridCoverageError("grid_smoother: zero forward mass at t=0", 0);
    }
  }
  for (int t = 1; t < horizon; ++t) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += alpha[t - 1][i] * trans[static_cast<std::size_t>(i) * n + j];
      }
      alpha[t][j] = acc * emit[t][j];
    }
    if (!detail::normalize_mass(alpha[t])) {
      throw GridCoverageError("grid_smoother: zero forward mass at t=" + std::to_string(t), t);
    }
  }

  // Backward pass.
  std::vector<double> beta(n, 1.0), beta_next(n);
  GridSmootherResult result;
  result.marginals.means.resize(horizon);
  result.marginals.variances.resize(horizon);
  std::vector<double> gamma(n);
  for (int t = horizon - 1; t >= 0; --t) {
    if (t < horizon - 1) {
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const std::size_t row = static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
          acc += trans[row + j] * emit[t + 1][j] * beta_next[j];
        }
        beta[i] = acc;
      }
      if (!detail::normalize_mass(beta)) {
        throw GridCoverageError("grid_smoother: zero backward mass at t=" + std::to_string(t),
                                t);
      }
    }
    for (int k = 0; k < n; ++k) gamma[k] = alpha[t][k] * beta[k];
    if (!detail::normalize_mass(gamma)) {
      throw GridCoverageError("grid_smoother: zero smoothing mass at t=" + std::to_string(t),
                              t);
    }
    result.boundary_mass = std::max(result.boundary_mass, gamma[0] + gamma[n - 1]);
    double mean = 0.0;
    for (int k = 0; k < n; ++k) mean += gamma[k] * points[k];
    double var = 0.0;
    for (int k = 0; k < n; ++k) {
      const double d = points[k] - mean;
      var += gamma[k] * d * d;
    }
    result.marginals.means[t] = mean;
    result.marginals.variances[t] = var;
    std::swap(beta, beta_next);
  }
  return result;
}

inline ExactMarginals grid_smoother(const HmmModel& model, const ObservationRecord& obs,
                                    double grid_lo, double grid_hi, int n_points) {
  return grid_smoother_full(model, obs, GridSpec{grid_lo, grid_hi, n_points}).marginals;
}

// Default grid per the library convention: n points over mean +/- 6 prior
// standard deviations, widened until the boundary smoothing mass drops
// below 1e-10.
inline ExactMarginals grid_smoother_auto(const HmmModel& model, const ObservationRecord& obs,
                                         double prior_mean, double prior_sd,
                                         int n_points = 2000) {
  double half_width = 6.0 * prior_sd;
  for (int attempt = 0; attempt < 8; ++attempt) {
    GridSpec grid{prior_mean - half_width, prior_mean + half_width, n_points};
    GridSmootherResult res;
    try {
      res = grid_smoother_full(model, obs, grid);
    } catch (const GridCoverageError&) {
      half_width *= 1.5;
      continue;
    }
    if (res.boundary_mass <= 1e-10) {
      return res.marginals;
    }
    half_width *= 1.5;
  }
  throw GridCoverageError("grid_smoother_auto: grid would not cover the posterior support");
}

// Normalized CDF of an unnormalized 1-D log-density, by trapezoidal
// quadrature. Evaluation interpolates linearly between grid nodes.
class GridCdf {
 public:
  GridCdf(const std::function<double(double)>& unnormalized_log_density, const GridSpec& grid) {
    if (grid.n_points < 2) {
      throw ConfigError("grid_conditional_cdf: need at least 2 grid points");
    }
    const int n = grid.n_points;
    points_.resize(n);
    std::vector<double> log_d(n);
    for (int k = 0; k < n; ++k) {
      points_[k] = grid.point(k);
      log_d[k] = unnormalized_log_density(points_[k]);
    }
    density_ = detail::exp_shifted(log_d);
    cdf_.assign(n, 0.0);
    const double h = grid.spacing();
    for (int k = 1; k < n; ++k) {
      cdf_[k] = cdf_[k - 1] + 0.5 * h * (density_[k - 1] + density_[k]);
    }
    const double total = cdf_.back();
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw GridCoverageError("grid_conditional_cdf: density has zero mass on the grid");
    }
    for (double& c : cdf_) c /= total;
  }

  double operator()(double x) const {
    if (x <= points_.front()) return 0.0;
    if (x >= points_.back()) return 1.0;
    const auto it = std::upper_bound(points_.begin(), points_.end(), x);
    const std::size_t k = static_cast<std::size_t>(it - points_.begin());
    const double frac = (x - points_[k - 1]) / (points_[k] - points_[k - 1]);
    return cdf_[k - 1] + frac * (cdf_[k] - cdf_[k - 1]);
  }

 private:
  std::vector<double> points_;
  std::vector<double> density_;
  std::vector<double> cdf_;
};

inline GridCdf grid_conditional_cdf(const std::function<double(double)>& unnormalized_log_density,
                                    const GridSpec& grid) {
  return GridCdf(unnormalized_log_density, grid);
}

// Exact smoothing marginals P(X_t = i | y_{0:T}) of a finite HMM by the
// scaled forward-backward recursions.
inline std::vector<std::vector<double>> finite_forward_backward(const FiniteHmm& fh,
                                                                const std::vector<int>& obs) {
  const int n = fh.n_states;
  const int horizon = static_cast<int>(obs.size());
  if (horizon < 1) throw ConfigError("finite_forward_backward: empty observations");

  std::vector<std::vector<double>> alpha(horizon, std::vector<double>(n));
  for (int i = 0; i < n; ++i) alpha[0][i] = fh.initial[i] * fh.emit(i, obs[0]);
  if (!detail::normalize_mass(alpha[0])) {
    throw AlgorithmError("finite_forward_backward: zero mass at t=0");
  }
  for (int t = 1; t < horizon; ++t) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += alpha[t - 1][i] * fh.trans(i, j);
      alpha[t][j] = acc * fh.emit(j, obs[t]);
    }
    if (!detail::normalize_mass(alpha[t])) {
      throw AlgorithmError("finite_forward_backward: zero mass at t=" + std::to_string(t));
    }
  }

  std::vector<std::vector<double>> gamma(horizon, std::vector<double>(n));
  std::vector<double> beta(n, 1.0), beta_prev(n);
  for (int t = horizon - 1; t >= 0; --t) {
    if (t < horizon - 1) {
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
          acc += fh.trans(i, j) * fh.emit(j, obs[t + 1]) * beta_prev[j];
        }
        beta[i] = acc;
      }
      detail::normalize_mass(beta);
    }
    for (int i = 0; i < n; ++i) gamma[t][i] = alpha[t][i] * beta[i];
    if (!detail::normalize_mass(gamma[t])) {
      throw AlgorithmError("finite_forward_backward: zero smoothing mass at t=" +
                           std::to_string(t));
    }
    std::swap(beta, beta_prev);
  }
  return gamma;
}

// Exact posterior moments of a path functional of a small finite HMM, by
// enumeration of every state path. Intended for oracle use at desk scale.
struct PathFunctionalMoments {
  double mean = 0.0;
  double variance = 0.0;
};

inline PathFunctionalMoments finite_exact_path_moments(
    const FiniteHmm& fh, const std::vector<int>& obs,
    const std::function<double(std::span<const int>)>& h) {
  const int n = fh.n_states;
  const int horizon = static_cast<int>(obs.size());
  double total_paths = std::pow(static_cast<double>(n), horizon);
  if (total_paths > 2e7) {
    throw ConfigError("finite_exact_path_moments: state space too large to enumerate");
  }
  const auto n_paths = static_cast<std::int64_t>(total_paths);
  std::vector<int> path(horizon);
  double mass = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::int64_t code = 0; code < n_paths; ++code) {
    std::int64_t c = code;
    for (int t = 0; t < horizon; ++t) {
      path[t] = static_cast<int>(c % n);
      c /= n;
    }
    double p = fh.initial[path[0]] * fh.emit(path[0], obs[0]);
    for (int t = 1; t < horizon; ++t) {
      p *= fh.trans(path[t - 1], path[t]) * fh.emit(path[t], obs[t]);
    }
    const double v = h(path);
    mass += p;
    m1 += p * v;
    m2 += p * v * v;
  }
  if (!(mass > 0.0)) {
    throw AlgorithmError("finite_exact_path_moments: observations have zero likelihood");
  }
  PathFunctionalMoments out;
  out.mean = m1 / mass;
  out.variance = m2 / mass - out.mean * out.mean;
  return out;
}

// Mean vector and Var(sum_t X_t) of the LGM path posterior, from its
// tridiagonal precision matrix. Independent of the Kalman recursions.
struct LgmPathPosterior {
  std::vector<double> means;
  double sum_variance = 0.0;
};

namespace detail {
// Solves the symmetric tridiagonal system (diag, off) z = rhs in place.
inline std::vector<double> solve_tridiagonal(std::vector<double> diag,
                                             const std::vector<double>& off,
                                             std::vector<double> rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = off[i - 1] / diag[i - 1];
    diag[i] -= w * off[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  std::vector<double> z(n);
  z[n - 1] = rhs[n - 1] / diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) {
    z[i] = (rhs[i] - off[i] * z[i + 1]) / diag[i];
  }
  return z;
}
}  // namespace detail

inline LgmPathPosterior lgm_path_posterior(const LgmParams& params,
                                           const ObservationRecord& obs) {
  validate(params);
  const int horizon = obs.horizon();
  const double phi = params.phi;
  const double su2 = params.sigma_u * params.sigma_u;
  const double sv2 = params.sigma_v * params.sigma_v;
  const double p0 = params.initial_variance();

  std::vector<double> diag(horizon), off(std::max(horizon - 1, 0)), rhs(horizon);
  for (int t = 0; t < horizon; ++t) {
    double d = 1.0 / sv2;
    d += (t == 0) ? 1.0 / p0 : 1.0 / su2;
    if (t < horizon - 1) d += phi * phi / su2;
    diag[t] = d;
    rhs[t] = obs.observations[t] / sv2;
    if (t < horizon - 1) off[t] = -phi / su2;
  }
  LgmPathPosterior out;
  out.means = detail::solve_tridiagonal(diag, off, rhs);
  const auto z = detail::solve_tridiagonal(diag, off, std::vector<double>(horizon, 1.0));
  for (double v : z) out.sum_variance += v;
  return out;
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_EXACT_HPP_
