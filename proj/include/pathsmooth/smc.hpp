#ifndef PATHSMOOTH_SMC_HPP_
#define PATHSMOOTH_SMC_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pathsmooth/common.hpp"
#include "pathsmooth/hmm.hpp"
#include "pathsmooth/rng.hpp"

namespace pathsmooth {

// N weighted particle paths of length T+1. Log-weights are normalized so
// that the weights sum to one.
struct PathEnsemble {
  int n_particles = 0;
  int horizon = 0;
  int state_dim = 1;
  std::vector<double> states;       // [particle][time][component]
  std::vector<double> log_weights;  // length n_particles, normalized

  static PathEnsemble zeros(int n_particles, int horizon, int state_dim = 1) {
    PathEnsemble e;
    e.n_particles = n_particles;
    e.horizon = horizon;
    e.state_dim = state_dim;
    e.states.assign(static_cast<std::size_t>(n_particles) * horizon * state_dim, 0.0);
    e.log_weights.assign(n_particles, -std::log(static_cast<double>(n_particles)));
    return e;
  }

  double* state_ptr(int i, int t) {
    return states.data() + (static_cast<std::size_t>(i) * horizon + t) * state_dim;
  }
  const double* state_ptr(int i, int t) const {
    return states.data() + (static_cast<std::size_t>(i) * horizon + t) * state_dim;
  }
  StateRef state(int i, int t) const { return StateRef(state_ptr(i, t), state_dim); }
  StateOut state_out(int i, int t) { return StateOut(state_ptr(i, t), state_dim); }

  // Full path of particle i as a flat (horizon * state_dim) view.
  std::span<const double> path(int i) const {
    return std::span<const double>(
        states.data() + static_cast<std::size_t>(i) * horizon * state_dim,
        static_cast<std::size_t>(horizon) * state_dim);
  }

  std::vector<double> weights() const {
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i]);
    return w;
  }

  // Weighted estimate of the smoothing mean of component 0 at time t.
  double weighted_mean(int t) const {
    double acc = 0.0;
    for (int i = 0; i < n_particles; ++i) {
      acc += std::exp(log_weights[i]) * state_ptr(i, t)[0];
    }
    return acc;
  }
};

inline void normalize_log_weights(std::vector<double>& log_weights) {
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) {
    throw AlgorithmError("normalize_log_weights: total weight is zero or non-finite");
  }
  for (double& lw : log_weights) lw -= lse;
}

// One time slice of a forward particle filter.
struct FilterFrame {
  std::vector<double> particles;        // n_particles x state_dim
  std::vector<double> log_weights;      // normalized
  std::vector<std::int32_t> ancestors;  // empty at t = 0

  int size() const { return static_cast<int>(log_weights.size()); }
};

enum class ResamplePolicy { kEveryStep, kNever };

namespace detail {

inline void check_collapse(const std::vector<double>& log_weights, int t) {
  for (double lw : log_weights) {
    if (std::isnan(lw)) {
      throw AlgorithmError("particle filter: NaN weight at t=" + std::to_string(t));
    }
    if (lw > -std::numeric_limits<double>::infinity()) return;
  }
  throw FilterCollapseError(t);
}

}  // namespace detail

// Bootstrap particle filter: propose from the transition kernel, weight by
// the observation density, multinomial resampling per policy. O(N T).
inline std::vector<FilterFrame> bootstrap_filter(const HmmModel& model,
                                                 const ObservationRecord& obs, int n_particles,
                                                 Rng& rng,
                                                 ResamplePolicy policy = ResamplePolicy::kEveryStep) {
  if (n_particles < 1) throw ConfigError("bootstrap_filter: need at least one particle");
  const int horizon = obs.horizon();
  const int dim = model.state_dim;

  std::vector<Rng> streams;
  streams.reserve(n_particles);
  for (int i = 0; i < n_particles; ++i) streams.push_back(rng.stream(i));

  std::vector<FilterFrame> frames(horizon);
  for (auto& f : frames) {
    f.particles.resize(static_cast<std::size_t>(n_particles) * dim);
    f.log_weights.resize(n_particles);
  }

  for (int i = 0; i < n_particles; ++i) {
    StateOut x(frames[0].particles.data() + static_cast<std::size_t>(i) * dim, dim);
    model.sample_initial(streams[i], x);
    frames[0].log_weights[i] = model.log_observation_density(x, obs.observations[0]);
  }
  detail::check_collapse(frames[0].log_weights, 0);
  normalize_log_weights(frames[0].log_weights);

  for (int t = 1; t < horizon; ++t) {
    FilterFrame& prev = frames[t - 1];
    FilterFrame& cur = frames[t];
    cur.ancestors.resize(n_particles);
    const bool resample = policy == ResamplePolicy::kEveryStep;
    std::vector<double> cdf;
    if (resample) {
      auto w = std::vector<double>(prev.log_weights.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(prev.log_weights[i]);
      cdf = cdf_from_weights(w);
    }
    for (int i = 0; i < n_particles; ++i) {
      cur.ancestors[i] =
          resample ? static_cast<std::int32_t>(sample_from_cdf(cdf, rng.uniform()))
                   : static_cast<std::int32_t>(i);
    }
    for (int i = 0; i < n_particles; ++i) {
      const int a = cur.ancestors[i];
      StateRef xa(prev.particles.data() + static_cast<std::size_t>(a) * dim, dim);
      StateOut x(cur.particles.data() + static_cast<std::size_t>(i) * dim, dim);
      model.sample_transition(xa, streams[i], x);
      const double lg = model.log_observation_density(x, obs.observations[t]);
      cur.log_weights[i] = resample ? lg : prev.log_weights[i] + lg;
    }
    detail::check_collapse(cur.log_weights, t);
    normalize_log_weights(cur.log_weights);
  }
  return frames;
}

struct GaussianMoments {
  double mean = 0.0;
  double variance = 1.0;
};

// Moments of p(x_t | x_{t-1} = x_prev, y_t) for the LGM, the locally
// optimal proposal.
inline GaussianMoments lgm_optimal_proposal(const LgmParams& params, double x_prev, double y) {
  const double su2 = params.sigma_u * params.sigma_u;
  const double sv2 = params.sigma_v * params.sigma_v;
  const double precision = 1.0 / su2 + 1.0 / sv2;
  return {(params.phi * x_prev / su2 + y / sv2) / precision, 1.0 / precision};
}

// Fully adapted filter for the LGM: proposes from p(x_t | x_{t-1}, y_t)
// and carries the predictive weights p(y_t | x_{t-1}).
inline std::vector<FilterFrame> fully_adapted_filter_lgm(const LgmParams& params,
                                                         const ObservationRecord& obs,
                                                         int n_particles, Rng& rng,
                                                         ResamplePolicy policy = ResamplePolicy::kEveryStep) {
  validate(params);
  if (n_particles < 1) throw ConfigError("fully_adapted_filter_lgm: need at least one particle");
  const int horizon = obs.horizon();
  const double su2 = params.sigma_u * params.sigma_u;
  const double sv2 = params.sigma_v * params.sigma_v;
  const double p0 = params.initial_variance();

  std::vector<Rng> streams;
  streams.reserve(n_particles);
  for (int i = 0; i < n_particles; ++i) streams.push_back(rng.stream(i));

  std::vector<FilterFrame> frames(horizon);
  for (auto& f : frames) {
    f.particles.resize(n_particles);
    f.log_weights.resize(n_particles);
  }

  // t = 0: propose from p(x_0 | y_0); the marginal weight p(y_0) is
  // particle-independent, so weights start uniform.
  {
    const double prec0 = 1.0 / p0 + 1.0 / sv2;
    const double mean0 = (obs.observations[0] / sv2) / prec0;
    const double sd0 = std::sqrt(1.0 / prec0);
    for (int i = 0; i < n_particles; ++i) {
      frames[0].particles[i] = streams[i].normal(mean0, sd0);
      frames[0].log_weights[i] = 0.0;
    }
    normalize_log_weights(frames[0].log_weights);
  }

  for (int t = 1; t < horizon; ++t) {
    FilterFrame& prev = frames[t - 1];
    FilterFrame& cur = frames[t];
    cur.ancestors.resize(n_particles);
    const bool resample = policy == ResamplePolicy::kEveryStep;
    std::vector<double> cdf;
    if (resample) {
      auto w = std::vector<double>(prev.log_weights.size());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(prev.log_weights[i]);
      cdf = cdf_from_weights(w);
    }
    const double y = obs.observations[t];
    for (int i = 0; i < n_particles; ++i) {
      const int a = resample ? static_cast<int>(sample_from_cdf(cdf, rng.uniform())) : i;
      cur.ancestors[i] = static_cast<std::int32_t>(a);
      const auto prop = lgm_optimal_proposal(params, prev.particles[a], y);
      cur.particles[i] = streams[i].normal(prop.mean, std::sqrt(prop.variance));
      const double predictive =
          log_normal_density(y, params.phi * prev.particles[a], su2 + sv2);
      cur.log_weights[i] = resample ? predictive : prev.log_weights[i] + predictive;
    }
    detail::check_collapse(cur.log_weights, t);
    normalize_log_weights(cur.log_weights);
  }
  return frames;
}

// Reconstructs the N stored paths of a forward filter by tracing ancestor
// indices back from the final frame. Weights are the final-frame weights.
inline PathEnsemble filter_smoother(const std::vector<FilterFrame>& frames, int state_dim = 1) {
  if (frames.empty()) throw ConfigError("filter_smoother: no frames");
  const int horizon = static_cast<int>(frames.size());
  const int n = frames.back().size();
  PathEnsemble e = PathEnsemble::zeros(n, horizon, state_dim);
  e.log_weights = frames.back().log_weights;

  for (int i = 0; i < n; ++i) {
    int idx = i;
    for (int t = horizon - 1; t >= 0; --t) {
      const FilterFrame& f = frames[t];
      if (idx < 0 || idx >= f.size()) {
        throw AlgorithmError("filter_smoother: malformed ancestry at t=" + std::to_string(t));
      }
      const double* src = f.particles.data() + static_cast<std::size_t>(idx) * state_dim;
      std::copy(src, src + state_dim, e.state_ptr(i, t));
      if (t > 0) {
        if (f.ancestors.empty()) {
          throw AlgorithmError("filter_smoother: missing ancestors at t=" + std::to_string(t));
        }
        idx = f.ancestors[idx];
      }
    }
  }
  return e;
}

// Multinomial resampling of whole paths: N iid categorical draws by
// weight; output weights are uniform. Unbiased for any path functional.
inline PathEnsemble multinomial_resample(const PathEnsemble& in, Rng& rng) {
  const int n = in.n_particles;
  PathEnsemble out = PathEnsemble::zeros(n, in.horizon, in.state_dim);
  const auto cdf = cdf_from_weights(in.weights());
  const std::size_t row = static_cast<std::size_t>(in.horizon) * in.state_dim;
  for (int i = 0; i < n; ++i) {
    const std::size_t src = sample_from_cdf(cdf, rng.uniform());
    std::copy(in.states.begin() + src * row, in.states.begin() + (src + 1) * row,
              out.states.begin() + static_cast<std::size_t>(i) * row);
  }
  return out;
}

// FFBSi: samples n_out equally weighted backward trajectories through the
// forward-filter particles. The backward index at each step is drawn by
// accept-reject against `transition_density_bound` (O(N) per time step),
// falling back to exact categorical sampling after `max_rejections`
// attempts so the worst case stays bounded without changing the law.
inline PathEnsemble ffbsi(const std::vector<FilterFrame>& frames, const HmmModel& model,
                          int n_out, Rng& rng, double transition_density_bound,
                          int max_rejections = 100) {
  if (frames.empty()) throw ConfigError("ffbsi: no frames");
  if (n_out < 1) throw ConfigError("ffbsi: need at least one output trajectory");
  if (!(transition_density_bound > 0.0)) {
    throw ConfigError("ffbsi: transition density bound must be positive");
  }
  const int horizon = static_cast<int>(frames.size());
  const int dim = model.state_dim;
  const double log_bound = std::log(transition_density_bound);

  std::vector<std::vector<double>> cdfs(horizon);
  for (int t = 0; t < horizon; ++t) {
    std::vector<double> w(frames[t].log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(frames[t].log_weights[i]);
    cdfs[t] = cdf_from_weights(w);
  }

  std::vector<Rng> streams;
  streams.reserve(n_out);
  for (int j = 0; j < n_out; ++j) streams.push_back(rng.stream(j));

  PathEnsemble e = PathEnsemble::zeros(n_out, horizon, dim);
  std::vector<int> current(n_out);
  for (int j = 0; j < n_out; ++j) {
    const int idx = static_cast<int>(sample_from_cdf(cdfs[horizon - 1], streams[j].uniform()));
    current[j] = idx;
    const double* src =
        frames[horizon - 1].particles.data() + static_cast<std::size_t>(idx) * dim;
    std::copy(src, src + dim, e.state_ptr(j, horizon - 1));
  }

  std::vector<double> probs;
  for (int t = horizon - 2; t >= 0; --t) {
    const FilterFrame& f = frames[t];
    const int n = f.size();
    for (int j = 0; j < n_out; ++j) {
      Rng& srng = streams[j];
      const StateRef next = e.state(j, t + 1);
      int chosen = -1;
      for (int attempt = 0; attempt < max_rejections; ++attempt) {
        const int i = static_cast<int>(sample_from_cdf(cdfs[t], srng.uniform()));
        const StateRef xi(f.particles.data() + static_cast<std::size_t>(i) * dim, dim);
        const double log_ratio = model.log_transition_density(xi, next) - log_bound;
        if (log_ratio > 1e-9) {
          throw ContractError(
              "ffbsi: transition density exceeds the supplied bound at t=" + std::to_string(t));
        }
        if (std::log(srng.uniform_pos()) < log_ratio) {
          chosen = i;
          break;
        }
      }
      if (chosen < 0) {
        // Exact categorical fallback over w_t^i * m(xi_t^i, xi_{t+1}).
        probs.assign(n, 0.0);
        for (int i = 0; i < n; ++i) {
          const StateRef xi(f.particles.data() + static_cast<std::size_t>(i) * dim, dim);
          probs[i] = std::exp(f.log_weights[i] + model.log_transition_density(xi, next));
        }
        double total = 0.0;
        for (double p : probs) total += p;
        if (!(total > 0.0)) {
          throw AlgorithmError("ffbsi: zero backward mass at t=" + std::to_string(t));
        }
        for (double& p : probs) p /= total;
        chosen = static_cast<int>(sample_from_cdf(cdf_from_weights(probs), srng.uniform()));
      }
      current[j] = chosen;
      const double* src = f.particles.data() + static_cast<std::size_t>(chosen) * dim;
      std::copy(src, src + dim, e.state_ptr(j, t));
    }
  }
  return e;
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_SMC_HPP_
