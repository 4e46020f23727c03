#ifndef PATHSMOOTH_HMM_HPP_
#define PATHSMOOTH_HMM_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pathsmooth/common.hpp"
#include "pathsmooth/rng.hpp"

namespace pathsmooth {

inline double log_normal_density(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + d * d / variance);
}

// A hidden Markov model through its kernel densities and samplers. All
// densities are in log space. States are fixed-length real vectors of
// length state_dim; observations are scalars. Immutable after
// construction and safe to share across threads; all randomness flows
// through caller-supplied Rng handles.
struct HmmModel {
  int state_dim = 1;
  std::function<double(StateRef)> log_initial_density;
  std::function<double(StateRef, StateRef)> log_transition_density;
  std::function<double(StateRef, double)> log_observation_density;
  std::function<void(Rng&, StateOut)> sample_initial;
  std::function<void(StateRef, Rng&, StateOut)> sample_transition;
  std::function<double(StateRef, Rng&)> sample_observation;
};

// Linear Gaussian model:
//   X_{t+1} = phi X_t + sigma_u U_t,   Y_t = X_t + sigma_v V_t,
// with X_0 drawn from the stationary distribution.
struct LgmParams {
  double phi = 0.9;
  double sigma_u = 0.6;
  double sigma_v = 1.0;

  double initial_variance() const { return sigma_u * sigma_u / (1.0 - phi * phi); }
};

// Stochastic volatility model:
//   X_{t+1} = alpha X_t + sigma U_{t+1},   Y_t = beta exp(X_t / 2) V_t,
// with X_0 drawn from the stationary distribution.
struct StoVolParams {
  double alpha = 0.3;
  double sigma = 0.5;
  double beta = 1.0;

  double initial_variance() const { return sigma * sigma / (1.0 - alpha * alpha); }
};

inline void validate(const LgmParams& p) {
  if (!(std::abs(p.phi) < 1.0)) {
    throw ConfigError("lgm: |phi| must be < 1, got " + std::to_string(p.phi));
  }
  if (!(p.sigma_u > 0.0) || !(p.sigma_v > 0.0)) {
    throw ConfigError("lgm: sigma_u and sigma_v must be positive");
  }
}

inline void validate(const StoVolParams& p) {
  if (!(std::abs(p.alpha) < 1.0)) {
    throw ConfigError("stovol: |alpha| must be < 1, got " + std::to_string(p.alpha));
  }
  if (!(p.sigma > 0.0) || !(p.beta > 0.0)) {
    throw ConfigError("stovol: sigma and beta must be positive");
  }
}

inline HmmModel make_lgm(const LgmParams& params) {
  validate(params);
  const double p0 = params.initial_variance();
  const double su2 = params.sigma_u * params.sigma_u;
  const double sv2 = params.sigma_v * params.sigma_v;
  const double phi = params.phi;
  HmmModel model;
  model.state_dim = 1;
  model.log_initial_density = [p0](StateRef x) {
    return log_normal_density(x[0], 0.0, p0);
  };
  model.log_transition_density = [phi, su2](StateRef x, StateRef xn) {
    return log_normal_density(xn[0], phi * x[0], su2);
  };
  model.log_observation_density = [sv2](StateRef x, double y) {
    return log_normal_density(y, x[0], sv2);
  };
  model.sample_initial = [p0](Rng& rng, StateOut out) {
    out[0] = rng.normal(0.0, std::sqrt(p0));
  };
  model.sample_transition = [phi, su = params.sigma_u](StateRef x, Rng& rng, StateOut out) {
    out[0] = rng.normal(phi * x[0], su);
  };
  model.sample_observation = [sv = params.sigma_v](StateRef x, Rng& rng) {
    return rng.normal(x[0], sv);
  };
  return model;
}

inline HmmModel make_stovol(const StoVolParams& params) {
  validate(params);
  const double p0 = params.initial_variance();
  const double s2 = params.sigma * params.sigma;
  const double alpha = params.alpha;
  const double beta = params.beta;
  HmmModel model;
  model.state_dim = 1;
  model.log_initial_density = [p0](StateRef x) {
    return log_normal_density(x[0], 0.0, p0);
  };
  model.log_transition_density = [alpha, s2](StateRef x, StateRef xn) {
    return log_normal_density(xn[0], alpha * x[0], s2);
  };
  model.log_observation_density = [beta](StateRef x, double y) {
    // y | x ~ Normal(0, beta^2 exp(x))
    return log_normal_density(y, 0.0, beta * beta * std::exp(x[0]));
  };
  model.sample_initial = [p0](Rng& rng, StateOut out) {
    out[0] = rng.normal(0.0, std::sqrt(p0));
  };
  model.sample_transition = [alpha, s = params.sigma](StateRef x, Rng& rng, StateOut out) {
    out[0] = rng.normal(alpha * x[0], s);
  };
  model.sample_observation = [beta](StateRef x, Rng& rng) {
    return rng.normal(0.0, beta * std::exp(x[0] / 2.0));
  };
  return model;
}

// Small discrete-state model. States and observations are indices stored
// as doubles, so the same smoothers run unchanged; exact enumeration over
// its paths is the oracle substrate for correctness tests.
struct FiniteHmm {
  int n_states = 0;
  int n_obs = 0;
  std::vector<double> transition;  // n_states x n_states, row-major
  std::vector<double> emission;    // n_states x n_obs, row-major
  std::vector<double> initial;     // n_states

  double trans(int i, int j) const { return transition[i * n_states + j]; }
  double emit(int i, int y) const { return emission[i * n_obs + y]; }
};

namespace detail {
inline void check_probability_rows(const std::vector<double>& m, int rows, int cols,
                                   const std::string& name) {
  if (static_cast<int>(m.size()) != rows * cols) {
    throw ConfigError("finite hmm: " + name + " has wrong size");
  }
  for (int i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double v = m[i * cols + j];
      if (!(v >= 0.0)) {
        throw ConfigError("finite hmm: negative entry in " + name);
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("finite hmm: row " + std::to_string(i) + " of " + name +
                        " sums to " + std::to_string(sum) + ", not 1");
    }
  }
}
}  // namespace detail

inline HmmModel make_finite_hmm(const FiniteHmm& spec) {
  if (spec.n_states < 1 || spec.n_obs < 1) {
    throw ConfigError("finite hmm: need at least one state and one observation symbol");
  }
  detail::check_probability_rows(spec.transition, spec.n_states, spec.n_states, "transition");
  detail::check_probability_rows(spec.emission, spec.n_states, spec.n_obs, "emission");
  detail::check_probability_rows(spec.initial, 1, spec.n_states, "initial");

  auto fh = std::make_shared<const FiniteHmm>(spec);
  auto draw_row = [](const std::vector<double>& probs, int cols, int row, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (int j = 0; j < cols - 1; ++j) {
      acc += probs[row * cols + j];
      if (u < acc) return j;
    }
    return cols - 1;
  };

  HmmModel model;
  model.state_dim = 1;
  model.log_initial_density = [fh](StateRef x) {
    return std::log(fh->initial[static_cast<int>(x[0])]);
  };
  model.log_transition_density = [fh](StateRef x, StateRef xn) {
    return std::log(fh->trans(static_cast<int>(x[0]), static_cast<int>(xn[0])));
  };
  model.log_observation_density = [fh](StateRef x, double y) {
    return std::log(fh->emit(static_cast<int>(x[0]), static_cast<int>(y)));
  };
  model.sample_initial = [fh, draw_row](Rng& rng, StateOut out) {
    out[0] = draw_row(fh->initial, fh->n_states, 0, rng);
  };
  model.sample_transition = [fh, draw_row](StateRef x, Rng& rng, StateOut out) {
    out[0] = draw_row(fh->transition, fh->n_states, static_cast<int>(x[0]), rng);
  };
  model.sample_observation = [fh, draw_row](StateRef x, Rng& rng) {
    return static_cast<double>(draw_row(fh->emission, fh->n_obs, static_cast<int>(x[0]), rng));
  };
  return model;
}

// T+1 observations y_{0:T} with the latent states that generated them.
struct ObservationRecord {
  std::vector<double> observations;
  std::optional<std::vector<double>> true_states;  // kept for 1-D models
  std::uint64_t seed = 0;

  int horizon() const { return static_cast<int>(observations.size()); }
};

// Draws a state path from the model law and observations conditionally on
// it. Deterministic given the rng stream.
inline ObservationRecord simulate(const HmmModel& model, int horizon, Rng& rng,
                                  std::uint64_t seed_tag = 0) {
  if (horizon < 1) {
    throw ConfigError("simulate: horizon must be >= 1");
  }
  const int dim = model.state_dim;
  std::vector<double> state(dim), next(dim);
  ObservationRecord rec;
  rec.seed = seed_tag;
  rec.observations.resize(horizon);
  std::vector<double> states_1d;
  if (dim == 1) states_1d.resize(horizon);

  model.sample_initial(rng, state);
  rec.observations[0] = model.sample_observation(state, rng);
  if (dim == 1) states_1d[0] = state[0];
  for (int t = 1; t < horizon; ++t) {
    model.sample_transition(state, rng, next);
    std::swap(state, next);
    rec.observations[t] = model.sample_observation(state, rng);
    if (dim == 1) states_1d[t] = state[0];
  }
  if (dim == 1) rec.true_states = std::move(states_1d);
  return rec;
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_HMM_HPP_
