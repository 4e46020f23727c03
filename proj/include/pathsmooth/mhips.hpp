#ifndef PATHSMOOTH_MHIPS_HPP_
#define PATHSMOOTH_MHIPS_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pathsmooth/common.hpp"
#include "pathsmooth/exact.hpp"
#include "pathsmooth/hmm.hpp"
#include "pathsmooth/rng.hpp"
#include "pathsmooth/smc.hpp"

namespace pathsmooth {

// Per-time proposal kernels r_t for the single-site backward updates,
// with matching density evaluators. Interior kernels see both neighbors
// (u at t-1, w at t+1); the endpoint kernels see the single available
// neighbor. Density evaluators may be unnormalized as long as the missing
// constant does not depend on the proposed point.
struct GibbsKernelFamily {
  int state_dim = 1;
  std::function<void(int, StateRef, StateRef, Rng&, StateOut)> propose_interior;
  std::function<void(StateRef, Rng&, StateOut)> propose_left;   // r_0(w; .)
  std::function<void(StateRef, Rng&, StateOut)> propose_right;  // r_T(u; .)
  std::function<double(int, StateRef, StateRef, StateRef)> log_density_interior;
  std::function<double(StateRef, StateRef)> log_density_left;
  std::function<double(StateRef, StateRef)> log_density_right;
  // When the proposal is the full conditional every move is accepted;
  // the acceptance test is skipped to avoid spurious rejections from
  // floating-point noise in the ratio.
  bool is_exact_gibbs = false;
  // Optional closed-form log acceptance ratio (t, u, v, w, x); used by
  // Metropolis-within-Gibbs kernels whose ratio simplifies analytically.
  std::function<double(int, StateRef, StateRef, StateRef, StateRef)> log_accept_override;
};

// Acceptance bookkeeping per time index, summed over chains and passes.
struct MhipsTrace {
  std::vector<std::int64_t> proposal_counts;
  std::vector<std::int64_t> acceptance_counts;

  explicit MhipsTrace(int horizon = 0)
      : proposal_counts(horizon, 0), acceptance_counts(horizon, 0) {}
};

// Generic Metropolis-Hastings log acceptance ratio of the single-site
// update at time t: the target factors that involve x_t against the
// proposal density, min'd with zero. u is ignored at t=0 and w at t=T.
inline double log_accept_ratio(int t, StateRef u, StateRef v, StateRef w, StateRef x,
                               const HmmModel& model, const GibbsKernelFamily& kernels,
                               const ObservationRecord& obs) {
  const int last = obs.horizon() - 1;
  const double y = obs.observations[t];
  double num, den;
  if (t == 0) {
    num = model.log_initial_density(x) + model.log_observation_density(x, y) +
          model.log_transition_density(x, w) + kernels.log_density_left(w, v);
    den = model.log_initial_density(v) + model.log_observation_density(v, y) +
          model.log_transition_density(v, w) + kernels.log_density_left(w, x);
  } else if (t == last) {
    num = model.log_transition_density(u, x) + model.log_observation_density(x, y) +
          kernels.log_density_right(u, v);
    den = model.log_transition_density(u, v) + model.log_observation_density(v, y) +
          kernels.log_density_right(u, x);
  } else {
    num = model.log_transition_density(u, x) + model.log_observation_density(x, y) +
          model.log_transition_density(x, w) + kernels.log_density_interior(t, u, w, v);
    den = model.log_transition_density(u, v) + model.log_observation_density(v, y) +
          model.log_transition_density(v, w) + kernels.log_density_interior(t, u, w, x);
  }
  if (std::isnan(num) || std::isnan(den) || den == -std::numeric_limits<double>::infinity()) {
    throw ContractError(
        "log_accept_ratio: current state has zero or undefined posterior density at t=" +
        std::to_string(t));
  }
  return std::min(0.0, num - den);
}

// Runs the N independent Metropolis-within-Gibbs chains over a path
// ensemble, one backward pass at a time. Each pass updates t = T, ..., 0
// in place, so the t+1 neighbor is the current-pass value and the t-1
// neighbor the previous-pass value. Chains draw from per-chain rng
// streams keyed by particle index and never interact.
class MhipsRunner {
 public:
  MhipsRunner(PathEnsemble ensemble, const HmmModel& model, const ObservationRecord& obs,
              const GibbsKernelFamily& kernels, const Rng& base_rng)
      : e_(std::move(ensemble)),
        model_(&model),
        obs_(&obs),
        kernels_(&kernels),
        trace_(e_.horizon),
        candidate_(e_.state_dim) {
    if (e_.horizon != obs.horizon()) {
      throw ConfigError("mhips: ensemble horizon does not match observations");
    }
    if (e_.horizon < 2) {
      throw ConfigError("mhips: horizon must be at least 2 for single-site updates");
    }
    if (e_.state_dim != model.state_dim || e_.state_dim != kernels.state_dim) {
      throw ConfigError("mhips: state dimension mismatch between ensemble, model and kernels");
    }
    chain_rngs_.reserve(e_.n_particles);
    for (int i = 0; i < e_.n_particles; ++i) chain_rngs_.push_back(base_rng.stream(i));
  }

  void run_pass() {
    const int last = e_.horizon - 1;
    StateOut cand(candidate_.data(), e_.state_dim);
    for (int i = 0; i < e_.n_particles; ++i) {
      Rng& rng = chain_rngs_[i];
      for (int t = last; t >= 0; --t) {
        const StateRef v = e_.state(i, t);
        StateRef u, w;
        if (t == 0) {
          w = e_.state(i, 1);
          kernels_->propose_left(w, rng, cand);
        } else if (t == last) {
          u = e_.state(i, last - 1);
          kernels_->propose_right(u, rng, cand);
        } else {
          u = e_.state(i, t - 1);
          w = e_.state(i, t + 1);
          kernels_->propose_interior(t, u, w, rng, cand);
        }
        ++trace_.proposal_counts[t];
        bool accept = true;
        if (!kernels_->is_exact_gibbs) {
          const double lar =
              kernels_->log_accept_override
                  ? std::min(0.0, kernels_->log_accept_override(t, u, v, w, cand))
                  : log_accept_ratio(t, u, v, w, cand, *model_, *kernels_, *obs_);
          accept = std::log(rng.uniform_pos()) < lar;
        }
        if (accept) {
          ++trace_.acceptance_counts[t];
          std::copy(candidate_.begin(), candidate_.end(), e_.state_ptr(i, t));
        }
      }
    }
  }

  const PathEnsemble& ensemble() const { return e_; }
  PathEnsemble take_ensemble() { return std::move(e_); }
  const MhipsTrace& trace() const { return trace_; }

 private:
  PathEnsemble e_;
  const HmmModel* model_;
  const ObservationRecord* obs_;
  const GibbsKernelFamily* kernels_;
  std::vector<Rng> chain_rngs_;
  MhipsTrace trace_;
  std::vector<double> candidate_;
};

// K backward improvement passes over the ensemble. By default the input
// is multinomially resampled first, so the chains start from an
// equal-weight population; the returned ensemble carries the
// post-resampling weights and only the final-pass states.
inline std::pair<PathEnsemble, MhipsTrace> mhips_improve(
    const PathEnsemble& ensemble, const HmmModel& model, const ObservationRecord& obs,
    const GibbsKernelFamily& kernels, int k_passes, Rng& rng, bool resample_first = true) {
  if (k_passes < 0) throw ConfigError("mhips_improve: pass count must be >= 0");
  PathEnsemble start = resample_first ? multinomial_resample(ensemble, rng) : ensemble;
  if (k_passes == 0) {
    return {std::move(start), MhipsTrace(start.horizon)};
  }
  MhipsRunner runner(std::move(start), model, obs, kernels, rng);
  for (int k = 0; k < k_passes; ++k) runner.run_pass();
  MhipsTrace trace = runner.trace();
  return {runner.take_ensemble(), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Kernel families.

// Exact full conditionals of the LGM: every proposal is the Gaussian
// X_t | x_{t-1}, x_{t+1}, y_t, so the acceptance probability is one.
inline GibbsKernelFamily make_gibbs_kernel_lgm(const LgmParams& params,
                                               const ObservationRecord& obs) {
  validate(params);
  const double phi = params.phi;
  const double su2 = params.sigma_u * params.sigma_u;
  const double sv2 = params.sigma_v * params.sigma_v;
  const double p0 = params.initial_variance();
  const std::vector<double> ys = obs.observations;
  const int last = obs.horizon() - 1;

  const double prec_interior = (1.0 + phi * phi) / su2 + 1.0 / sv2;
  const double prec_left = 1.0 / p0 + phi * phi / su2 + 1.0 / sv2;
  const double prec_right = 1.0 / su2 + 1.0 / sv2;

  auto interior_mean = [phi, su2, sv2, prec_interior, ys](int t, double u, double w) {
    return (phi * (u + w) / su2 + ys[t] / sv2) / prec_interior;
  };
  auto left_mean = [phi, su2, sv2, prec_left, ys](double w) {
    return (phi * w / su2 + ys[0] / sv2) / prec_left;
  };
  auto right_mean = [phi, su2, sv2, prec_right, ys, last](double u) {
    return (phi * u / su2 + ys[last] / sv2) / prec_right;
  };

  GibbsKernelFamily k;
  k.state_dim = 1;
  k.is_exact_gibbs = true;
  k.propose_interior = [interior_mean, prec_interior](int t, StateRef u, StateRef w, Rng& rng,
                                                      StateOut out) {
    out[0] = rng.normal(interior_mean(t, u[0], w[0]), std::sqrt(1.0 / prec_interior));
  };
  k.propose_left = [left_mean, prec_left](StateRef w, Rng& rng, StateOut out) {
    out[0] = rng.normal(left_mean(w[0]), std::sqrt(1.0 / prec_left));
  };
  k.propose_right = [right_mean, prec_right](StateRef u, Rng& rng, StateOut out) {
    out[0] = rng.normal(right_mean(u[0]), std::sqrt(1.0 / prec_right));
  };
  k.log_density_interior = [interior_mean, prec_interior](int t, StateRef u, StateRef w,
                                                          StateRef x) {
    return log_normal_density(x[0], interior_mean(t, u[0], w[0]), 1.0 / prec_interior);
  };
  k.log_density_left = [left_mean, prec_left](StateRef w, StateRef x) {
    return log_normal_density(x[0], left_mean(w[0]), 1.0 / prec_left);
  };
  k.log_density_right = [right_mean, prec_right](StateRef u, StateRef x) {
    return log_normal_density(x[0], right_mean(u[0]), 1.0 / prec_right);
  };
  return k;
}

// Exposure-weight exponent used by the stochastic-volatility proposals:
// gamma = (|y|/beta)^2 below the |y| = beta knee and |y|/beta above it.
inline double stovol_gamma(double y, double beta) {
  const double r = std::abs(y) / beta;
  return r <= 1.0 ? r * r : r;
}

struct StoVolProposal {
  double mean = 0.0;
  double sd = 1.0;
  double gamma = 0.0;
};

inline StoVolProposal stovol_interior_proposal(const StoVolParams& p, double u, double w,
                                               double y) {
  const double gamma = stovol_gamma(y, p.beta);
  const double a2 = 1.0 + p.alpha * p.alpha;
  const double s2 = p.sigma * p.sigma;
  StoVolProposal out;
  out.gamma = gamma;
  out.mean = p.alpha * (u + w) / a2 - (s2 / 2.0) * (1.0 - gamma) / a2;
  out.sd = std::sqrt(s2 / a2);
  return out;
}

// Single-neighbor analogue for t=0 (neighbor = x_1) and t=T (neighbor =
// x_{T-1}); for the stationary initial law the completed square has
// variance sigma^2 at both ends.
inline StoVolProposal stovol_endpoint_proposal(const StoVolParams& p, double neighbor,
                                               double y) {
  const double gamma = stovol_gamma(y, p.beta);
  const double s2 = p.sigma * p.sigma;
  StoVolProposal out;
  out.gamma = gamma;
  out.mean = p.alpha * neighbor - (s2 / 2.0) * (1.0 - gamma);
  out.sd = p.sigma;
  return out;
}

// Log acceptance probability of the rejection step: the candidate x drawn
// from the gamma-shifted Gaussian is accepted with probability
// (|y|/(sqrt(gamma) beta))^gamma exp{-(gamma/2)(x-1) - e^{-x} y^2/(2 beta^2)}.
inline double stovol_rejection_log_accept(double x, double y, double gamma, double beta) {
  if (gamma == 0.0) return 0.0;  // y = 0: the proposal is already exact
  const double y2b2 = y * y / (beta * beta);
  return 0.5 * gamma * std::log(y2b2 / gamma) + 0.5 * gamma - 0.5 * gamma * x -
         std::exp(-x) * y2b2 / 2.0;
}

namespace detail {

inline double stovol_rejection_draw(const StoVolProposal& prop, double y, double beta,
                                    Rng& rng, long rejection_cap) {
  for (long attempt = 0; attempt < rejection_cap; ++attempt) {
    const double x = rng.normal(prop.mean, prop.sd);
    const double la = stovol_rejection_log_accept(x, y, prop.gamma, beta);
    if (la > 1e-9) {
      throw EnvelopeViolationError(
          "stovol gibbs: rejection acceptance probability exceeds 1 (log = " +
          std::to_string(la) + ")");
    }
    if (std::log(rng.uniform_pos()) < la) return x;
  }
  throw AlgorithmError("stovol gibbs: rejection sampler exceeded its attempt cap");
}

}  // namespace detail

// Exact Gibbs sampling for the stochastic volatility model, by rejection
// against the gamma-shifted Gaussian envelope. The full conditional has no
// closed form; the density evaluators return the unnormalized target
// slice, whose (u, w)-dependent constant cancels in acceptance ratios.
inline GibbsKernelFamily make_gibbs_kernel_stovol(const StoVolParams& params,
                                                  const ObservationRecord& obs,
                                                  long rejection_cap = 1000000) {
  validate(params);
  const StoVolParams p = params;
  const std::vector<double> ys = obs.observations;
  const int last = obs.horizon() - 1;
  const double p0 = params.initial_variance();
  const double s2 = p.sigma * p.sigma;
  const double b2 = p.beta * p.beta;

  // Unnormalized log target slices, shared by samplers and evaluators.
  auto log_slice_interior = [p, ys, s2, b2](int t, double u, double w, double x) {
    const double du = x - p.alpha * u;
    const double dw = w - p.alpha * x;
    return -du * du / (2.0 * s2) - dw * dw / (2.0 * s2) - x / 2.0 -
           std::exp(-x) * ys[t] * ys[t] / (2.0 * b2);
  };
  auto log_slice_left = [p, ys, s2, b2, p0](double w, double x) {
    const double dw = w - p.alpha * x;
    return -x * x / (2.0 * p0) - dw * dw / (2.0 * s2) - x / 2.0 -
           std::exp(-x) * ys[0] * ys[0] / (2.0 * b2);
  };
  auto log_slice_right = [p, ys, s2, b2, last](double u, double x) {
    const double du = x - p.alpha * u;
    return -du * du / (2.0 * s2) - x / 2.0 -
           std::exp(-x) * ys[last] * ys[last] / (2.0 * b2);
  };

  GibbsKernelFamily k;
  k.state_dim = 1;
  k.is_exact_gibbs = true;
  k.propose_interior = [p, ys, rejection_cap](int t, StateRef u, StateRef w, Rng& rng,
                                              StateOut out) {
    const auto prop = stovol_interior_proposal(p, u[0], w[0], ys[t]);
    out[0] = detail::stovol_rejection_draw(prop, ys[t], p.beta, rng, rejection_cap);
  };
  k.propose_left = [p, ys, rejection_cap](StateRef w, Rng& rng, StateOut out) {
    const auto prop = stovol_endpoint_proposal(p, w[0], ys[0]);
    out[0] = detail::stovol_rejection_draw(prop, ys[0], p.beta, rng, rejection_cap);
  };
  k.propose_right = [p, ys, last, rejection_cap](StateRef u, Rng& rng, StateOut out) {
    const auto prop = stovol_endpoint_proposal(p, u[0], ys[last]);
    out[0] = detail::stovol_rejection_draw(prop, ys[last], p.beta, rng, rejection_cap);
  };
  k.log_density_interior = [log_slice_interior](int t, StateRef u, StateRef w, StateRef x) {
    return log_slice_interior(t, u[0], w[0], x[0]);
  };
  k.log_density_left = [log_slice_left](StateRef w, StateRef x) {
    return log_slice_left(w[0], x[0]);
  };
  k.log_density_right = [log_slice_right](StateRef u, StateRef x) {
    return log_slice_right(u[0], x[0]);
  };
  return k;
}

// Metropolis-within-Gibbs for the stochastic volatility model: the same
// gamma-shifted Gaussian proposal, accepted through the closed-form ratio
// exp{-(gamma/2)(x - v) - (e^{-x} - e^{-v}) y^2 / (2 beta^2)} ^ 1 instead
// of a rejection loop.
inline GibbsKernelFamily make_mwg_kernel_stovol(const StoVolParams& params,
                                                const ObservationRecord& obs) {
  validate(params);
  const StoVolParams p = params;
  const std::vector<double> ys = obs.observations;
  const int last = obs.horizon() - 1;
  const double b2 = p.beta * p.beta;

  GibbsKernelFamily k;
  k.state_dim = 1;
  k.is_exact_gibbs = false;
  k.propose_interior = [p, ys](int t, StateRef u, StateRef w, Rng& rng, StateOut out) {
    const auto prop = stovol_interior_proposal(p, u[0], w[0], ys[t]);
    out[0] = rng.normal(prop.mean, prop.sd);
  };
  k.propose_left = [p, ys](StateRef w, Rng& rng, StateOut out) {
    const auto prop = stovol_endpoint_proposal(p, w[0], ys[0]);
    out[0] = rng.normal(prop.mean, prop.sd);
  };
  k.propose_right = [p, ys, last](StateRef u, Rng& rng, StateOut out) {
    const auto prop = stovol_endpoint_proposal(p, u[0], ys[last]);
    out[0] = rng.normal(prop.mean, prop.sd);
  };
  k.log_density_interior = [p, ys](int t, StateRef u, StateRef w, StateRef x) {
    const auto prop = stovol_interior_proposal(p, u[0], w[0], ys[t]);
    return log_normal_density(x[0], prop.mean, prop.sd * prop.sd);
  };
  k.log_density_left = [p, ys](StateRef w, StateRef x) {
    const auto prop = stovol_endpoint_proposal(p, w[0], ys[0]);
    return log_normal_density(x[0], prop.mean, prop.sd * prop.sd);
  };
  k.log_density_right = [p, ys, last](StateRef u, StateRef x) {
    const auto prop = stovol_endpoint_proposal(p, u[0], ys[last]);
    return log_normal_density(x[0], prop.mean, prop.sd * prop.sd);
  };
  k.log_accept_override = [p, ys, b2](int t, StateRef, StateRef v, StateRef, StateRef x) {
    const double y = ys[t];
    const double gamma = stovol_gamma(y, p.beta);
    return -0.5 * gamma * (x[0] - v[0]) -
           (std::exp(-x[0]) - std::exp(-v[0])) * y * y / (2.0 * b2);
  };
  return k;
}

// Exact Gibbs for a finite-state model: the full conditional pmf is
// computed from the matrices and sampled directly.
inline GibbsKernelFamily make_gibbs_kernel_finite(const FiniteHmm& fh,
                                                  const ObservationRecord& obs) {
  const auto spec = std::make_shared<const FiniteHmm>(fh);
  std::vector<int> ys(obs.observations.size());
  for (std::size_t t = 0; t < ys.size(); ++t) ys[t] = static_cast<int>(obs.observations[t]);
  const int last = static_cast<int>(ys.size()) - 1;

  enum class Site { kLeft, kInterior, kRight };
  auto conditional = [spec, ys, last](Site site, int t, int u, int w) {
    const int n = spec->n_states;
    std::vector<double> probs(n);
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      double p = spec->emit(j, ys[t]);
      switch (site) {
        case Site::kLeft:
          p *= spec->initial[j] * spec->trans(j, w);
          break;
        case Site::kInterior:
          p *= spec->trans(u, j) * spec->trans(j, w);
          break;
        case Site::kRight:
          p *= spec->trans(u, j);
          break;
      }
      probs[j] = p;
      total += p;
    }
    if (!(total > 0.0)) {
      throw AlgorithmError("finite gibbs kernel: zero conditional mass at t=" +
                           std::to_string(t));
    }
    for (double& p : probs) p /= total;
    return probs;
  };
  auto draw = [](const std::vector<double>& probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < probs.size(); ++j) {
      acc += probs[j];
      if (u < acc) return static_cast<double>(j);
    }
    return static_cast<double>(probs.size() - 1);
  };

  GibbsKernelFamily k;
  k.state_dim = 1;
  k.is_exact_gibbs = true;
  k.propose_interior = [conditional, draw](int t, StateRef u, StateRef w, Rng& rng,
                                           StateOut out) {
    out[0] = draw(conditional(Site::kInterior, t, static_cast<int>(u[0]),
                              static_cast<int>(w[0])),
                  rng);
  };
  k.propose_left = [conditional, draw](StateRef w, Rng& rng, StateOut out) {
    out[0] = draw(conditional(Site::kLeft, 0, 0, static_cast<int>(w[0])), rng);
  };
  k.propose_right = [conditional, draw, last](StateRef u, Rng& rng, StateOut out) {
    out[0] = draw(conditional(Site::kRight, last, static_cast<int>(u[0]), 0), rng);
  };
  k.log_density_interior = [conditional](int t, StateRef u, StateRef w, StateRef x) {
    return std::log(conditional(Site::kInterior, t, static_cast<int>(u[0]),
                                static_cast<int>(w[0]))[static_cast<int>(x[0])]);
  };
  k.log_density_left = [conditional](StateRef w, StateRef x) {
    return std::log(
        conditional(Site::kLeft, 0, 0, static_cast<int>(w[0]))[static_cast<int>(x[0])]);
  };
  k.log_density_right = [conditional, last](StateRef u, StateRef x) {
    return std::log(
        conditional(Site::kRight, last, static_cast<int>(u[0]), 0)[static_cast<int>(x[0])]);
  };
  return k;
}

}  // namespace pathsmooth

#endif  // PATHSMOOTH_MHIPS_HPP_
