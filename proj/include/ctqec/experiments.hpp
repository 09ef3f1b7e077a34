#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ctqec/controller.hpp"
#include "ctqec/filters.hpp"
#include "ctqec/lyapunov.hpp"
#include "ctqec/model.hpp"
#include "ctqec/rng.hpp"

namespace ctqec {

enum class Estimator { kTrueState, kFullFilter, kReducedFilter };

struct InitialState {
  enum class Kind { kBasis, kMixedPopulations };
  Kind kind = Kind::kBasis;
  int basis_index = 0;                   // |000> by default
  Vec4 populations{1.0, 0.0, 0.0, 0.0};  // (p_C, p_1, p_2, p_3)

  static InitialState code_zero() { return InitialState{}; }
  static InitialState basis(int index) {
    InitialState s;
    s.kind = Kind::kBasis;
    s.basis_index = index;
    return s;
  }
  // Diagonal mixture carrying p_C on |000>, p_1 on |100>, p_2 on |010>,
  // p_3 on |001>.
  static InitialState mixed(const Vec4& p) {
    InitialState s;
    s.kind = Kind::kMixedPopulations;
    s.populations = p;
    return s;
  }

  friend bool operator==(const InitialState&, const InitialState&) = default;
};

inline Mat8 build_initial_density(const InitialState& is) {
  if (is.kind == InitialState::Kind::kBasis) return basis_projector(is.basis_index);
  Mat8 m = Mat8::Zero();
  m(0, 0) = is.populations[0];
  m(4, 4) = is.populations[1];
  m(2, 2) = is.populations[2];
  m(1, 1) = is.populations[3];
  return m;
}

struct ExperimentConfig {
  PlantParams plant;
  FilterParams filter;
  ControllerParams controller;
  bool controller_enabled = true;
  Estimator estimator = Estimator::kReducedFilter;
  InitialState initial_state;
  InitialState filter_initial_state;  // nominal code state by default
  double dt = 1e-3;
  double horizon = 64.0;
  std::int64_t n_traj = 1000;
  std::uint64_t seed = 0;
  double latency = 0.0;
  Vec3 bias{0.0, 0.0, 0.0};  // record bias per channel, units of sqrt(eta Gamma)
  std::int64_t record_stride = 100;
  bool freeze_converged = true;

  friend bool operator==(const ExperimentConfig&,
                         const ExperimentConfig&) = default;
};

inline std::int64_t latency_steps(const ExperimentConfig& cfg) {
  return std::llround(cfg.latency / cfg.dt);
}

inline void validate_experiment(const ExperimentConfig& cfg) {
  validate_plant(cfg.plant);
  validate_filter(cfg.filter);
  validate_controller(cfg.controller);
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("dt must be > 0");
  check_step_preconditions(cfg.plant.Gamma, cfg.plant.gamma, cfg.dt);
  check_step_preconditions(cfg.filter.Gamma, cfg.filter.gamma, cfg.dt);
  if (!(cfg.horizon > 0.0)) throw std::invalid_argument("horizon must be > 0");
  if (cfg.horizon / cfg.dt > 1e8)
    throw std::invalid_argument("horizon/dt exceeds the 1e8 step guard");
  if (cfg.n_traj < 1) throw std::invalid_argument("n_traj must be >= 1");
  if (!(cfg.latency >= 0.0)) throw std::invalid_argument("latency must be >= 0");
  if (cfg.record_stride < 1)
    throw std::invalid_argument("record_stride must be >= 1");
  for (int k = 0; k < 3; ++k)
    if (!std::isfinite(cfg.bias[k]))
      throw std::invalid_argument("bias must be finite");
  if (cfg.initial_state.kind == InitialState::Kind::kMixedPopulations) {
    double sum = 0.0;
    for (double v : cfg.initial_state.populations) {
      if (!(v >= 0.0))
        throw std::invalid_argument("initial_state.populations must be >= 0");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("initial_state.populations must sum to 1");
  }
  if (cfg.initial_state.kind == InitialState::Kind::kBasis &&
      (cfg.initial_state.basis_index < 0 || cfg.initial_state.basis_index > 7))
    throw std::invalid_argument("initial_state basis index out of range");
}

struct MetricSample {
  double code_overlap = 0.0;  // tr(Pi_C rho)
  double p1 = 0.0, p2 = 0.0, p3 = 0.0;
  double fidelity = 0.0;     // <000| rho |000>
  double correctable = 0.0;  // fidelity after ideal majority-vote recovery
  double v_open = 0.0;
  double v_closed = 0.0;
};

inline MetricSample sample_metrics(const Mat8& rho) {
  const Vec4 p = populations(rho);
  MetricSample s;
  s.code_overlap = p[0];
  s.p1 = p[1];
  s.p2 = p[2];
  s.p3 = p[3];
  s.fidelity = std::clamp(rho(0, 0).real(), 0.0, 1.0);
  // Diagonal shortcut for <000| R(rho) |000>; cross-checked against the
  // general recovery map in tests.
  s.correctable = std::clamp(rho(0, 0).real() + rho(4, 4).real() +
                                 rho(2, 2).real() + rho(1, 1).real(),
                             0.0, 1.0);
  s.v_open = V_open(p);
  s.v_closed = V_closed(Vec3{p[1], p[2], p[3]});
  return s;
}

// Ideal majority-vote recovery R(rho) = Pi_C rho Pi_C + sum_j X_j Pi_j rho Pi_j X_j,
// then the overlap with a pure logical reference state.
inline double correctable_fidelity(const DensityMatrix& rho,
                                   const Ket8& logical_ref,
                                   const OperatorSet& ops) {
  Mat8 recovered = ops.PiC * rho.mat * ops.PiC;
  for (int j = 0; j < 3; ++j)
    recovered += ops.X(j) * ops.Pi(j + 1) * rho.mat * ops.Pi(j + 1) * ops.X(j);
  const Complex f = (logical_ref.adjoint() * recovered * logical_ref)(0, 0);
  return std::clamp(f.real(), 0.0, 1.0);
}

// Fidelity towards |0><0| of a single physical qubit under sigma_x dephasing
// at rate gamma: d rho = gamma D_X(rho) dt from |0><0| has the closed form
// (1 + exp(-2 gamma t)) / 2.
inline double single_qubit_baseline(double gamma, double t) {
  return 0.5 * (1.0 + std::exp(-2.0 * gamma * t));
}

inline std::vector<double> single_qubit_baseline(
    double gamma, const std::vector<double>& times) {
  std::vector<double> out(times.size());
  for (size_t i = 0; i < times.size(); ++i)
    out[i] = single_qubit_baseline(gamma, times[i]);
  return out;
}

struct TrajectoryDiagnostics {
  bool aborted = false;
  std::string abort_reason;
  std::int64_t frozen_at_step = -1;
  std::uint64_t filter_clip_events = 0;
  std::uint64_t filter_clip_opportunities = 0;
  bool controller_two_valued = true;
  StepDiagnostics step;
};

struct TrajectoryResult {
  std::vector<MetricSample> samples;
  TrajectoryDiagnostics diag;
};

// Test hook: called after every plant step.
struct StepObserver {
  std::function<void(std::int64_t step, const Mat8& rho,
                     const Vec3& applied_sigma, const MeasurementRecord& rec,
                     const Vec4& estimated_p)>
      fn;
};

namespace detail {

// Spurious mass below which a gamma = 0, control-off state is stationary for
// every remaining step to well under double precision in every recorded
// metric (the Lyapunov values move by at most ~sqrt(mass)).
inline constexpr double kFreezeMass = 1e-32;

}  // namespace detail

inline TrajectoryResult run_trajectory(const ExperimentConfig& cfg,
                                       std::uint64_t traj_index,
                                       const StepObserver* observer = nullptr,
                                       bool instrument = false) {
  const std::int64_t n_steps = std::llround(cfg.horizon / cfg.dt);
  const std::int64_t stride = cfg.record_stride;
  const std::int64_t n_out = n_steps / stride + 1;

  TrajectoryResult result;
  result.samples.resize(n_out);
  result.diag.step.track_expensive = instrument;

  Mat8 rho = build_initial_density(cfg.initial_state);
  const SmeStepper plant(cfg.plant, cfg.dt);

  const bool use_full = cfg.estimator == Estimator::kFullFilter;
  const bool use_reduced = cfg.estimator == Estimator::kReducedFilter;
  const FilterStepper filter(cfg.filter, cfg.dt);
  Mat8 rho_hat = build_initial_density(cfg.filter_initial_state);
  SyndromeFilterState sf =
      syndrome_state_of(DensityMatrix{build_initial_density(cfg.filter_initial_state)});

  ControllerState ctrl = initial_state();
  Vec3 gains;
  for (int j = 0; j < 3; ++j) gains[j] = controller_gain(cfg.controller, j);

  const std::int64_t delay = latency_steps(cfg);
  std::vector<Vec3> ring(std::max<std::int64_t>(delay, 0),
                         Vec3{0.0, 0.0, 0.0});
  std::int64_t ring_pos = 0;
  std::int64_t ring_nonzero = 0;

  GaussianRng rng(trajectory_seed(cfg.seed, traj_index));
  const double sqdt = std::sqrt(cfg.dt);
  Vec3 bias_dt;
  for (int k = 0; k < 3; ++k)
    bias_dt[k] =
        cfg.bias[k] * std::sqrt(cfg.plant.eta[k] * cfg.plant.Gamma[k]) * cfg.dt;
  const bool biased = bias_dt != Vec3{0.0, 0.0, 0.0};

  const bool gamma_free = cfg.plant.gamma == Vec3{0.0, 0.0, 0.0};
  const bool freeze_allowed =
      cfg.freeze_converged && gamma_free &&
      (!cfg.controller_enabled || cfg.estimator == Estimator::kTrueState);

  result.samples[0] = sample_metrics(rho);

  for (std::int64_t step = 0; step < n_steps; ++step) {
    Vec4 p_est;
    switch (cfg.estimator) {
      case Estimator::kTrueState: p_est = populations(rho); break;
      case Estimator::kFullFilter: p_est = populations(rho_hat); break;
      case Estimator::kReducedFilter:
        p_est = populations_from_syndromes(sf);
        break;
    }
    Vec3 sigma_cmd{0.0, 0.0, 0.0};
    if (cfg.controller_enabled) {
      ctrl = update(ctrl, Vec3{p_est[1], p_est[2], p_est[3]}, cfg.controller);
      sigma_cmd = ctrl.sigma;
      for (int j = 0; j < 3; ++j)
        if (sigma_cmd[j] != 0.0 && sigma_cmd[j] != gains[j])
          result.diag.controller_two_valued = false;
    }
    Vec3 sigma_app = sigma_cmd;
    if (delay > 0) {
      sigma_app = ring[ring_pos];
      if (sigma_app != Vec3{0.0, 0.0, 0.0}) --ring_nonzero;
      if (sigma_cmd != Vec3{0.0, 0.0, 0.0}) ++ring_nonzero;
      ring[ring_pos] = sigma_cmd;
      ring_pos = (ring_pos + 1) % delay;
    }

    const bool control_quiet = sigma_app == Vec3{0.0, 0.0, 0.0} &&
                               sigma_cmd == Vec3{0.0, 0.0, 0.0} &&
                               ring_nonzero == 0;
    if (freeze_allowed && control_quiet) {
      const Vec4 p = populations(rho);
      const double spurious =
          cfg.controller_enabled ? 1.0 - p[0]
                                 : 1.0 - std::max({p[0], p[1], p[2], p[3]});
      if (spurious <= detail::kFreezeMass) {
        result.diag.frozen_at_step = step;
        const MetricSample held = sample_metrics(rho);
        for (std::int64_t i = step / stride + 1; i < n_out; ++i)
          result.samples[i] = held;
        return result;
      }
    }

    StepNoise noise;
    for (int k = 0; k < 3; ++k) noise.dW[k] = rng.normal() * sqdt;
    if (sigma_app != Vec3{0.0, 0.0, 0.0})
      for (int j = 0; j < 3; ++j) noise.dB[j] = rng.normal() * sqdt;

    MeasurementRecord rec;
    try {
      rec = plant.step(rho, sigma_app, noise, &result.diag.step);
    } catch (const IntegratorBlowup& e) {
      result.diag.aborted = true;
      result.diag.abort_reason = e.what();
      return result;
    }

    MeasurementRecord rec_f = rec;
    if (biased)
      for (int k = 0; k < 3; ++k) rec_f.dY[k] += bias_dt[k];

    if (use_full) {
      try {
        filter.step_full(rho_hat, rec_f, noise.dB, sigma_app);
      } catch (const IntegratorBlowup& e) {
        result.diag.aborted = true;
        result.diag.abort_reason = std::string("filter: ") + e.what();
        return result;
      }
    } else if (use_reduced) {
      sf = reduced_filter_step(sf, rec_f, sigma_app, cfg.filter, cfg.dt,
                               &result.diag.filter_clip_events);
      result.diag.filter_clip_opportunities += 3;
    }

    if (observer && observer->fn)
      observer->fn(step, rho, sigma_app, rec, p_est);

    if ((step + 1) % stride == 0)
      result.samples[(step + 1) / stride] = sample_metrics(rho);
  }
  return result;
}

struct SeriesStats {
  std::vector<double> mean, se;
};

struct EnsembleDiagnostics {
  std::int64_t n_requested = 0;
  std::int64_t aborted = 0;
  std::int64_t frozen = 0;
  std::uint64_t filter_clip_events = 0;
  std::uint64_t filter_clip_opportunities = 0;
  double max_trace_dev = 0.0;
  double max_herm_dev = 0.0;
  double min_eig_post = 1.0;
  double max_purity = 0.0;
  std::uint64_t eig_clip_repairs = 0;
  std::uint64_t total_steps = 0;
  bool controller_two_valued = true;
};

struct EnsembleResult {
  std::vector<double> times;
  SeriesStats code_overlap, p1, p2, p3;
  SeriesStats fidelity, correctable_fidelity;
  SeriesStats v_open, v_closed;
  std::vector<double> baseline_fidelity;
  EnsembleDiagnostics diag;
};

struct EnsembleAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runs n_traj independent trajectories and aggregates means and standard
// errors per decimated time step. Trajectories are distributed over worker
// threads; accumulation always happens in trajectory-index order, so the
// result is bit-identical for any thread count. Aborted trajectories are
// excluded and reported; more than 1% aborts fails the ensemble.
inline EnsembleResult run_ensemble(const ExperimentConfig& cfg,
                                   int threads = 0, bool instrument = false) {
  validate_experiment(cfg);
  const std::int64_t n_steps = std::llround(cfg.horizon / cfg.dt);
  const std::int64_t n_out = n_steps / cfg.record_stride + 1;
  const std::int64_t n_traj = cfg.n_traj;

  if (threads <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    threads = hw == 0 ? 1 : static_cast<int>(hw);
  }
  threads = static_cast<int>(
      std::min<std::int64_t>(threads, std::max<std::int64_t>(n_traj, 1)));

  EnsembleResult res;
  res.times.resize(n_out);
  for (std::int64_t i = 0; i < n_out; ++i)
    res.times[i] = double(i * cfg.record_stride) * cfg.dt;
  res.diag.n_requested = n_traj;

  constexpr int kMetrics = 8;
  std::vector<std::vector<double>> sum(kMetrics,
                                       std::vector<double>(n_out, 0.0));
  std::vector<std::vector<double>> sumsq(kMetrics,
                                         std::vector<double>(n_out, 0.0));

  const std::int64_t window =
      std::min<std::int64_t>(n_traj, std::max<std::int64_t>(4 * threads, 64));
  std::vector<TrajectoryResult> slot(window);

  for (std::int64_t base = 0; base < n_traj; base += window) {
    const std::int64_t count = std::min<std::int64_t>(window, n_traj - base);
    std::atomic<std::int64_t> next{0};
    auto worker = [&] {
      for (std::int64_t i = next.fetch_add(1); i < count;
           i = next.fetch_add(1))
        slot[i] = run_trajectory(cfg, std::uint64_t(base + i), nullptr,
                                 instrument);
    };
    if (threads <= 1 || count == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      const int t_eff = static_cast<int>(
          std::min<std::int64_t>(threads, count));
      pool.reserve(t_eff);
      for (int t = 0; t < t_eff; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    for (std::int64_t i = 0; i < count; ++i) {
      const TrajectoryResult& tr = slot[i];
      auto& d = res.diag;
      d.filter_clip_events += tr.diag.filter_clip_events;
      d.filter_clip_opportunities += tr.diag.filter_clip_opportunities;
      d.max_trace_dev = std::max(d.max_trace_dev, tr.diag.step.max_trace_dev);
      d.max_herm_dev = std::max(d.max_herm_dev, tr.diag.step.max_herm_dev);
      d.min_eig_post = std::min(d.min_eig_post, tr.diag.step.min_eig_post);
      d.max_purity = std::max(d.max_purity, tr.diag.step.max_purity);
      d.eig_clip_repairs += tr.diag.step.eig_clip_repairs;
      d.total_steps += tr.diag.step.steps;
      d.controller_two_valued &= tr.diag.controller_two_valued;
      if (tr.diag.aborted) {
        ++d.aborted;
        continue;
      }
      if (tr.diag.frozen_at_step >= 0) ++d.frozen;
      for (std::int64_t t = 0; t < n_out; ++t) {
        const MetricSample& s = tr.samples[t];
        const double vals[kMetrics] = {s.code_overlap, s.p1,     s.p2,
                                       s.p3,           s.fidelity, s.correctable,
                                       s.v_open,       s.v_closed};
        for (int m = 0; m < kMetrics; ++m) {
          sum[m][t] += vals[m];
          sumsq[m][t] += vals[m] * vals[m];
        }
      }
    }
  }

  if (res.diag.aborted * 100 > n_traj)
    throw EnsembleAborted("ensemble: " + std::to_string(res.diag.aborted) +
                          " of " + std::to_string(n_traj) +
                          " trajectories aborted (>1%)");

  const std::int64_t n_eff = n_traj - res.diag.aborted;
  auto finalize = [&](int m) {
    SeriesStats st;
    st.mean.resize(n_out);
    st.se.resize(n_out);
    for (std::int64_t t = 0; t < n_out; ++t) {
      const double mean = sum[m][t] / double(n_eff);
      st.mean[t] = mean;
      if (n_eff > 1) {
        const double var = std::max(
            0.0, (sumsq[m][t] - double(n_eff) * mean * mean) / double(n_eff - 1));
        st.se[t] = std::sqrt(var / double(n_eff));
      } else {
        st.se[t] = 0.0;
      }
    }
    return st;
  };
  res.code_overlap = finalize(0);
  res.p1 = finalize(1);
  res.p2 = finalize(2);
  res.p3 = finalize(3);
  res.fidelity = finalize(4);
  res.correctable_fidelity = finalize(5);
  res.v_open = finalize(6);
  res.v_closed = finalize(7);
  res.baseline_fidelity = single_qubit_baseline(cfg.plant.gamma[0], res.times);
  return res;
}

}  // namespace ctqec
