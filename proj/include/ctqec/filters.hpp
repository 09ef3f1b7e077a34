#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "ctqec/model.hpp"

namespace ctqec {

// Reduced classical filter coordinates: syndrome expectations
// s_hat_k = tr(S_k rho_hat), kept in [-1,1]. Defaults to the nominal
// code state, where all syndromes read +1.
struct SyndromeFilterState {
  Vec3 s_hat{1.0, 1.0, 1.0};

  friend bool operator==(const SyndromeFilterState&,
                         const SyndromeFilterState&) = default;
};

// Record-driven density-matrix estimators. step_full is the filter that also
// replays the control noise dB (known a posteriori); step_density is the
// Bayesian estimate conditioned on the records alone, where the control term
// averages into an extra sigma_j^2 dissipation.
class FilterStepper {
 public:
  FilterStepper(const FilterParams& p, double dt)
      : dt_(dt), gamma_(p.gamma) {
    for (int k = 0; k < 3; ++k) sqrt_eg_[k] = std::sqrt(p.eta[k] * p.Gamma[k]);
    for (int b = 0; b < 8; ++b)
      for (int a = 0; a < 8; ++a) {
        double c = 0.0;
        for (int k = 0; k < 3; ++k)
          c += p.Gamma[k] * (kSyndromeSign[k][a] * kSyndromeSign[k][b] - 1.0);
        meas_drift_dt_[a + 8 * b] = c * dt;
      }
  }

  void step_full(Mat8& rho_hat, const MeasurementRecord& rec, const Vec3& dB,
                 const Vec3& sigma, StepDiagnostics* diag = nullptr) const {
    Vec3 ccoef;
    for (int j = 0; j < 3; ++j) ccoef[j] = sigma[j] * dB[j];
    step_impl(rho_hat, rec, sigma, ccoef, diag);
  }

  void step_density(Mat8& rho_hat, const MeasurementRecord& rec,
                    const Vec3& sigma, StepDiagnostics* diag = nullptr) const {
    step_impl(rho_hat, rec, sigma, Vec3{0.0, 0.0, 0.0}, diag);
  }

  double dt() const { return dt_; }

 private:
  void step_impl(Mat8& rho_hat, const MeasurementRecord& rec,
                 const Vec3& sigma, const Vec3& ccoef,
                 StepDiagnostics* diag) const {
    const Vec3 m = detail::syndrome_means(rho_hat);
    Vec3 w;
    for (int k = 0; k < 3; ++k) {
      const double innov = rec.dY[k] - 2.0 * sqrt_eg_[k] * m[k] * dt_;
      w[k] = sqrt_eg_[k] * innov;
    }
    Vec3 xcoef;
    for (int j = 0; j < 3; ++j)
      xcoef[j] = (gamma_[j] + sigma[j] * sigma[j]) * dt_;
    rho_hat = detail::euler_update(rho_hat, meas_drift_dt_.data(), w, m, xcoef,
                                   ccoef);
    detail::repair(rho_hat, diag);
  }

  double dt_;
  Vec3 sqrt_eg_;
  Vec3 gamma_;
  std::array<double, 64> meas_drift_dt_;
};

inline DensityMatrix full_filter_step(const DensityMatrix& rho_hat,
                                      const MeasurementRecord& dY,
                                      const Vec3& dB, const Vec3& sigma,
                                      const FilterParams& params, double dt) {
  check_step_preconditions(params.Gamma, params.gamma, dt);
  FilterStepper stepper(params, dt);
  DensityMatrix out = rho_hat;
  stepper.step_full(out.mat, dY, dB, sigma);
  return out;
}

// Density-matrix form of the reduced (record-only) filter; the oracle the
// classical syndrome filter is checked against.
inline DensityMatrix reduced_density_filter_step(const DensityMatrix& rho_hat,
                                                 const MeasurementRecord& dY,
                                                 const Vec3& sigma,
                                                 const FilterParams& params,
                                                 double dt) {
  check_step_preconditions(params.Gamma, params.gamma, dt);
  FilterStepper stepper(params, dt);
  DensityMatrix out = rho_hat;
  stepper.step_density(out.mat, dY, sigma);
  return out;
}

// Classical syndrome filter on (s1, s2, s3). For each k, with (l, m) the
// other two channels in cyclic order:
//   ds_k = -2 [(gamma_l + sigma_l^2) + (gamma_m + sigma_m^2)] s_k dt
//          + 2 sqrt(eta_k Gamma_k) (1 - s_k^2)      innov_k
//          + 2 sqrt(eta_l Gamma_l) (s_m - s_k s_l)  innov_l
//          + 2 sqrt(eta_m Gamma_m) (s_l - s_k s_m)  innov_m
// with innov_k = dY_k - 2 sqrt(eta_k Gamma_k) s_k dt. Components are clipped
// to [-1,1]; Euler overshoots are counted via clip_events so discretization
// artifacts stay observable.
inline SyndromeFilterState reduced_filter_step(
    const SyndromeFilterState& state, const MeasurementRecord& rec,
    const Vec3& sigma, const FilterParams& params, double dt,
    std::uint64_t* clip_events = nullptr) {
  const Vec3& s = state.s_hat;
  Vec3 seg, innov, rate;
  for (int k = 0; k < 3; ++k) {
    seg[k] = std::sqrt(params.eta[k] * params.Gamma[k]);
    innov[k] = rec.dY[k] - 2.0 * seg[k] * s[k] * dt;
    rate[k] = params.gamma[k] + sigma[k] * sigma[k];
  }
  SyndromeFilterState out;
  for (int k = 0; k < 3; ++k) {
    const int l = (k + 1) % 3;
    const int m = (k + 2) % 3;
    const double ds = -2.0 * (rate[l] + rate[m]) * s[k] * dt +
                      2.0 * seg[k] * (1.0 - s[k] * s[k]) * innov[k] +
                      2.0 * seg[l] * (s[m] - s[k] * s[l]) * innov[l] +
                      2.0 * seg[m] * (s[l] - s[k] * s[m]) * innov[m];
    double next = s[k] + ds;
    if (next > 1.0 || next < -1.0) {
      if (clip_events) ++*clip_events;
      next = std::clamp(next, -1.0, 1.0);
    }
    out.s_hat[k] = next;
  }
  return out;
}

// p_C = (1 + s1 + s2 + s3)/4 and p_j = (1 + s_j - s_l - s_m)/4, clipped to [0,1].
inline Vec4 populations_from_syndromes(const SyndromeFilterState& state) {
  const Vec3& s = state.s_hat;
  Vec4 p;
  p[0] = 0.25 * (1.0 + s[0] + s[1] + s[2]);
  p[1] = 0.25 * (1.0 + s[0] - s[1] - s[2]);
  p[2] = 0.25 * (1.0 - s[0] + s[1] - s[2]);
  p[3] = 0.25 * (1.0 - s[0] - s[1] + s[2]);
  for (double& v : p) v = std::clamp(v, 0.0, 1.0);
  return p;
}

// Syndrome expectations of a density matrix; used to seed the reduced filter
// from a configured initial estimate.
inline SyndromeFilterState syndrome_state_of(const DensityMatrix& rho) {
  SyndromeFilterState st;
  const Vec3 m = detail::syndrome_means(rho.mat);
  for (int k = 0; k < 3; ++k) st.s_hat[k] = std::clamp(m[k], -1.0, 1.0);
  return st;
}

}  // namespace ctqec
