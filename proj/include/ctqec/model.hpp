#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "ctqec/algebra.hpp"

namespace ctqec {

struct PlantParams {
  Vec3 Gamma{1.0, 1.0, 1.0};  // syndrome measurement strengths
  Vec3 eta{1.0, 1.0, 1.0};    // measurement efficiencies, in [0,1]
  Vec3 gamma{0.0, 0.0, 0.0};  // bit-flip disturbance rates

  friend bool operator==(const PlantParams&, const PlantParams&) = default;
};

// The estimator's assumed rates; may be mismatched from the plant.
struct FilterParams {
  Vec3 Gamma{1.0, 1.0, 1.0};
  Vec3 eta{1.0, 1.0, 1.0};
  Vec3 gamma{0.0, 0.0, 0.0};

  friend bool operator==(const FilterParams&, const FilterParams&) = default;
};

struct StepNoise {
  Vec3 dW{0.0, 0.0, 0.0};  // measurement Wiener increments, Normal(0, dt)
  Vec3 dB{0.0, 0.0, 0.0};  // control Wiener increments, independent of dW
};

struct MeasurementRecord {
  // dY_k = 2 sqrt(eta_k Gamma_k) tr(S_k rho) dt + dW_k
  Vec3 dY{0.0, 0.0, 0.0};
};

inline void validate_plant(const PlantParams& p) {
  for (int k = 0; k < 3; ++k) {
    if (!(p.Gamma[k] > 0.0))
      throw std::invalid_argument("plant.Gamma[" + std::to_string(k) +
                                  "] must be > 0");
    if (!(p.eta[k] >= 0.0 && p.eta[k] <= 1.0))
      throw std::invalid_argument("plant.eta[" + std::to_string(k) +
                                  "] must be in [0,1]");
    if (!(p.gamma[k] >= 0.0))
      throw std::invalid_argument("plant.gamma[" + std::to_string(k) +
                                  "] must be >= 0");
  }
}

inline void validate_filter(const FilterParams& p) {
  for (int k = 0; k < 3; ++k) {
    if (!(p.Gamma[k] > 0.0))
      throw std::invalid_argument("filter.Gamma[" + std::to_string(k) +
                                  "] must be > 0");
    if (!(p.eta[k] >= 0.0 && p.eta[k] <= 1.0))
      throw std::invalid_argument("filter.eta[" + std::to_string(k) +
                                  "] must be in [0,1]");
    if (!(p.gamma[k] >= 0.0))
      throw std::invalid_argument("filter.gamma[" + std::to_string(k) +
                                  "] must be >= 0");
  }
}

// D_L(rho) = L rho L^† - (L^† L rho + rho L^† L)/2
inline Mat8 dissipator(const Mat8& L, const Mat8& rho) {
  const Mat8 ldl = L.adjoint() * L;
  return L * rho * L.adjoint() - 0.5 * (ldl * rho + rho * ldl);
}

// M_L(rho) = L rho + rho L^† - tr(rho (L + L^†)) rho
inline Mat8 innovation(const Mat8& L, const Mat8& rho) {
  const Complex expect = (rho * (L + L.adjoint())).trace();
  return L * rho + rho * L.adjoint() - expect * rho;
}

struct StepDiagnostics {
  double max_trace_dev = 0.0;   // |tr - 1| before repair
  double max_herm_dev = 0.0;    // max |rho - rho^†| before repair (expensive)
  double min_eig_post = 1.0;    // smallest post-repair eigenvalue (expensive)
  double max_purity = 0.0;      // largest post-repair tr(rho^2) (expensive)
  std::uint64_t eig_clip_repairs = 0;
  std::uint64_t steps = 0;
  bool track_expensive = false;
};

namespace detail {

inline Vec3 syndrome_means(const Mat8& rho) {
  Vec3 m{0.0, 0.0, 0.0};
  for (int a = 0; a < 8; ++a) {
    const double d = rho(a, a).real();
    m[0] += kSyndromeSign[0][a] * d;
    m[1] += kSyndromeSign[1][a] * d;
    m[2] += kSyndromeSign[2][a] * d;
  }
  return m;
}

// One Euler increment of the measurement SME written entrywise.
// The syndrome operators are diagonal sign matrices and the X_j are index
// permutations, so every superoperator reduces to coefficient-wise work:
//   (S_k rho S_k)_{ab} = s_k[a] s_k[b] rho_{ab}
//   (S_k rho + rho S_k)_{ab} = (s_k[a] + s_k[b]) rho_{ab}
//   (X_j rho X_j)_{ab} = rho_{a^f, b^f}
// `w` carries the per-channel diffusion weights: sqrt(eta_k Gamma_k) dW_k for
// a plant step, sqrt(eta_k Gamma_k) * innovation_k for a filter step.
inline Mat8 euler_update(const Mat8& rho, const double* meas_drift_dt,
                         const Vec3& w, const Vec3& m, const Vec3& xcoef,
                         const Vec3& ccoef) {
  double u[8];
  const double v = 2.0 * (w[0] * m[0] + w[1] * m[1] + w[2] * m[2]);
  for (int a = 0; a < 8; ++a)
    u[a] = w[0] * kSyndromeSign[0][a] + w[1] * kSyndromeSign[1][a] +
           w[2] * kSyndromeSign[2][a];

  Mat8 out;
  for (int b = 0; b < 8; ++b)
    for (int a = 0; a < 8; ++a)
      out(a, b) = rho(a, b) * (1.0 + meas_drift_dt[a + 8 * b] + u[a] + u[b] - v);

  for (int j = 0; j < 3; ++j) {
    const int f = kFlipMask[j];
    if (xcoef[j] != 0.0) {
      for (int b = 0; b < 8; ++b)
        for (int a = 0; a < 8; ++a)
          out(a, b) += xcoef[j] * (rho(a ^ f, b ^ f) - rho(a, b));
    }
    if (ccoef[j] != 0.0) {
      const Complex c(0.0, -ccoef[j]);  // -i sigma_j dB_j
      for (int b = 0; b < 8; ++b)
        for (int a = 0; a < 8; ++a)
          out(a, b) += c * (rho(a ^ f, b) - rho(a, b ^ f));
    }
  }
  return out;
}

// Per-step state repair: Hermitian projection and trace rescale always, then
// a PSD certificate. The eigendecomposition clip only runs when neither the
// Gershgorin bound nor a shifted Cholesky can certify lambda_min >= -1e-10,
// so the common near-diagonal stretches of a trajectory stay cheap. The
// post-repair guarantee is the same as a full clip: lambda_min >= -1e-10.
inline void repair(Mat8& rho, StepDiagnostics* diag) {
  if (diag && diag->track_expensive) {
    const double hd = hermiticity_deviation(rho);
    if (hd > diag->max_herm_dev) diag->max_herm_dev = hd;
  }
  rho = 0.5 * (rho + rho.adjoint()).eval();
  const double tr = rho.trace().real();
  if (diag) {
    const double dev = std::abs(tr - 1.0);
    if (dev > diag->max_trace_dev) diag->max_trace_dev = dev;
    ++diag->steps;
  }
  if (!(tr > 1e-8))
    throw IntegratorBlowup("sme step: trace collapsed to " +
                           std::to_string(tr));
  rho *= 1.0 / tr;

  double gersh = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 8; ++a) {
    double radius = 0.0;
    for (int b = 0; b < 8; ++b) {
      if (b == a) continue;
      const Complex z = rho(a, b);
      radius += std::abs(z.real()) + std::abs(z.imag());
    }
    gersh = std::min(gersh, rho(a, a).real() - radius);
  }
  if (gersh < -1e-10) {
    Mat8 shifted = rho;
    for (int a = 0; a < 8; ++a) shifted(a, a) += 5e-11;
    Eigen::LLT<Mat8> llt(shifted);
    if (llt.info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<Mat8> es(rho);
      Eigen::Matrix<double, 8, 1> lam = es.eigenvalues().cwiseMax(0.0);
      const double sum = lam.sum();
      if (!(sum > 1e-8))
        throw IntegratorBlowup("sme step: clipped spectrum sums to " +
                               std::to_string(sum));
      lam /= sum;
      rho = es.eigenvectors() * lam.cast<Complex>().asDiagonal() *
            es.eigenvectors().adjoint();
      rho = 0.5 * (rho + rho.adjoint()).eval();
      if (diag) ++diag->eig_clip_repairs;
    }
  }
  if (diag && diag->track_expensive) {
    const double emin = min_eigenvalue(rho);
    if (emin < diag->min_eig_post) diag->min_eig_post = emin;
    const double purity = (rho * rho).trace().real();
    if (purity > diag->max_purity) diag->max_purity = purity;
  }
}

}  // namespace detail

// Euler–Maruyama stepper for the three-qubit syndrome-measurement SME with
// bit-flip disturbances and noise-driven X_j controls. sigma = 0 recovers the
// open-loop model. Construct once per trajectory; step() is allocation free.
class SmeStepper {
 public:
  SmeStepper(const Vec3& Gamma, const Vec3& eta, const Vec3& gamma, double dt)
      : dt_(dt), gamma_(gamma) {
    for (int k = 0; k < 3; ++k) sqrt_eg_[k] = std::sqrt(eta[k] * Gamma[k]);
    for (int b = 0; b < 8; ++b)
      for (int a = 0; a < 8; ++a) {
        double c = 0.0;
        for (int k = 0; k < 3; ++k)
          c += Gamma[k] * (kSyndromeSign[k][a] * kSyndromeSign[k][b] - 1.0);
        meas_drift_dt_[a + 8 * b] = c * dt;
      }
  }

  SmeStepper(const PlantParams& p, double dt)
      : SmeStepper(p.Gamma, p.eta, p.gamma, dt) {}

  MeasurementRecord step(Mat8& rho, const Vec3& sigma, const StepNoise& noise,
                         StepDiagnostics* diag = nullptr) const {
    const Vec3 m = detail::syndrome_means(rho);
    MeasurementRecord rec;
    Vec3 w;
    for (int k = 0; k < 3; ++k) {
      rec.dY[k] = 2.0 * sqrt_eg_[k] * m[k] * dt_ + noise.dW[k];
      w[k] = sqrt_eg_[k] * noise.dW[k];
    }
    Vec3 xcoef, ccoef;
    for (int j = 0; j < 3; ++j) {
      xcoef[j] = (gamma_[j] + sigma[j] * sigma[j]) * dt_;
      ccoef[j] = sigma[j] * noise.dB[j];
    }
    rho = detail::euler_update(rho, meas_drift_dt_.data(), w, m, xcoef, ccoef);
    detail::repair(rho, diag);
    return rec;
  }

  double dt() const { return dt_; }

 private:
  double dt_;
  Vec3 sqrt_eg_;
  Vec3 gamma_;
  std::array<double, 64> meas_drift_dt_;
};

inline void check_step_preconditions(const Vec3& Gamma, const Vec3& gamma,
                                     double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
  double rate = 0.0;
  for (int k = 0; k < 3; ++k)
    rate = std::max({rate, Gamma[k], gamma[k]});
  if (dt * rate > 0.01 + 1e-12)
    throw std::invalid_argument(
        "dt too large: stability guard requires dt*max(Gamma,gamma) <= 0.01");
}

inline std::pair<DensityMatrix, MeasurementRecord> step_closed_loop(
    const DensityMatrix& rho, const PlantParams& params, const Vec3& sigma,
    double dt, const StepNoise& noise) {
  check_step_preconditions(params.Gamma, params.gamma, dt);
  for (int j = 0; j < 3; ++j)
    if (!(sigma[j] >= 0.0))
      throw std::invalid_argument("sigma must be >= 0");
  SmeStepper stepper(params, dt);
  DensityMatrix out = rho;
  MeasurementRecord rec = stepper.step(out.mat, sigma, noise);
  return {out, rec};
}

inline std::pair<DensityMatrix, MeasurementRecord> step_open_loop(
    const DensityMatrix& rho, const PlantParams& params, double dt,
    const StepNoise& noise) {
  return step_closed_loop(rho, params, Vec3{0.0, 0.0, 0.0}, dt, noise);
}

}  // namespace ctqec
