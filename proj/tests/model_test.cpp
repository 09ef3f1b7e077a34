#include "ctqec/model.hpp"

#include <gtest/gtest.h>

#include <random>

#include "ctqec/rng.hpp"
#include "test_support.hpp"

using namespace ctqec;

namespace {

const OperatorSet& ops() {
  static const OperatorSet o = build_operators();
  return o;
}

StepNoise noise_from(GaussianRng& rng, double dt, bool with_control = true) {
  StepNoise n;
  const double sq = std::sqrt(dt);
  for (int k = 0; k < 3; ++k) n.dW[k] = rng.normal() * sq;
  if (with_control)
    for (int j = 0; j < 3; ++j) n.dB[j] = rng.normal() * sq;
  return n;
}

}  // namespace

TEST(Superoperators, DissipatorOfIdentityVanishes) {
  std::mt19937_64 gen(1);
  const Mat8 rho = testutil::random_density(gen);
  EXPECT_NEAR(dissipator(ops().I8, rho).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(Superoperators, DissipatorVanishesOnEigenstate) {
  const Mat8 rho = basis_projector(0);  // |000><000| is an S_1 eigenstate
  EXPECT_NEAR(dissipator(ops().S1, rho).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(Superoperators, DissipatorOfFlipOnCodeState) {
  const Mat8 rho = basis_projector(0);
  const Mat8 expected = basis_projector(4) - basis_projector(0);
  EXPECT_NEAR((dissipator(ops().X1, rho) - expected).cwiseAbs().maxCoeff(), 0.0,
              1e-14);
}

TEST(Superoperators, MatchNaiveOracleOnRandomInputs) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> dist;
  for (int trial = 0; trial < 25; ++trial) {
    Mat8 L;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) L(i, j) = Complex(dist(gen), dist(gen));
    const Mat8 rho = testutil::random_density(gen);
    const auto Lo = oracle::from_eigen(L);
    const auto ro = oracle::from_eigen(rho);
    EXPECT_LT(oracle::max_abs_diff(dissipator(L, rho),
                                   oracle::dissipator(Lo, ro)),
              1e-12);
    EXPECT_LT(oracle::max_abs_diff(innovation(L, rho),
                                   oracle::innovation(Lo, ro)),
              1e-12);
  }
}

TEST(Superoperators, OutputsAreTraceless) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> dist;
  for (int trial = 0; trial < 50; ++trial) {
    Mat8 L;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) L(i, j) = Complex(dist(gen), dist(gen));
    const Mat8 rho = testutil::random_density(gen);
    EXPECT_NEAR(std::abs(dissipator(L, rho).trace()), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(innovation(L, rho).trace()), 0.0, 1e-12);
    // Innovation of a Hermitian L preserves Hermiticity.
    const Mat8 H = testutil::random_hermitian(gen);
    EXPECT_NEAR(hermiticity_deviation(innovation(H, rho)), 0.0, 1e-12);
  }
}

TEST(Superoperators, InnovationVanishesOnEigenstate) {
  const Mat8 rho = basis_projector(0);
  EXPECT_NEAR(innovation(ops().S1, rho).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(Superoperators, InnovationFrozenValues) {
  // M_{S1}(I/8) = S1/4 since tr(S1) = 0.
  const Mat8 mixed = Mat8::Identity() * Complex(0.125, 0.0);
  EXPECT_NEAR((innovation(ops().S1, mixed) - 0.25 * ops().S1)
                  .cwiseAbs()
                  .maxCoeff(),
              0.0, 1e-14);

  // rho = (|000><000| + |100><100|)/2: S1 reads +1 on both, so M_{S1} = 0;
  // S2 distinguishes them and M_{S2}(rho) = |000><000| - |100><100|
  // (value pinned by the naive-oracle evaluation of the formula).
  const Mat8 rho = 0.5 * (basis_projector(0) + basis_projector(4));
  EXPECT_NEAR(innovation(ops().S1, rho).cwiseAbs().maxCoeff(), 0.0, 1e-14);
  const Mat8 expected = basis_projector(0) - basis_projector(4);
  EXPECT_NEAR((innovation(ops().S2, rho) - expected).cwiseAbs().maxCoeff(), 0.0,
              1e-14);
  EXPECT_LT(oracle::max_abs_diff(
                innovation(ops().S2, rho),
                oracle::innovation(oracle::from_eigen(ops().S2),
                                   oracle::from_eigen(rho))),
            1e-14);
}

TEST(Stepper, CodeStateIsSteadyWithoutErrors) {
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  GaussianRng rng(11);
  DensityMatrix rho{basis_projector(0)};
  for (int i = 0; i < 100; ++i) {
    const auto [next, rec] = step_open_loop(rho, p, 1e-3, noise_from(rng, 1e-3));
    EXPECT_NEAR((next.mat - rho.mat).cwiseAbs().maxCoeff(), 0.0, 1e-14);
    rho = next;
  }
}

TEST(Stepper, DriftPreservesPopulations) {
  // gamma = 0, zero noise: the deterministic part of the step cannot move
  // the subspace populations.
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const DensityMatrix rho{testutil::random_density(gen)};
    const Vec4 before = populations(rho.mat);
    const auto [next, rec] = step_open_loop(rho, p, 1e-3, StepNoise{});
    const Vec4 after = populations(next.mat);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(after[k], before[k], 1e-12);
  }
}

TEST(Stepper, ZeroEfficiencyKillsDiffusion) {
  PlantParams p;
  p.eta = {0.0, 0.0, 0.0};
  std::mt19937_64 gen(6);
  GaussianRng rng(12);
  const DensityMatrix rho{testutil::random_density(gen)};
  StepNoise wild = noise_from(rng, 1e-3);
  const auto [a, rec_a] = step_open_loop(rho, p, 1e-3, wild);
  const auto [b, rec_b] = step_open_loop(rho, p, 1e-3, StepNoise{});
  EXPECT_NEAR((a.mat - b.mat).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  // The record still carries the raw noise.
  EXPECT_EQ(rec_a.dY[0], wild.dW[0]);
}

TEST(Stepper, ClosedLoopWithZeroGainMatchesOpenLoop) {
  PlantParams p;
  p.eta = {0.8, 0.9, 0.7};
  p.gamma = {0.01, 0.02, 0.005};
  GaussianRng rng(13);
  std::mt19937_64 gen(7);
  const DensityMatrix rho{testutil::random_density(gen)};
  const StepNoise noise = noise_from(rng, 1e-3);
  const auto [a, ra] = step_open_loop(rho, p, 1e-3, noise);
  const auto [b, rb] = step_closed_loop(rho, p, {0.0, 0.0, 0.0}, 1e-3, noise);
  EXPECT_EQ((a.mat - b.mat).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(ra.dY, rb.dY);
}

TEST(Stepper, RecordMatchesDefinition) {
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  std::mt19937_64 gen(8);
  GaussianRng rng(14);
  const DensityMatrix rho{testutil::random_density(gen)};
  const StepNoise noise = noise_from(rng, 1e-3);
  const auto [next, rec] = step_open_loop(rho, p, 1e-3, noise);
  for (int k = 0; k < 3; ++k) {
    const double m = (ops().S(k) * rho.mat).trace().real();
    const double expected = 2.0 * std::sqrt(0.8 * 1.0) * m * 1e-3 + noise.dW[k];
    EXPECT_NEAR(rec.dY[k], expected, 1e-15);
  }
}

TEST(Stepper, TracePreservedBeforeRepair) {
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  p.gamma = {1.0 / 64, 1.0 / 64, 1.0 / 64};
  std::mt19937_64 gen(9);
  GaussianRng rng(15);
  DensityMatrix rho{testutil::random_density(gen)};
  SmeStepper st(p, 1e-4);
  StepDiagnostics diag;
  for (int i = 0; i < 2000; ++i) {
    const StepNoise noise = noise_from(rng, 1e-4);
    st.step(rho.mat, {2.0, 0.0, 0.5}, noise, &diag);
  }
  EXPECT_LE(diag.max_trace_dev, 1e-12);
}

TEST(Stepper, PurityNeverExceedsOne) {
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  p.gamma = {1.0 / 64, 1.0 / 64, 1.0 / 64};
  GaussianRng rng(16);
  DensityMatrix rho{basis_projector(4)};
  SmeStepper st(p, 1e-3);
  for (int i = 0; i < 5000; ++i) {
    const StepNoise noise = noise_from(rng, 1e-3);
    st.step(rho.mat, {2.8, 0.0, 0.0}, noise);
    const double purity = (rho.mat * rho.mat).trace().real();
    EXPECT_LE(purity, 1.0 + 1e-10);
  }
  EXPECT_TRUE(is_valid_density(rho, 1e-12, 1e-12, 1e-10));
}

TEST(Stepper, EfficientMeasurementKeepsPureStatesPure) {
  // eta = 1, gamma = 0, sigma = 0: the exact dynamics preserves purity.
  // 10^4 Euler steps at dt = 1e-4 must hold |tr(rho^2) - 1| <= 1e-6.
  PlantParams p;  // eta defaults to 1
  GaussianRng rng(17);
  Ket8 psi = (basis_ket(0) + basis_ket(4)) / std::sqrt(2.0);
  DensityMatrix rho{psi * psi.adjoint()};
  SmeStepper st(p, 1e-4);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const StepNoise noise = noise_from(rng, 1e-4, false);
    st.step(rho.mat, {0.0, 0.0, 0.0}, noise);
    worst = std::max(worst, std::abs((rho.mat * rho.mat).trace().real() - 1.0));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Stepper, MartingaleDriftIsZeroAtRandomStates) {
  // gamma = 0, sigma = 0: tr(Pi_k E[drho]) = 0. The expectation of the Euler
  // increment is the drift, so a zero-noise step must leave populations fixed.
  PlantParams p;
  p.eta = {0.8, 0.6, 0.9};
  std::mt19937_64 gen(10);
  SmeStepper st(p, 1e-3);
  for (int trial = 0; trial < 100; ++trial) {
    Mat8 rho = testutil::random_density(gen);
    const Vec4 before = populations(rho);
    st.step(rho, {0.0, 0.0, 0.0}, StepNoise{});
    const Vec4 after = populations(rho);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(after[k], before[k], 1e-12);
  }
}

TEST(Stepper, GeneratorConsistencyForCodeOverlap) {
  // Monte Carlo drift of f(rho) = tr(Pi_C rho) against the analytic value
  // sum_s (gamma_s + sigma_s^2) (p_s - p_C) over 1e5 draws, within 3 SE.
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  p.gamma = {0.02, 0.01, 0.03};
  const Vec3 sigma{0.5, 0.0, 1.0};
  const double dt = 1e-5;
  std::mt19937_64 gen(11);
  const Mat8 rho = testutil::random_density(gen);
  const Vec4 pops = populations(rho);
  double analytic = 0.0;
  for (int s = 0; s < 3; ++s)
    analytic +=
        (p.gamma[s] + sigma[s] * sigma[s]) * (pops[s + 1] - pops[0]);

  SmeStepper st(p, dt);
  GaussianRng rng(18);
  const std::uint64_t n = 100000;
  double sum = 0.0, sumsq = 0.0;
  const double sq = std::sqrt(dt);
  for (std::uint64_t i = 0; i < n; ++i) {
    StepNoise noise;
    for (int k = 0; k < 3; ++k) noise.dW[k] = rng.normal() * sq;
    for (int j = 0; j < 3; ++j) noise.dB[j] = rng.normal() * sq;
    Mat8 r = rho;
    st.step(r, sigma, noise);
    const double f = populations(r)[0];
    sum += f;
    sumsq += f * f;
  }
  const double mean = sum / double(n);
  const double var = (sumsq - double(n) * mean * mean) / double(n - 1);
  const double se_drift = std::sqrt(var / double(n)) / dt;
  const double mc_drift = (mean - pops[0]) / dt;
  EXPECT_NEAR(mc_drift, analytic, 3.0 * se_drift);
}

TEST(Stepper, ControlDrivesFlippedSubspaceTowardCode) {
  // sigma_1 large from |100><100|: E[p_1] decreases.
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  const double dt = 1e-3;
  SmeStepper st(p, dt);
  double mean_p1 = 0.0;
  const int n_traj = 1000;
  for (int t = 0; t < n_traj; ++t) {
    GaussianRng rng(trajectory_seed(900, t));
    Mat8 rho = basis_projector(4);
    for (int i = 0; i < 500; ++i) {
      StepNoise noise;
      const double sq = std::sqrt(dt);
      for (int k = 0; k < 3; ++k) noise.dW[k] = rng.normal() * sq;
      for (int j = 0; j < 3; ++j) noise.dB[j] = rng.normal() * sq;
      st.step(rho, {2.828, 0.0, 0.0}, noise);
    }
    mean_p1 += populations(rho)[1];
  }
  mean_p1 /= n_traj;
  EXPECT_LT(mean_p1, 0.75);
}

TEST(Stepper, GuardsRejectUnstableStep) {
  PlantParams p;
  p.Gamma = {50.0, 1.0, 1.0};
  std::mt19937_64 gen(12);
  const DensityMatrix rho{testutil::random_density(gen)};
  EXPECT_THROW(step_open_loop(rho, p, 1e-3, StepNoise{}),
               std::invalid_argument);
  PlantParams ok;
  EXPECT_THROW(step_closed_loop(rho, ok, {-1.0, 0.0, 0.0}, 1e-3, StepNoise{}),
               std::invalid_argument);
  EXPECT_THROW(step_open_loop(rho, ok, 0.0, StepNoise{}),
               std::invalid_argument);
}

TEST(Stepper, RepairCertifiesEigenvalueFloor) {
  // Drive a hard closed-loop stretch and verify the post-repair floor that
  // the adaptive certificate promises.
  PlantParams p;
  p.eta = {0.8, 0.8, 0.8};
  p.gamma = {0.05, 0.05, 0.05};
  GaussianRng rng(19);
  DensityMatrix rho{basis_projector(4)};
  SmeStepper st(p, 1e-3);
  StepDiagnostics diag;
  diag.track_expensive = true;
  for (int i = 0; i < 3000; ++i)
    st.step(rho.mat, {2.828, 1.0, 0.0}, noise_from(rng, 1e-3), &diag);
  EXPECT_GE(diag.min_eig_post, -1e-10);
  EXPECT_LE(diag.max_purity, 1.0 + 1e-10);
  EXPECT_LE(diag.max_trace_dev, 1e-12);
  EXPECT_GT(diag.eig_clip_repairs, 0u);
}
