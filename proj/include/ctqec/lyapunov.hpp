#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "ctqec/controller.hpp"
#include "ctqec/model.hpp"
#include "ctqec/rng.hpp"

namespace ctqec {

// Open-loop Lyapunov function: sum over ordered pairs of distinct subspaces
// of sqrt(p_k p_k'). Zero exactly when one subspace carries all population.
inline double V_open(const Vec4& p) {
  double v = 0.0;
  for (int k = 0; k < 4; ++k)
    for (int l = 0; l < 4; ++l) {
      if (l == k) continue;
      v += std::sqrt(std::max(0.0, p[k]) * std::max(0.0, p[l]));
    }
  return v;
}

inline double V_open(const Mat8& rho) { return V_open(populations(rho)); }

// Closed-loop Lyapunov function: sum_k sqrt(p_k + s) with s = p1 + p2 + p3.
// Zero exactly on code-space states; bounded by 3*sqrt(2).
inline double V_closed(const Vec3& p_flip) {
  double s = 0.0;
  for (double v : p_flip) s += std::max(0.0, v);
  double total = 0.0;
  for (double v : p_flip) total += std::sqrt(std::max(0.0, v) + s);
  return total;
}

inline double V_closed(const Mat8& rho) {
  const Vec4 p = populations(rho);
  return V_closed(Vec3{p[1], p[2], p[3]});
}

// Reading of the f_j shorthand inside the g(s,x) formula. kConsistent takes
// f_j = s(1+x_j), which makes g(s,x) identical to the population form of g
// and reproduces the corner value behind the heuristic rate; kPaperLiteral
// takes f_j = 1 - s - s x_j at face value. The two differ, and the
// cross-check test against the population form pins kConsistent.
enum class GConvention { kConsistent, kPaperLiteral };

inline double g_of(double s, double x1, double x2, double x3,
                   GConvention conv = GConvention::kConsistent) {
  const double x[3] = {x1, x2, x3};
  double total = 0.0;
  for (int j = 0; j < 3; ++j) {
    const int jp = (j + 1) % 3;
    const int jm = (j + 2) % 3;
    const double fj = conv == GConvention::kConsistent
                          ? s * (1.0 + x[j])
                          : 1.0 - s - s * x[j];
    const double a = 1.0 - fj;
    const double n1 = (x[jp] + x[jm]) * a;
    const double n2 = x[j] + (x[j] + x[jm]) * a;
    const double n3 = x[j] + (x[j] + x[jp]) * a;
    const double den = (1.0 + x[j]) * (1.0 + x[j]);
    total += (n1 * n1 + n2 * n2 + n3 * n3) / den;
  }
  return total;
}

// Population form of g; requires p1 + p2 + p3 > 0.
inline double g_of_populations(const Vec4& p) {
  const double q[3] = {p[1], p[2], p[3]};
  double total = 0.0;
  for (int j = 0; j < 3; ++j) {
    const int jp = (j + 1) % 3;
    const int jm = (j + 2) % 3;
    const double fj = 2.0 * q[j] + q[jp] + q[jm];
    const double a = 1.0 - fj;
    const double n1 = (q[jp] + q[jm]) * a;
    const double n2 = q[j] + (q[j] + q[jm]) * a;
    const double n3 = q[j] + (q[j] + q[jp]) * a;
    total += (n1 * n1 + n2 * n2 + n3 * n3) / (fj * fj);
  }
  return total;
}

struct RateEstimate {
  double r = 0.0;            // min(c_branch, g_branch)
  double c_branch = 0.0;     // c * min_j eta_j Gamma_j
  double g_branch = 0.0;     // (4 / (3 sqrt 2)) * g_min * min_j eta_j Gamma_j
  double g_min = 0.0;        // minimum of g over the constraint set K
  double heuristic_r = 0.0;  // 4 sqrt(2) (1 - max alpha)^2 * min_j eta_j Gamma_j
  double argmin_s = 0.0;
  double argmin_x1 = 0.0, argmin_x2 = 0.0, argmin_x3 = 0.0;
  int grid_resolution = 0;
};

inline double min_eta_gamma(const Vec3& eta, const Vec3& Gamma) {
  double m = eta[0] * Gamma[0];
  for (int j = 1; j < 3; ++j) m = std::min(m, eta[j] * Gamma[j]);
  return m;
}

namespace detail {

// K = { s in [0,1], x_j >= 0, x1+x2+x3 = 1, s x_j <= alpha_j }.
inline bool in_K(double s, double x1, double x2, double x3,
                 const Vec3& alpha) {
  if (s < -1e-12 || s > 1.0 + 1e-12) return false;
  if (x1 < -1e-12 || x2 < -1e-12 || x3 < -1e-12) return false;
  const double c = 1e-12;
  return s * x1 <= alpha[0] + c && s * x2 <= alpha[1] + c &&
         s * x3 <= alpha[2] + c;
}

}  // namespace detail

// Exponential-rate estimate for the closed loop. The g minimum is found by a
// dense grid over (s, x1, x2) followed by local grid refinement; the grid
// resolution used is reported alongside the estimate.
inline RateEstimate rate_estimate(const ControllerParams& cp,
                                  const PlantParams& pp,
                                  int grid_resolution = 200) {
  RateEstimate est;
  est.grid_resolution = grid_resolution;
  const double meg = min_eta_gamma(pp.eta, pp.Gamma);
  est.c_branch = cp.c * meg;
  double amax = cp.alpha[0];
  for (int j = 1; j < 3; ++j) amax = std::max(amax, cp.alpha[j]);
  est.heuristic_r = 4.0 * std::sqrt(2.0) * (1.0 - amax) * (1.0 - amax) * meg;

  const int n = grid_resolution;
  double best = std::numeric_limits<double>::infinity();
  double bs = 0.0, bx1 = 0.0, bx2 = 0.0;
  for (int is = 0; is <= n; ++is) {
    const double s = double(is) / n;
    for (int i1 = 0; i1 <= n; ++i1) {
      const double x1 = double(i1) / n;
      for (int i2 = 0; i2 + i1 <= n; ++i2) {
        const double x2 = double(i2) / n;
        const double x3 = 1.0 - x1 - x2;
        if (!detail::in_K(s, x1, x2, x3, cp.alpha)) continue;
        const double g = g_of(s, x1, x2, x3);
        if (g < best) {
          best = g;
          bs = s;
          bx1 = x1;
          bx2 = x2;
        }
      }
    }
  }

  // Local refinement around the grid argmin.
  double h = 1.5 / n;
  for (int round = 0; round < 8; ++round) {
    const int steps = 10;
    double rbest = best, rs = bs, rx1 = bx1, rx2 = bx2;
    for (int is = -steps; is <= steps; ++is) {
      const double s = std::clamp(bs + h * is / steps, 0.0, 1.0);
      for (int i1 = -steps; i1 <= steps; ++i1) {
        const double x1 = std::clamp(bx1 + h * i1 / steps, 0.0, 1.0);
        for (int i2 = -steps; i2 <= steps; ++i2) {
          const double x2 = std::clamp(bx2 + h * i2 / steps, 0.0, 1.0 - x1);
          const double x3 = 1.0 - x1 - x2;
          if (!detail::in_K(s, x1, x2, x3, cp.alpha)) continue;
          const double g = g_of(s, x1, x2, x3);
          if (g < rbest) {
            rbest = g;
            rs = s;
            rx1 = x1;
            rx2 = x2;
          }
        }
      }
    }
    best = rbest;
    bs = rs;
    bx1 = rx1;
    bx2 = rx2;
    h *= 0.3;
  }

  est.g_min = best;
  est.argmin_s = bs;
  est.argmin_x1 = bx1;
  est.argmin_x2 = bx2;
  est.argmin_x3 = 1.0 - bx1 - bx2;
  est.g_branch = (4.0 / (3.0 * std::sqrt(2.0))) * best * meg;
  est.r = std::min(est.c_branch, est.g_branch);
  return est;
}

enum class LyapunovKind { kOpen, kClosed };

struct GeneratorEstimate {
  double av = 0.0;  // Monte Carlo estimate of (E[V(rho + drho)] - V(rho)) / dt
  double se = 0.0;  // standard error of the estimate
  double v0 = 0.0;  // V(rho)
  std::uint64_t n = 0;
};

// Monte Carlo Markov-generator check against the actual integrator: one Euler
// step per draw, including the per-step repair. Chunked so the reduction
// order (and therefore the result) is independent of the thread count.
inline GeneratorEstimate generator_check(const DensityMatrix& rho,
                                         const Vec3& sigma,
                                         const PlantParams& params, double dt,
                                         std::uint64_t n_samples,
                                         std::uint64_t seed,
                                         LyapunovKind kind = LyapunovKind::kClosed,
                                         int threads = 1) {
  const SmeStepper stepper(params, dt);
  const double v0 =
      kind == LyapunovKind::kClosed ? V_closed(rho.mat) : V_open(rho.mat);
  const int n_chunks = 64;
  std::vector<double> sums(n_chunks, 0.0), sumsqs(n_chunks, 0.0);
  std::vector<std::uint64_t> counts(n_chunks, 0);

  auto run_chunk = [&](int chunk) {
    const std::uint64_t lo = n_samples * chunk / n_chunks;
    const std::uint64_t hi = n_samples * (chunk + 1) / n_chunks;
    GaussianRng rng(trajectory_seed(seed, 0x67656E00ULL + chunk));
    const double sq = std::sqrt(dt);
    double sum = 0.0, sumsq = 0.0;
    for (std::uint64_t i = lo; i < hi; ++i) {
      StepNoise noise;
      for (int k = 0; k < 3; ++k) noise.dW[k] = rng.normal() * sq;
      for (int j = 0; j < 3; ++j)
        noise.dB[j] = sigma[j] != 0.0 ? rng.normal() * sq : 0.0;
      Mat8 r = rho.mat;
      stepper.step(r, sigma, noise);
      const double v = kind == LyapunovKind::kClosed ? V_closed(r) : V_open(r);
      sum += v;
      sumsq += v * v;
    }
    sums[chunk] = sum;
    sumsqs[chunk] = sumsq;
    counts[chunk] = hi - lo;
  };

  if (threads <= 1) {
    for (int c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1))
          run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }

  double sum = 0.0, sumsq = 0.0;
  std::uint64_t n = 0;
  for (int c = 0; c < n_chunks; ++c) {
    sum += sums[c];
    sumsq += sumsqs[c];
    n += counts[c];
  }
  const double mean = sum / double(n);
  const double var =
      std::max(0.0, (sumsq - double(n) * mean * mean) / double(n - 1));
  GeneratorEstimate out;
  out.av = (mean - v0) / dt;
  out.se = std::sqrt(var / double(n)) / dt;
  out.v0 = v0;
  out.n = n;
  return out;
}

}  // namespace ctqec
