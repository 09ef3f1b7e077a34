#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ctqec/algebra.hpp"

namespace ctqec {

struct ControllerParams {
  Vec3 alpha{0.95, 0.95, 0.95};  // activation thresholds, 1/2 < beta < alpha < 1
  Vec3 beta{0.6, 0.6, 0.6};      // deactivation thresholds
  double c = 1.5;
  Vec3 eta{0.8, 0.8, 0.8};       // efficiencies used in the gain formula
  Vec3 Gamma{1.0, 1.0, 1.0};     // measurement strengths used in the gain formula

  friend bool operator==(const ControllerParams&,
                         const ControllerParams&) = default;
};

inline void validate_controller(const ControllerParams& p) {
  for (int j = 0; j < 3; ++j) {
    const std::string idx = "[" + std::to_string(j) + "]";
    if (!(p.beta[j] > 0.5))
      throw std::invalid_argument("controller.beta" + idx + " must be > 1/2");
    if (!(p.beta[j] < p.alpha[j]))
      throw std::invalid_argument("controller requires beta < alpha at index " +
                                  std::to_string(j));
    if (!(p.alpha[j] < 1.0))
      throw std::invalid_argument("controller.alpha" + idx + " must be < 1");
    if (!(p.eta[j] >= 0.0 && p.eta[j] <= 1.0))
      throw std::invalid_argument("controller.eta" + idx + " must be in [0,1]");
    if (!(p.Gamma[j] > 0.0))
      throw std::invalid_argument("controller.Gamma" + idx + " must be > 0");
  }
  if (!(p.c > 0.0)) throw std::invalid_argument("controller.c must be > 0");
}

// Gain applied while channel j is active: sqrt(6 c eta_j Gamma_j / (2 alpha_j - 1)).
inline double controller_gain(const ControllerParams& p, int j) {
  return std::sqrt(6.0 * p.c * p.eta[j] * p.Gamma[j] / (2.0 * p.alpha[j] - 1.0));
}

struct ControllerState {
  std::array<bool, 3> active{false, false, false};  // hysteresis memory
  Vec3 sigma{0.0, 0.0, 0.0};

  friend bool operator==(const ControllerState&,
                         const ControllerState&) = default;
};

inline ControllerState initial_state() { return ControllerState{}; }

// Hysteresis rules, per channel: p_j >= alpha_j switches the noisy drive on,
// p_j <= beta_j switches it off, in between the previous value is kept.
// Threshold comparisons are inclusive. Inputs are clipped to [0,1].
inline ControllerState update(const ControllerState& state, const Vec3& p,
                              const ControllerParams& params) {
  ControllerState out = state;
  for (int j = 0; j < 3; ++j) {
    const double pj = std::clamp(p[j], 0.0, 1.0);
    if (pj >= params.alpha[j])
      out.active[j] = true;
    else if (pj <= params.beta[j])
      out.active[j] = false;
    out.sigma[j] = out.active[j] ? controller_gain(params, j) : 0.0;
  }
  return out;
}

}  // namespace ctqec
