#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <complex>
#include <stdexcept>

namespace ctqec {

using Complex = std::complex<double>;
using Mat8 = Eigen::Matrix<Complex, 8, 8>;
using Ket8 = Eigen::Matrix<Complex, 8, 1>;
using Vec3 = std::array<double, 3>;
using Vec4 = std::array<double, 4>;

inline constexpr int kDim = 8;

// Basis ordering: |q1 q2 q3> lives at flat index 4*q1 + 2*q2 + q3.
// X_j flips qubit j, i.e. XORs the flat index with kFlipMask[j].
inline constexpr std::array<int, 3> kFlipMask = {4, 2, 1};

// Sign of syndrome operator S_k on basis state a, with sigma_z|0> = +|0>.
// S_1 = Z2 Z3, S_2 = Z1 Z3, S_3 = Z1 Z2 (k is 0-based here).
constexpr double syndrome_sign(int k, int a) {
  const int z1 = 1 - 2 * ((a >> 2) & 1);
  const int z2 = 1 - 2 * ((a >> 1) & 1);
  const int z3 = 1 - 2 * (a & 1);
  return k == 0 ? double(z2 * z3) : (k == 1 ? double(z1 * z3) : double(z1 * z2));
}

inline constexpr std::array<std::array<double, 8>, 3> kSyndromeSign = [] {
  std::array<std::array<double, 8>, 3> t{};
  for (int k = 0; k < 3; ++k)
    for (int a = 0; a < 8; ++a) t[k][a] = syndrome_sign(k, a);
  return t;
}();

// Which of the four syndrome subspaces basis state a belongs to:
// 0 = code space span(|000>,|111>), j = qubit-j flipped (patterns
// (+,+,+), (+,-,-), (-,+,-), (-,-,+); the product of signs is always +1).
constexpr int subspace_of(int a) {
  if (syndrome_sign(0, a) > 0)
    return syndrome_sign(1, a) > 0 ? 0 : 1;
  return syndrome_sign(1, a) > 0 ? 2 : 3;
}

struct DensityMatrix {
  Mat8 mat;
};

struct OperatorSet {
  Mat8 S1, S2, S3;
  Mat8 X1, X2, X3;
  Mat8 PiC, Pi1, Pi2, Pi3;
  Mat8 I8;

  const Mat8& S(int k) const { return k == 0 ? S1 : (k == 1 ? S2 : S3); }
  const Mat8& X(int j) const { return j == 0 ? X1 : (j == 1 ? X2 : X3); }
  // k = 0 is the code projector, k = 1..3 the flipped subspaces.
  const Mat8& Pi(int k) const {
    switch (k) {
      case 0: return PiC;
      case 1: return Pi1;
      case 2: return Pi2;
      default: return Pi3;
    }
  }
};

inline Ket8 basis_ket(int a) {
  Ket8 v = Ket8::Zero();
  v(a) = Complex(1.0, 0.0);
  return v;
}

inline Mat8 basis_projector(int a) {
  Mat8 m = Mat8::Zero();
  m(a, a) = Complex(1.0, 0.0);
  return m;
}

// Fixed operators of the three-qubit bit-flip code:
// S_k as diagonal sign matrices, X_j as bit-flip permutations,
// Pi_C = (I + S1 + S2 + S3)/4 and Pi_j = X_j Pi_C X_j.
inline OperatorSet build_operators() {
  OperatorSet ops;
  ops.I8 = Mat8::Identity();
  Mat8* syn[3] = {&ops.S1, &ops.S2, &ops.S3};
  for (int k = 0; k < 3; ++k) {
    *syn[k] = Mat8::Zero();
    for (int a = 0; a < 8; ++a) (*syn[k])(a, a) = kSyndromeSign[k][a];
  }
  Mat8* flip[3] = {&ops.X1, &ops.X2, &ops.X3};
  for (int j = 0; j < 3; ++j) {
    *flip[j] = Mat8::Zero();
    for (int a = 0; a < 8; ++a) (*flip[j])(a ^ kFlipMask[j], a) = 1.0;
  }
  ops.PiC = 0.25 * (ops.I8 + ops.S1 + ops.S2 + ops.S3);
  ops.Pi1 = ops.X1 * ops.PiC * ops.X1;
  ops.Pi2 = ops.X2 * ops.PiC * ops.X2;
  ops.Pi3 = ops.X3 * ops.PiC * ops.X3;
  return ops;
}

// Subspace populations (p_C, p_1, p_2, p_3) from the diagonal sector masks,
// clipped to [0,1]. Equals tr(Pi_k rho) because every Pi_k is diagonal.
inline Vec4 populations(const Mat8& rho) {
  Vec4 p{0.0, 0.0, 0.0, 0.0};
  for (int a = 0; a < 8; ++a) p[subspace_of(a)] += rho(a, a).real();
  for (double& v : p) v = std::clamp(v, 0.0, 1.0);
  return p;
}

inline Vec4 populations(const DensityMatrix& rho, const OperatorSet& ops) {
  Vec4 p;
  for (int k = 0; k < 4; ++k) {
    const double v = (ops.Pi(k) * rho.mat).trace().real();
    p[k] = std::clamp(v, 0.0, 1.0);
  }
  return p;
}

struct IntegratorBlowup : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double min_eigenvalue(const Mat8& herm) {
  Eigen::SelfAdjointEigenSolver<Mat8> es(herm, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Integration drift repair: Hermitian part, eigenvalues clipped at zero,
// trace rescaled to one. Throws IntegratorBlowup when the pre-repair trace
// has collapsed (<= 1e-8), which signals a diverged Euler step.
inline DensityMatrix renormalize(const DensityMatrix& rho) {
  Mat8 h = 0.5 * (rho.mat + rho.mat.adjoint());
  const double tr = h.trace().real();
  if (!(tr > 1e-8))
    throw IntegratorBlowup("renormalize: trace collapsed to " +
                           std::to_string(tr));
  Eigen::SelfAdjointEigenSolver<Mat8> es(h);
  if (es.info() != Eigen::Success)
    throw IntegratorBlowup("renormalize: eigendecomposition failed");
  Eigen::Matrix<double, 8, 1> lam = es.eigenvalues().cwiseMax(0.0);
  const double sum = lam.sum();
  if (!(sum > 1e-8))
    throw IntegratorBlowup("renormalize: clipped spectrum sums to " +
                           std::to_string(sum));
  lam /= sum;
  DensityMatrix out;
  out.mat = es.eigenvectors() *
            lam.cast<Complex>().asDiagonal() *
            es.eigenvectors().adjoint();
  out.mat = 0.5 * (out.mat + out.mat.adjoint());
  return out;
}

inline double hermiticity_deviation(const Mat8& m) {
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

inline bool is_valid_density(const DensityMatrix& rho,
                             double herm_tol = 1e-12,
                             double trace_tol = 1e-12,
                             double eig_tol = 1e-10) {
  if (hermiticity_deviation(rho.mat) > herm_tol) return false;
  if (std::abs(rho.mat.trace().real() - 1.0) > trace_tol) return false;
  return min_eigenvalue(0.5 * (rho.mat + rho.mat.adjoint())) >= -eig_tol;
}

}  // namespace ctqec
