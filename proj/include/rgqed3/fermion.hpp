#pragma once

#include <array>
#include <optional>

#include "rgqed3/lattice.hpp"

namespace rgqed3 {

using Mat4 = Eigen::Matrix4cd;

// {g_mu, g_nu} = delta_{mu nu}; g[3] anticommutes with g[0..2]
struct GammaRep {
  std::array<Mat4, 4> g;
  Mat4 C;      // charge conjugation
  Mat4 ghat3;  // sqrt(2) g[3], an involution
  Mat4 proj_plus, proj_minus;  // eigenprojectors of ghat3
};
const GammaRep& gamma_rep();
double gamma_algebra_residual();

struct FermionParams {
  double e = 1.0;     // e_k
  double mbar = 0.0;  // mbar_k
  double b = 1.0;
  bool antiperiodic = false;
};

double b_closed(double b, int L, int k);

// kron(scalar matrix, spin matrix)
MatC spin_kron(const MatC& a, const Mat4& s);
// block diagonal site-wise spin matrix on nsites
MatC spin_diag(int nsites, const Mat4& s);

// D-slash on the fine lattice with field s*A
MatC dirac_operator(const Lattice& lat, const VecC& A, double e, int sign = 1, bool antiperiodic = false);
// covariant forward derivative in direction mu (scalar, acts on each spin component)
MatC forward_derivative(const Lattice& lat, const VecC& A, double e, int mu, bool antiperiodic = false);

// scalar block averages on the fine field; spin_lift for spinors
MatC q_step(const Lattice& lat, const VecC& A, double e, int j, int sign, bool ap = false);
MatC qt_step(const Lattice& lat, const VecC& A, double e, int j, int sign, bool ap = false);
MatC q_chain(const Lattice& lat, const VecC& A, double e, int j1, int sign, bool ap = false);
MatC qt_chain(const Lattice& lat, const VecC& A, double e, int j1, int sign, bool ap = false);
MatC q_composed(const Lattice& lat, const VecC& A, double e, int j1, int sign, bool ap = false);

// level-k fermion operators on T^{-k}_{N-k}; needs 1 <= k < N unless noted
class FermionKit {
 public:
  FermionKit(const Lattice& lat, const VecC& A, FermionParams p, bool with_propagator = true);

  const Lattice& lat;
  VecC A;
  FermionParams p;
  int k;
  double bk, bk1, bL;  // b_k, b_{k+1}, b/L

  MatC Qk, Qk_m, QkT, QkT_m;  // Q_k(A), Q_k(-A), Q_k^T(A), Q_k^T(-A)  (spinor)
  MatC Q, Q_m, QT, QT_m;      // one step k -> k+1 on the unit lattice (spinor)
  MatC P;                     // Q^T(-A) Q(A) on T^0
  MatC Dm;                    // D-slash + mbar on the fine lattice

  int dim_fine() const { return 4 * lat.nsites(0); }
  int dim_unit() const { return 4 * lat.nsites(k); }

  MatC Pk() const { return QkT_m * Qk; }
  MatC Pk1() const;  // Q_{k+1}^T(-A) Q_{k+1}(A)
  MatC Sk_inverse() const;
  MatC Sk() const;
  MatC solve_S(const MatC& rhs) const;  // S_k rhs
  MatC solve_S_transpose(const MatC& rhs) const;  // S_k^T rhs
  const MatC& G() const { return G_; }  // Q_k S_k Q_k^T(-A)
  MatC Dk() const;
  MatC Gamma_k() const;
  MatC B_k() const;
  MatC S0_inverse() const;
  MatC S0() const;
  MatC G0() const;  // Q_k S0_{k+1} Q_k^T(-A)
  MatC gamma_k_rhs() const;
  MatC Hk() const;  // b_k S_k Q_k^T(-A)
  MatC Tk() const;  // left inverse of H_k

  // y-family, spin coefficients alpha, beta as 4x4 matrices
  Mat4 alpha(double y) const;
  Mat4 beta(double y) const;
  MatC B_y(double y) const;
  MatC Gamma_y_direct(double y) const;  // (D_k + bL^{-1} P + i g3 y)^{-1}
  MatC S_y_inverse(double y) const;
  MatC G_y(double y) const;             // Q_k S_{k,y} Q_k^T(-A) via the small update
  MatC G_y_direct(double y) const;      // same via the full inverse
  MatC Gamma_y_rep(double y, bool direct = false) const;

 private:
  Eigen::PartialPivLU<MatC> luS_;
  MatC G_;
};

// resolvent V_k(A, Z) from its hopping formula
MatC resolvent_V(const Lattice& lat, const VecC& A, const VecC& Z, FermionParams p);

// lattice symmetry: r is a signed permutation of axes, S the spin matrix
struct LatticeSymmetry {
  std::array<int, 3> perm;  // new axis mu gets old axis perm[mu]
  std::array<int, 3> sign;
  Mat4 S;
};
LatticeSymmetry rotation_e2();    // pi/2 about axis 2
LatticeSymmetry reflection_e0();  // x0 -> -x0
VecC transform_gauge(const Lattice& lat, const VecC& A, const LatticeSymmetry& r);
MatC transform_matrix(const Lattice& lat, const LatticeSymmetry& r);  // psi -> psi_r

VecC gauge_transform_field(const Lattice& lat, int level, const VecC& A, const VecR& lambda);
MatC gauge_phase(const Lattice& lat, int level, const VecR& lambda, double e);  // spinor diag e^{ie lambda}

// Q(A) Q^T(-A) = I, P^2 = P and composition vs the tau formula over random complex A;
// draw d uses Rng(seed + d), so the parallel and serial sweeps agree exactly
struct AveragingSweep {
  double qqt = 0, pp = 0, chain = 0;
  double max() const { return std::max({qqt, pp, chain}); }
};
AveragingSweep averaging_sweep(const Lattice& lat, int k, int draws, std::uint64_t seed, double e, bool parallel = true);

// relative residuals; S_k is tested on ncols random columns
struct SymmetryReport {
  double gauge_D = 0, gauge_Q = 0, gauge_S = 0, gauge_Dk = 0;
  double charge_D = 0, charge_S = 0, charge_Dk = 0;
  double rot_D = 0, rot_S = 0, refl_D = 0, refl_S = 0;
  double det_imag = 0;  // |Im det| / |det| of D-slash + mbar
  double max() const;
};
SymmetryReport symmetry_suite(const Lattice& lat, const VecR& A, const VecR& lambda, FermionParams p, Rng& rng,
                              int ncols = 4);

}  // namespace rgqed3
