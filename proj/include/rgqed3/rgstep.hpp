#pragma once

#include <functional>
#include <vector>

#include "rgqed3/fermion.hpp"
#include "rgqed3/grassmann.hpp"

namespace rgqed3 {

// b_1..b_kmax by the recursion b_{k+1} = b b_k / (b_k + b/L)
std::vector<double> b_sequence(double b, int L, int kmax);

// log N_k = -4 s_{N-k-1} log(b L^2), log of the second normalization -4 s_{N-k} log b_k
double log_norm_step(double b, int L, int N, int k);
double log_norm_total(double b, int L, int N, int k);

struct ComposeResiduals {
  double one_step = 0;        // one step plus previous form vs b_{k+1}/L form
  double crit_vs_dot = 0;  // Psi^crit = Psi^dot(Psi_{k+1}, psi^0_{k+1})
  double psi0_vs_psik = 0; // psi^0_{k+1} = psi_k(Psi^crit)
  double cross = 0;        // off-diagonal blocks after the shift
  double w_block = 0;      // W block vs D_k + b/L P
  double s0_block = 0;     // Psi_{k+1} block vs S^0_{k+1}
  double max() const;
};
ComposeResiduals compose_check(const FermionKit& kit, Rng& rng);

// log det of an invertible self-adjoint T through the R0-split contour formula
struct LogDet {
  cd value;
  double min_abs_eig = 0;
  int evaluations = 0;
};
LogDet logdet_selfadjoint(const MatC& T, double R0, double tol = 1e-13);
// log det by LU, imaginary part in (-pi, pi]
cd logdet_lu(const MatC& M);

// composite Gauss-Legendre on [0, Y0] plus the tail [Y0, inf) as y = Y0/t,
// panels doubled until the change is below tol
struct HalfLineResult {
  VecC value;
  int panels = 0;
  double change = 0;
};
HalfLineResult integrate_half_line(const std::function<VecC(double)>& f, double Y0, double tol,
                                   int max_panels = 256);

// y-integrand of the delta Z formula split by M-cube: entry c is the trace over
// sites of cube c of -i b_k^2 g3 B_y G_y B_y
VecC deltaz_integrand(const FermionKit& kit, double y);
double deltaz_volume_log(const FermionKit& kit);

struct DeltaZ {
  cd log_formula;  // from the y integral
  cd log_direct;   // log det(D_k + b/L P)
  double rel = 0;  // |exp(diff) - 1|
  int panels = 0;
};
DeltaZ delta_z(const FermionKit& kit, double tol = 1e-10);
// log det(b_k (I - P) + (b_k + b/L) P) directly vs the explicit volume factor
double volume_factor_residual(const FermionKit& kit);

// per-cube pieces E^det(X, A) with X a single M-cube of the unit lattice
struct EDet {
  VecC pieces;
  cd total;
};
EDet e_det(const FermionKit& kitA, const FermionKit& kit0, double tol = 1e-10);

// one exact averaging step k = 0 -> 1 on a lattice with N = 1
struct TinyStep {
  TinyStep(const Lattice& lat, const VecC& A, FermionParams p);
  const Lattice& lat;
  FermionParams p;
  int n0, n1;       // spinor dimensions on T^0 and T^1
  double cw;        // b/L times the T^1 site weight L^3
  MatC D0;          // D-slash + mbar
  MatC Q, Q_m, QT, QT_m, P;
  MatC Gamma0;      // (D0 + b/L P)^{-1}
  MatC H, Hbar;     // Psi^crit = H Psi_1, Psibar^crit = Hbar Psibar_1
  MatC D1;          // b/L (I - b/L Q Gamma0 Q^T(-A)) on T^1

  PairBlock blk1() const { return {0, n1}; }
  // Psi_0 generators live in the pair block {0, n0} of their own universe
  PairBlock blk0() const { return {0, n0}; }

  // closed form: exp(-S^0_1) times the fluctuation integral of F0(Psi^crit + W)
  Kernel closed_form(const Kernel& F0) const;
  // brute force: sources from expanding the delta_G exponential, Wick contracted
  Kernel brute_force(const Kernel& F0) const;
  // normalization: N_0 det(D0 + b/L P) int R dPsi_1 vs det(D0) <F0>_{D0^{-1}}
  double normalization_residual(const Kernel& F0) const;
};

// Berezin integral over all generators of blk (top coefficient, block moved right)
Kernel berezin_block(const Kernel& e, const PairBlock& blk);

// int delta_G dPsi_1 with the shift Psi_1 - xi for random odd xi: the result must be
// the constant cw^{n1}; returns the relative l1 deviation
double delta_g_normalization_residual(int n1, double cw, Rng& rng);

// F0 examples on the T^0 universe of a tiny step
Kernel mass_insertion(const PairBlock& b0, int ngen);
Kernel quartic_two_sites(const PairBlock& b0, int ngen, int x, int y, int a, int c);

}  // namespace rgqed3
