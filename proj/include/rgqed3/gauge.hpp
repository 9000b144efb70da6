#pragma once

#include <string>
#include <vector>

#include "rgqed3/lattice.hpp"

namespace rgqed3 {

// Real gauge operators on T^{-k}_{N-k}. Fields are vectors over bonds
// bond(j, site, mu) with positive orientation; the reversed bond carries minus the value.
// Inner products at level j carry the site weight spacing(j)^3, so adjoints
// between levels pick up ratios of weights.

MatR grad_matrix(const Lattice& lat, int j);   // scalars -> bonds, difference / spacing
MatR curl_matrix(const Lattice& lat, int j);   // bonds -> plaquettes, circulation / spacing
MatR qbond_step(const Lattice& lat, int j);    // bonds at level j -> bonds at level j+1
MatR qbond_chain(const Lattice& lat, int j1);  // composition, fine -> level j1
MatR qbond_explicit(const Lattice& lat, int j1);  // straight-line formula, fine -> level j1
MatR qscalar_step(const Lattice& lat, int j);
MatR qscalar_chain(const Lattice& lat, int j1);
// adjoint of a level j0 -> j1 map A: (w_{j1}/w_{j0}) A^t
MatR level_adjoint(const Lattice& lat, const MatR& A, int j0, int j1);

// (tau A)(y, x) for y on level j+1 and x in B(y), x != y, as rows on level-j bonds
MatR tau_block(const Lattice& lat, int j);
// the axial constraints tau(Q_j A) = 0, j < j1, stacked as rows on fine bonds
MatR tau_constraints(const Lattice& lat, int j1);
// telescoped tau_k(y, x) for every fine x (rows indexed by fine site), fine bonds
MatR tau_k_matrix(const Lattice& lat, int j1);

VecC field_strength(const Lattice& lat, int j, const VecC& A);
double field_strength_norm2(const Lattice& lat, int j, const VecC& A);
VecC gauge_transform(const Lattice& lat, int j, const VecC& A, const VecR& lambda);
// psi -> e^{i e lambda} psi on a spinor field (4 components per site)
VecC gauge_transform_spinor(const VecC& psi, const VecR& lambda, double e);

struct FieldDomainParams {
  double ek = 0.1;
  double eps = 0.01;
  double alpha = 0.5;
};
struct DomainNorms {
  double sup_A = 0, sup_dA = 0, sup_holder = 0;
};
// sup norms of A, of its lattice derivative and of the Holder derivative of the latter
DomainNorms domain_norms(const Lattice& lat, const VecC& A, double alpha);
bool in_domain_R(const Lattice& lat, const VecC& A, const FieldDomainParams& p);

// orthonormal basis of ker K (rank by relative threshold)
MatR nullspace(const MatR& K, double rtol = 1e-10);
// minimize <x, S x> subject to K x = R a; columns of the result are the minimizers
// for unit vectors a. Throws if K is inconsistent beyond tol.
MatR constrained_minimizer(const MatR& S, const MatR& K, const MatR& R, double tol = 1e-9);

// orthogonal projection onto Delta(ker Q) on fine scalars, Q = qscalar_chain(j1)
MatR r_projection_direct(const Lattice& lat, int j1);
MatR r_projection(const Lattice& lat, int j1, double a = 1.0);

class GaugeKit {
 public:
  explicit GaugeKit(const Lattice& lat, double a = 1.0, bool with_step = true);

  const Lattice& lat;
  int k;
  double a;
  bool has_step;  // k < N: one more averaging step exists

  MatR d0, grad0, lap0;  // fine curl, fine gradient, fine scalar Laplacian
  MatR Qk, QkT;          // bond averages fine -> level k and adjoint
  MatR Rk, Pk;           // scalar projections on fine sites
  MatR Gk;               // Landau Green's function on fine bonds
  MatR Nk;               // (Qk Gk QkT)^{-1} on unit bonds
  MatR H;                // Landau minimizer, unit bonds -> fine bonds
  MatR Hx;               // axial minimizer
  MatR Delta;            // H^T delta d H on unit bonds
  MatR dunit;            // curl on unit bonds
  MatR gradunit;         // gradient on unit sites

  // one step k -> k+1 (only when has_step)
  MatR Q, QT;           // unit bonds -> L-lattice bonds
  MatR tau;             // tau rows on unit bonds
  MatR Ups;             // orthonormal basis of the free variables (columns on unit bonds)
  MatR Cmat;            // Z = C Z~ for coefficients Z~ in the Ups basis
  std::vector<int> central;  // central bond of each L-lattice bond
  MatR Ck, Ck_half;     // (C^T Delta C)^{-1} and its square root
  MatR Mop;             // one-forms -> scalars on the unit lattice
  MatR G0;              // G^0_{k+1} on fine bonds
  MatR Ctil;            // inverse of Delta_k + a Q^T Q on ker tau
  MatR PiTau;           // orthogonal projector onto ker tau

  int nfine_bonds() const { return lat.nbonds(0); }
  int nunit_bonds() const { return lat.nbonds(k); }

  MatR Hk_minimizer_direct() const;  // nullspace solve of the Landau problem
  MatR G0_next() const;              // recomputes G^0_{k+1}
  MatR Gtilde_next() const;          // G~_{k+1}
  MatR covariance_lhs() const { return Cmat * Ck * Cmat.transpose(); }
  MatR covariance_rhs() const;
  // C restricted to a union of unit sites Y: bonds with at least one end in Y
  MatR Ck_restricted(const std::vector<int>& unit_sites) const;
  std::vector<int> bonds_touching(const std::vector<int>& unit_sites) const;
  MatR Ctilde() const;
  MatR ker_tau_projector() const;

  void dump(const std::string& dir) const;
};

// conditioning identity for a coarse F: returns |lhs - rhs| / max(|lhs|, tiny)
struct ConditioningResidual {
  double lhs = 0, rhs = 0, rel = 0;
};
ConditioningResidual verify_conditioning_C(const GaugeKit& kit, const VecR& F);

// lower bound ratios ||Q^T A||^2/||A||^2 and the ker tau projected version
struct QTRatios {
  double plain = 0, projected = 0;
};
QTRatios verify_QT_lower_bound(const GaugeKit& kit, const VecR& A);
// infimum of both ratios over all A (generalized eigenvalues)
QTRatios QT_ratio_infimum(const GaugeKit& kit);
// surface averaging Q_s: crossing bonds of each face, Q Q_s^T = I, Q_s Q_s^T = L
MatR qsurface(const GaugeKit& kit);

// Gaussian expectation of a degree <= 2 polynomial
//   F(A_Lam) = c + g . A_Lam + A_Lam^T Hq A_Lam
struct QuadPoly {
  double c = 0;
  VecR g;
  MatR Hq;
};
struct ConditioningSplit {
  double direct = 0, form1 = 0, form2 = 0;
};
ConditioningSplit conditioning_split(const MatR& T, const std::vector<int>& lam, const QuadPoly& F);

// exponential decay profile max_{dist = r} |K(i, j)| and a fitted rate
struct DecayFit {
  std::vector<double> profile;
  double gamma = 0;
};
DecayFit decay_fit(const MatR& K, const std::vector<Coord>& rows, const std::vector<Coord>& cols,
                   const Lattice& lat, int unit_stride);
std::vector<Coord> bond_positions(const Lattice& lat, int j);
std::vector<Coord> site_positions(const Lattice& lat, int j);

// binary dump, row-major little-endian complex pairs
void write_matrix_bin(const std::string& path, const MatC& M);

}  // namespace rgqed3
