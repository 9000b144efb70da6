#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rgqed3/fermion.hpp"
#include "rgqed3/grassmann.hpp"
#include "rgqed3/lattice.hpp"

namespace rgqed3 {

// Generators for a polymer: psi (omega = 0) and psibar (omega = 1) on the fine
// sites of X, optionally chi/chibar on ordered pairs (x, y) of distinct sites.
// Species 0 for psi-type, 1 for chi-type.
struct FieldUniverse {
  std::vector<int> sites;                 // fine site indices, sorted
  std::vector<std::pair<int, int>> pairs; // fine site indices (x, y)

  int npsi() const { return 8 * int(sites.size()); }
  int ngen() const { return npsi() + 8 * int(pairs.size()); }
  int psi(int i, int beta) const { return 8 * i + beta; }
  int psibar(int i, int beta) const { return 8 * i + 4 + beta; }
  int chi(int p, int beta) const { return npsi() + 8 * p + beta; }
  int chibar(int p, int beta) const { return npsi() + 8 * p + 4 + beta; }
  std::vector<int> species() const;
  int site_pos(int fine_site) const;  // -1 if absent
  int pair_pos(int x, int y) const;   // -1 if absent
  // decode a generator: site or pair index, beta, omega, chi-type
  struct Gen { int idx, beta, omega; bool chi; };
  Gen decode(int g) const;
};

std::vector<int> polymer_sites(const Lattice& lat, const Polymer& X);
FieldUniverse make_universe(const Lattice& lat, const Polymer& X, bool with_chi);
// re-index a kernel from one universe into a larger one
Kernel embed(const Kernel& e, const FieldUniverse& from, const FieldUniverse& to);

// e += v * g1 g2 (in this order)
void add_pair(Kernel& e, int g1, int g2, cd v);
cd pair_coef(const Kernel& e, int g1, int g2);

// ||E_nm|| = n! m! sum |c(I)| over monomials with n psi and m chi generators
std::map<std::pair<int, int>, double> degree_norms(const Kernel& e, const FieldUniverse& U);

// physical distance |x - y| (short way, units of the fine spacing eta)
double site_distance(const Lattice& lat, int x, int y);
// exp(i e eta (tau A)(x, y)) along the fine lattice
cd transport(const Lattice& lat, const VecC& A, double e, int x, int y);

using KernelFn = std::function<Kernel(const Polymer&, const VecC&)>;
using UniverseFn = std::function<FieldUniverse(const Polymer&)>;

// X -> E(X, A) on the universe of X; kernels are algebra coefficients
// (kernel values times the measure eta^3 per psi, eta^6 per chi).
class PolymerFunction {
 public:
  PolymerFunction() = default;
  PolymerFunction(const Lattice* lat, std::vector<Polymer> support, KernelFn fn, UniverseFn ufn,
                  double e, bool has_chi = false);

  const Lattice* lat = nullptr;
  std::vector<Polymer> support;
  KernelFn fn;
  UniverseFn ufn;
  double e = 0;          // e_k, enters transports
  bool has_chi = false;

  Kernel eval(const Polymer& X, const VecC& A) const { return fn(X, A); }
  FieldUniverse universe(const Polymer& X) const { return ufn(X); }
  double volume(const Polymer& X) const;
};

// Test family on small polymers: energy c0 + plaquette term + local log det,
// a psibar psi mass term a, a gauge covariant gamma hopping b, an optional
// non-symmetric onsite psibar g0 psi, and a quartic (psibar psi)^2 term q.
// All scaled by amp * exp(-decay * d_M(X)).
struct ToyParams {
  double c0 = 0.3, cF = 0.2, cdet = 0.1, a = 0.5, b = 0.25, g0 = 0.0, q = 0.05;
  double amp = 1.0, decay = 1.0;
  double e = 0.1;
  double dirac_mass = 1.0;  // mass of the local Dirac operator in the log det
  int cap = 3;              // polymers with at most cap cubes
  int large_line = 0;       // also include straight polymers of this length (0: none)
};
PolymerFunction toy_family(const Lattice& lat, const ToyParams& p);
// the local log det piece alone
double local_logdet(const Lattice& lat, const Polymer& X, const VecC& A, double e, double mass);
// E(X) = c on every polymer of the support (A independent)
PolymerFunction constant_family(const Lattice& lat, int cap, cd c);
// single mass insertion c int_box psibar psi on one cube
PolymerFunction mass_insertion_family(const Lattice& lat, int cube, cd c);

// ---- norms
struct NormParams {
  double ek = 0.1;
  double eps = 0.01;
  double kappa = 2.0;
  double alpha = 0.5;
  int samples = 8;
  std::uint64_t seed = 1;
  bool include_zero = true;  // A = 0 is always in the domain
};
std::pair<double, double> h_pair(double ek, double eps);  // (e^{-1/4}, e^{-1/4+eps})

// Sobol points over a few smooth Fourier modes, scaled into the field domain
// R_k (sup |A|, sup |dA|, Holder). Deterministic given the seed.
std::vector<VecC> sample_fields(const Lattice& lat, const NormParams& p, int level);

struct NormReport {
  double value = 0;     // sup_X sup_A ||E(X, A)||_h e^{kappa d_M(X)}
  Polymer argmax;
  int nfields = 0;
};
NormReport polymer_norm(const PolymerFunction& E, const NormParams& p, int level = -1);
double kernel_norm_h(const Kernel& e, const FieldUniverse& U, double h1, double h2);

// ---- extraction
bool is_small(const Lattice& lat, const Polymer& X);
struct ExtractionResult {
  double eps = 0;          // epsilon(E) at the reference cube
  cd eps_c = 0;            // before taking the real part
  Mat4 mmat = Mat4::Zero();  // m(E) as a spin matrix
  double m = 0;            // tr m / 4, real part
  double m_nonscalar = 0;  // |m - (tr m / 4) I|
  double m_imag = 0;
  double eps_spread = 0;   // max over cubes of |eps(E, box) - eps(E)|
  std::map<Polymer, cd> alpha0;
  std::map<Polymer, Mat4> alpha2;
  PolymerFunction RE;
};
ExtractionResult extract(const PolymerFunction& E, int ref_cube = 0);

// sum_X E(X) against -eps Vol - m int psibar psi + sum_X RE(X) on the global universe
double decomposition_residual(const PolymerFunction& E, const ExtractionResult& ex, const VecC& A);
struct RestrictedCheck {
  double residual = 0;
  int boundary_polymers = 0;     // X small crossing the boundary of Lambda
  int nonzero_outside_cross = 0; // B(X) nonzero for X not crossing (must be 0)
};
// Lambda given by a cube mask
RestrictedCheck restricted_decomposition_check(const PolymerFunction& E, const ExtractionResult& ex,
                              const std::vector<char>& lambda, const VecC& A);

// ---- adjustment
// rewrites the psibar psi part of small polymers with x0, y0 dummy variables; the
// result lives on the universe with chi pairs
PolymerFunction adjust_natural(const PolymerFunction& E, double alpha);
// substitute chi(x, y) = |x-y|^{-alpha}(U(x,y) psi(y) - psi(x)) into E_nat and compare
// with E on a random field; returns the relative l1 difference
double adjust_identity_residual(const PolymerFunction& E, const PolymerFunction& Enat,
                              const Polymer& X, const VecC& A, double alpha);
struct AdjustBounds {
  double c20 = 0;  // ||E^nat_20|| / ||E_20||
  double c11 = 0;  // (||E^nat_11|| - ||E_11||) / (M L ||E_20||)
  double c02 = 0;  // (||E^nat_02|| - ||E_02||) / ((M L)^2 ||E_20||)
  double nat20_at_zero = 0;
};
AdjustBounds adjust_bounds(const PolymerFunction& E, const PolymerFunction& Enat, const Polymer& X,
                           const VecC& A, int L);

// ---- scaling
// (B E)_{L^{-1}} on the next level: blocks X to the smallest union of LM cubes,
// rescales the coefficients by L^{-n-(1+alpha)m} and the field A -> L^{-1/2} A
PolymerFunction reblock_scale(const PolymerFunction& E, const Lattice& next, double alpha);
Polymer block_closure(const Lattice& lat, const Lattice& next, const Polymer& X);
// norm of S_L E from kernel values and the level k+1 measure against
// L^{-n} L^{-(1+alpha) m} ||E_nm(X, A_L)||; returns the max relative difference
double kernel_scaling_residual(const PolymerFunction& E, const Polymer& X, const VecC& A, double alpha, int L);

// ---- symmetry properties of E_00
struct WardCheck {
  double derivative = 0;  // d/dt E00(X, A + t d lambda) at 0
  double scale = 0;       // |d/dt E00(X, A + t f)| for a random f
  double residual = 0;    // derivative / scale
};
WardCheck ward_check(const PolymerFunction& E, const Polymer& X, const VecC& A, const VecR& lambda,
                     const VecC& f);
// E00(X, -A) - E00(X, A) and the odd derivatives at 0 along f
struct ChargeCheck {
  double even = 0;
  double d1 = 0, d3 = 0;
  double scale = 0;
};
ChargeCheck charge_check(const PolymerFunction& E, const Polymer& X, const VecC& A, const VecC& f);
// max over (n, m) of | ||E_nm(X, A - d lambda)|| - ||E_nm(X, A)|| | / ||E_nm(X, A)||
double norm_gauge_residual(const PolymerFunction& E, const Polymer& X, const VecC& A, const VecR& lambda);
// E(X) unchanged when A changes on bonds not meeting X
double locality_residual(const PolymerFunction& E, const Polymer& X, const VecC& A, Rng& rng);

// ---- localization by interpolation
struct InterpFamily {
  int ncubes = 0;
  std::vector<Polymer> base;
  // F(s, X_i): the family value for base polymer i at weakening s
  std::function<cd(int, const std::vector<cd>&)> F;
};
// exact: int ds d/ds = f(1) - f(0) in every variable of Y - X
std::map<Polymer, cd> localize_by_interpolation(const InterpFamily& fam);
// same through Gauss-Legendre in s and Cauchy integrals for the mixed derivatives
std::map<Polymer, cd> localize_by_quadrature(const InterpFamily& fam, double radius, int ngl = 6,
                                             int ncauchy = 8);
// sum_i F(1, X_i)
cd interpolation_total(const InterpFamily& fam);
// sup_{|s_j| = r} |F| / r^n against the mixed derivative of order n at s
struct CauchyBound {
  double derivative = 0, bound = 0;
};
CauchyBound cauchy_bound(const InterpFamily& fam, int i, const std::vector<int>& vars, double radius,
                         int ncauchy = 16);
InterpFamily random_linear_family(int ncubes, const std::vector<Polymer>& base, Rng& rng,
                                  double scale = 0.3);

// ---- Mayer expansion and cluster exponentiation
struct MayerResult {
  std::map<Polymer, cd> K;           // K(Y) (numeric weights) or its fluctuation integral H(Y)
  double factorization = 0;          // max |H(Y) - prod_j H(Y_j)|
  int nconnected = 0;
  std::map<Polymer, cd> Esharp;      // connected-graph (Ursell) series up to max_order
  std::map<Polymer, cd> Esharp_mobius;  // sum_{U in X} (-1)^{|X-U|} log Z_U
  std::vector<double> order_size;    // sum of |order-n contributions|
  double ursell_vs_mobius = 0;
  double disconnected_mobius = 0;    // max |E#(X)| over disconnected X
  cd lhs, rhs;                       // exp(sum E#) and 1 + sum_Y H(Y)
  double rel = 0;
  double min_abs_z = 0;              // smallest |Z_U|
  double spectral = 0;               // max_Y sum_{Y' incompatible with Y} |H(Y')| e^{|Y'|}
  bool divergent = false;
};
// numeric weights E(X_i); H = K
MayerResult mayer_cluster(const Lattice& lat, const std::vector<Polymer>& polymers,
                          const std::vector<cd>& weights, int max_order = 6);

// degree <= 4 Grassmann weights on one generator pair per cube, integrated
// against an ultralocal Gaussian (diagonal covariance)
struct GrassmannWeights {
  std::vector<int> cubes;  // cube of each generator pair
  PairBlock blk;
  MatC Gamma;
  std::vector<Kernel> E;
};
GrassmannWeights fluctuation_weights(const std::vector<Polymer>& polymers, double scale, Rng& rng);
MayerResult mayer_cluster(const Lattice& lat, const std::vector<Polymer>& polymers,
                          const GrassmannWeights& w, int max_order = 6);

// ---- serialization
void dump_polymer_function(const PolymerFunction& E, const VecC& A, const std::string& dir, int max_polymers = 64);

}  // namespace rgqed3
