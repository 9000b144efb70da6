#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rgqed3/polymer.hpp"

namespace rgqed3 {

struct FlowParams {
  int L = 3, N = 2;
  int mlog = 0;          // M = L^mlog, K = N - mlog
  double e = 0.1;        // e at the last level
  double mbar = 1.0;
  double eps = 0.01;
  int p = 6, p0 = 4;
  double tol = 1e-12;
  int max_iter = 50;
  int K() const { return N - mlog; }
};

double flow_e(const FlowParams& p, int k);     // e_k = L^{-(N-k)/2} e
double flow_mbar(const FlowParams& p, int k);  // mbar_k = L^{-(N-k)} mbar
// max_k |e_{k+1} - sqrt(L) e_k| / e_{k+1}
double schedule_residual(const FlowParams& p);

// m_0..m_K and E_0..E_K; in the scalar modes E_k is a real number
struct FlowState {
  std::vector<double> m, E;
};

// step maps with Lipschitz metadata; Esharp(k, m, E) and LR(k, E) are already
// scaled to level k+1
struct StepMaps {
  std::string name;
  std::function<double(int, double)> eps_of, m_of, LR;
  std::function<double(int)> Edet, eps0;
  std::function<double(int, double, double)> Esharp;
  double lip_m = 0, lip_LR = 0, lip_sharp_m = 0, lip_sharp_E = 0;
};

FlowState zero_state(const FlowParams& p);
// boundary values enforced, interior entries uniform in (-r, r) times the B-norm scale
FlowState random_state(const FlowParams& p, Rng& rng, double r);

// m'_k = L^{-1} m_{k+1} - m(E_k) (k < K), m'_K = 0,
// E'_k = LR E_{k-1} + Edet_{k-1} + Esharp_{k-1}(m_{k-1}, E_{k-1}) (k > 0), E'_0 = 0
FlowState flow_map(const FlowParams& p, const StepMaps& f, const FlowState& x);
// sup_k max(e_k^{-3/4+8eps} |m_k|, e_k^{-1/4+7eps} |E_k|)
double flow_norm(const FlowParams& p, const FlowState& x);
double flow_distance(const FlowParams& p, const FlowState& a, const FlowState& b);
double boundary_residual(const FlowParams& p, const FlowState& x);  // |m_K| + |E_0|

struct FlowIter {
  int it = 0;
  double dist = 0;   // ||T xi - xi||
  double ratio = 0;  // dist / previous dist
  double norm = 0;   // ||xi||
};

struct EnergyFlow {
  std::vector<double> eps;  // eps_0..eps_K with eps_K = 0
  double c = 0;             // max_k |eps(E_k) + eps0_k| / e_k^{1/4-7eps}
  double bound_ratio = 0;   // max_k |eps_k| / (2 c e_k^{1/4-7eps})
  double bare_eps = 0;      // L^{3N} eps_0
  double bare_m = 0;        // L^N m_0
};

struct FlowSolution {
  FlowState xi;
  std::vector<FlowIter> history;
  std::string status;  // converged, diverged, left_B1, max_iter
  int iterations = 0;
  double max_ratio = 0;       // over iterations with dist above 1e3 tol
  double max_norm = 0;        // sup of ||xi|| over iterates
  int exit_level = -1;        // first level where an iterate left B1
  double boundary = 0;
  EnergyFlow energy;
  bool converged() const { return status == "converged"; }
};

FlowSolution solve_flow(const FlowParams& p, const StepMaps& f, const FlowState& init);
// eps_k = L^{-3} eps_{k+1} - eps(E_k) - eps0_k from eps_K = 0
EnergyFlow energy_backward(const FlowParams& p, const StepMaps& f, const FlowState& xi);
// geometric sum check: constant forcing c gives -c (1 - L^{-3(K-k)}) / (1 - L^{-3})
double energy_geometric_residual(const FlowParams& p, double c);

// affine maps with Lipschitz constant lip in the B norm, for the synthetic run
StepMaps affine_maps(const FlowParams& p, double lip, std::uint64_t seed = 1);
// fixed point of an affine T by one dense solve
FlowState affine_fixed_point(const FlowParams& p, const StepMaps& f);

// norm surrogate: every map saturates its bound with constant C
struct SurrogateParams {
  double Cm = 0.3;      // |m(E)| <= Cm e_k^{1/2} ||E||
  double CL = 0.5;      // ||LR E|| <= CL L^{-1/4+2eps} ||E||
  double det = 0.3;     // ||L E^det|| = det e_{k+1}^{1/4-2eps}
  double sharp = 0.3;   // ||L E#|| = sharp e_k^{1/4-6eps} (1 + tanh m + tanh E) / 3
  double eps0 = 0.1;    // eps0_k = eps0 e_k^{1/4-7eps}
  double eps_of = 1.0;  // eps(E) = eps_of ||E||
};
StepMaps surrogate_maps(const FlowParams& p, const SurrogateParams& s);

// ---- toy mode on polymer functions, M = 1
struct ToyFlowParams {
  FlowParams fp;
  int samples = 2;        // nonzero sample fields at the last level
  std::uint64_t seed = 1;
  double kappa = 1.0;
  double sharp = 0.02;    // E# amplitude
  double a0 = 0.05;       // bare mass insertion in E#
  double q0 = 0.05;       // quartic in E#
  double c00 = 0.05;      // vacuum energy in E#
  double rho = 0.5;       // feedback of eps(E_k) into E#
  double cdet0 = 0.1;     // level-0 det forcing (local log det ratio)
  double b = 1.0;
  double det_tol = 1e-10;
};

struct ToyLevel {
  int k = 0;
  double e = 0, m = 0, eps = 0, normE = 0, bnorm = 0;  // bnorm: B1 weight of this level
};

struct ToyFlowResult {
  FlowSolution sol;             // xi.E holds ||E_k||
  std::vector<ToyLevel> levels;
  double det_total = 0;         // sum of E^det pieces at the first nonzero sample, top step
  int nfields = 0;
  double seconds = 0;
  bool in_B1 = false;
};
ToyFlowResult toy_flow(const ToyFlowParams& p, const std::vector<double>& m_init);

// flow report across N, scalar surrogate
struct NDependence {
  std::vector<int> N;
  std::vector<double> m0, eps0, norm;
  std::vector<int> iterations;
};
NDependence n_dependence(const FlowParams& base, const SurrogateParams& s, const std::vector<int>& Ns);

}  // namespace rgqed3
