#pragma once

#include <Eigen/Sparse>
#include <map>
#include <vector>

#include "rgqed3/lattice.hpp"

namespace rgqed3 {

using SpMatC = Eigen::SparseMatrix<cd>;

// D-slash + mass on the fine lattice, conventions of dirac_operator
SpMatC dirac_sparse(const Lattice& lat, const VecC& A, double e, double mass, int sign = 1);
// covariant -Laplacian + mass2 on scalars, links exp(i e eta A)
SpMatC scalar_sparse(const Lattice& lat, const VecC& A, double e, double mass2);
// D^{-1} f by sparse LU
VecC sparse_solve(const SpMatC& D, const VecC& f);

// Random walk expansion of D^{-1} over the M-cubes of the fine lattice.
// S(c) is the Dirichlet inverse of D on the cube enlarged by pad sites, h_c a
// partition with sum_c h_c^2 = 1 built from cos/sin ramps of width 2(pad-1).
class WalkExpansion {
 public:
  WalkExpansion(const Lattice& lat, const SpMatC& D, int dof, int pad = 2);

  const Lattice& lat;
  SpMatC D;
  int dof, pad;
  int half;   // cube half width in fine units
  int ncube;

  int nclasses() const { return int(lu_.size()); }
  int region_size() const { return int(loc_[0].sites.size()); }
  const std::vector<int>& region(int c) const { return loc_[c].sites; }
  double hval(int c, int i) const { return loc_[c].h[i]; }
  std::vector<double> partition_sum() const;  // sum_c h_c^2 on every site

  VecC term0(int c, const VecC& f) const;  // h_c S(c) h_c f
  VecC step(int c, const VecC& f) const;   // K_c S(c) h_c f with K_c = -[D, h_c]
  bool touches(int c, const VecC& f) const;  // h_c f != 0

  VecC sstar(const VecC& f) const;
  // K f; cubes with allowed[c] == 0 are skipped
  VecC K(const VecC& f, const std::vector<char>* allowed = nullptr) const;
  // S* sum_{j<=n} K^j f for n = 0..nmax
  std::vector<VecC> partial_sums(const VecC& f, int nmax) const;

  // enlargement by whole cubes in the sup metric; one layer is the cube and its 26 neighbours
  std::vector<int> enlarged(int c, int layers = 1) const;
  std::vector<int> enlarged(const std::vector<int>& cubes) const;
  // cubes whose enlargement lies in {s == 1}
  std::vector<char> interior(const std::vector<char>& s, int layers = 1) const;
  // sum over walks with |omega| in [1, nmax] and s_omega = 1, s in {0, 1}.
  // X_omega uses two layers around the cubes after the first, so that the
  // first factor also lies in X_omega.
  VecC weakened_tail(const VecC& f, const std::vector<char>& s, int nmax) const;

  // pieces S(X) f with X = union of enlargements of all cubes in the walk
  std::map<Polymer, VecC> pieces(const VecC& f, int nmax, long* nwalks = nullptr) const;

  // ||D S* f - (f - K f)|| / ||f||
  double parametrix_residual(const VecC& f) const;

 private:
  struct Local {
    std::vector<int> sites;
    std::vector<double> h;
    int cls = 0;
  };
  std::vector<Local> loc_;
  std::vector<Eigen::PartialPivLU<MatC>> lu_;
  std::vector<SpMatC> dloc_;

  VecC gather(int c, const VecC& f, bool with_h) const;
  void scatter_add(int c, const VecC& v, VecC& out) const;
};

struct ResidualStudy {
  std::vector<double> residual;  // ||S_n f - D^{-1} f|| / ||D^{-1} f||
  std::vector<double> ratio;     // residual[n+1] / residual[n]
  double max_ratio = 0;
};
ResidualStudy walk_residuals(const WalkExpansion& w, const VecC& f, int nmax);

// Resummation: the walk series with K split into in-Y steps (enlargement inside a
// component Y_b of Y) and the rest, grouped as R0 R' ... R'. Both sides are
// compared order by order in a step-counting parameter t.
struct ResumCheck {
  int ncomponents = 0;
  int inner_cubes = 0;        // cubes whose enlargement lies in some component
  std::vector<double> rel;    // per order
  double max_rel = 0;
  double cross_product = 0;   // |K_b K_b' v| for b != b'
};
ResumCheck resum_walks(const WalkExpansion& w, const VecC& f, const Polymer& Y, int nmax);

// max_{x in X} |piece(x)| against the tree distance of X
struct PieceDecay {
  std::vector<double> dist, size;
  double kappa = 0, logC = 0;
};
PieceDecay piece_decay(const Lattice& lat, const std::map<Polymer, VecC>& pieces, double finf);

}  // namespace rgqed3
