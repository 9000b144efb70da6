#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rgqed3/types.hpp"

namespace rgqed3 {

using Coord = std::array<int, 3>;
using SparseRow = std::map<int, double>;

// Torus T^{-k}_{N-k}. Everything is stored on the fine grid with n = L^N
// points per side in integer units of eta = L^{-k}. The level-j sublattice
// has stride L^j, so level k is the unit lattice T^0_{N-k}.
class Lattice {
 public:
  Lattice(int L, int N, int k, int M = 1);

  int L, N, k, M;
  int n;       // fine points per side
  double eta;  // fine spacing

  int stride(int j) const { return ipow(L, j); }
  int side(int j) const { return n / stride(j); }
  int nsites(int j) const { int m = side(j); return m * m * m; }
  int nbonds(int j) const { return 3 * nsites(j); }
  int nplaq(int j) const { return 3 * nsites(j); }
  double spacing(int j) const { return eta * stride(j); }
  // measure of one site at level j
  double weight(int j) const { double s = spacing(j); return s * s * s; }

  int wrap(int x) const { return ((x % n) + n) % n; }
  int wrap_side(int u, int m) const { return ((u % m) + m) % m; }

  int index(int j, const Coord& x) const;  // x in fine units, multiple of stride
  Coord coord(int j, int idx) const;
  int shift(int j, int idx, int mu, int steps) const;
  int bond(int j, int site, int mu) const { return 3 * site + mu; }

  // sup distance in fine units
  int fine_dist(const Coord& a, const Coord& b) const;
  // signed short-way displacement b - a in fine units
  int disp(int a, int b) const;

  // block B(y) at level j+1 containing the level-j site
  std::pair<int, Coord> block_of(int j, int site) const;  // (center index at j+1, offset in level-j units)
  std::vector<std::pair<int, Coord>> block(int j, int center) const;  // level-j sites of B(y)

  // path Gamma^pi(y, x) along level-jb bonds, disp in fine units
  std::vector<std::pair<int, int>> path(int jb, const Coord& y, const Coord& d,
                                        const std::array<int, 3>& perm) const;
  std::vector<std::vector<std::pair<int, int>>> standard_paths(int jb, const Coord& y,
                                                              const Coord& d) const;
  // (tau A)(y, y+d) as a linear functional on level-jb bonds
  SparseRow tau_row(int jb, const Coord& y, const Coord& d) const;
  // chain tau_k(y, x) for fine x (level j0) into level j1 > j0, bonds at level jb
  SparseRow tau_chain(int jb, int j0, int x_site, int j1) const;

  // plaquette p at level j: site x, plane index 0:(0,1) 1:(0,2) 2:(1,2)
  std::array<std::pair<int, int>, 4> plaquette(int j, int p) const;

  // M-cubes: side M unit-lattice sites, centered on multiples of M*L^k
  int cube_side_fine() const { return M * stride(k); }
  int ncubes_side() const { return n / cube_side_fine(); }
  int ncubes() const { int c = ncubes_side(); return c * c * c; }
  int cube_of(const Coord& x) const;
  Coord cube_center(int c) const;
  int cube_dist(int a, int b) const;  // sup metric in cube units
  std::vector<int> cube_neighbors(int c) const;  // face neighbors

  std::string descriptor_json() const;
};

static const std::array<std::array<int, 3>, 6> kPerms = {{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
static const std::array<std::array<int, 2>, 3> kPlanes = {{{0, 1}, {0, 2}, {1, 2}}};

// polymers are sorted cube index sets
using Polymer = std::vector<int>;

bool polymer_connected(const Lattice& lat, const Polymer& X);
double tree_distance(const Lattice& lat, const Polymer& X);
int polymer_size(const Polymer& X);
std::vector<Polymer> components(const Lattice& lat, const Polymer& X);
// connected polymers containing cube c with at most cap cubes
std::vector<Polymer> polymers_containing(const Lattice& lat, int c, int cap);

enum class FieldKind { Gauge, Spinor, Holder };
// one scaling step: field on the coarser-spaced lattice -> field on the finer one
VecC scale_field(const VecC& f, FieldKind kind, int L, double alpha = 0.5, bool inverse = false);

}  // namespace rgqed3
