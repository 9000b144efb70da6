#include "rgqed3/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace rgqed3 {

Lattice::Lattice(int L_, int N_, int k_, int M_) : L(L_), N(N_), k(k_), M(M_) {
  if (L < 3 || L % 2 == 0) throw ConfigError("L must be odd and >= 3");
  if (N < 1) throw ConfigError("N must be >= 1");
  if (k < 0 || k > N) throw ConfigError("k must satisfy 0 <= k <= N");
  int m = M, p = 0;
  while (m > 1 && m % L == 0) { m /= L; ++p; }
  if (M < 1 || m != 1) throw ConfigError("M must be a power of L");
  if (p > N - k) throw ConfigError("M exceeds the torus side");
  n = ipow(L, N);
  eta = std::pow(double(L), -k);
}

int Lattice::index(int j, const Coord& x) const {
  int s = stride(j), m = side(j);
  int u0 = wrap(x[0]) / s, u1 = wrap(x[1]) / s, u2 = wrap(x[2]) / s;
  return (u0 * m + u1) * m + u2;
}

Coord Lattice::coord(int j, int idx) const {
  int s = stride(j), m = side(j);
  return {(idx / (m * m)) * s, ((idx / m) % m) * s, (idx % m) * s};
}

int Lattice::shift(int j, int idx, int mu, int steps) const {
  Coord x = coord(j, idx);
  x[mu] = wrap(x[mu] + steps * stride(j));
  return index(j, x);
}

int Lattice::disp(int a, int b) const {
  int d = wrap(b - a);
  if (2 * d > n) d -= n;
  return d;
}

int Lattice::fine_dist(const Coord& a, const Coord& b) const {
  int r = 0;
  for (int mu = 0; mu < 3; ++mu) r = std::max(r, std::abs(disp(a[mu], b[mu])));
  return r;
}

std::pair<int, Coord> Lattice::block_of(int j, int site) const {
  if (j + 1 > N) throw DomainError("no coarser level");
  Coord x = coord(j, site);
  int s = stride(j), mc = side(j + 1), h = (L - 1) / 2;
  Coord c{}, d{};
  for (int mu = 0; mu < 3; ++mu) {
    int u = x[mu] / s;
    int cu = (u + h) / L;
    d[mu] = u - cu * L;
    c[mu] = wrap_side(cu, mc) * s * L;
  }
  return {index(j + 1, c), d};
}

std::vector<std::pair<int, Coord>> Lattice::block(int j, int center) const {
  Coord y = coord(j + 1, center);
  int s = stride(j), h = (L - 1) / 2;
  std::vector<std::pair<int, Coord>> out;
  out.reserve(L * L * L);
  for (int a = -h; a <= h; ++a)
    for (int b = -h; b <= h; ++b)
      for (int c = -h; c <= h; ++c) {
        Coord x{y[0] + a * s, y[1] + b * s, y[2] + c * s};
        out.push_back({index(j, x), Coord{a, b, c}});
      }
  return out;
}

std::vector<std::pair<int, int>> Lattice::path(int jb, const Coord& y, const Coord& d,
                                               const std::array<int, 3>& perm) const {
  int s = stride(jb);
  std::vector<std::pair<int, int>> out;
  Coord x = y;
  for (int q = 0; q < 3; ++q) {
    int mu = perm[q];
    if (d[mu] % s != 0) throw DomainError("path displacement not on bond level");
    int steps = d[mu] / s;
    for (int t = 0; t < std::abs(steps); ++t) {
      if (steps > 0) {
        out.push_back({bond(jb, index(jb, x), mu), +1});
        x[mu] = wrap(x[mu] + s);
      } else {
        x[mu] = wrap(x[mu] - s);
        out.push_back({bond(jb, index(jb, x), mu), -1});
      }
    }
  }
  return out;
}

std::vector<std::vector<std::pair<int, int>>> Lattice::standard_paths(int jb, const Coord& y,
                                                                     const Coord& d) const {
  std::vector<std::vector<std::pair<int, int>>> out;
  for (const auto& p : kPerms) out.push_back(path(jb, y, d, p));
  return out;
}

SparseRow Lattice::tau_row(int jb, const Coord& y, const Coord& d) const {
  SparseRow r;
  for (const auto& p : kPerms)
    for (auto [b, sg] : path(jb, y, d, p)) r[b] += sg / 6.0;
  for (auto it = r.begin(); it != r.end();) {
    if (std::abs(it->second) < 1e-15) it = r.erase(it);
    else ++it;
  }
  return r;
}

SparseRow Lattice::tau_chain(int jb, int j0, int x_site, int j1) const {
  SparseRow r;
  int cur = x_site;
  for (int j = j0; j < j1; ++j) {
    auto [c, off] = block_of(j, cur);
    int s = stride(j);
    Coord d{off[0] * s, off[1] * s, off[2] * s};
    for (auto [b, v] : tau_row(jb, coord(j + 1, c), d)) r[b] += v;
    cur = c;
  }
  return r;
}

std::array<std::pair<int, int>, 4> Lattice::plaquette(int j, int p) const {
  int x = p / 3, pl = p % 3;
  int mu = kPlanes[pl][0], nu = kPlanes[pl][1];
  int xm = shift(j, x, mu, 1), xn = shift(j, x, nu, 1);
  return {{{bond(j, x, mu), +1}, {bond(j, xm, nu), +1}, {bond(j, xn, mu), -1}, {bond(j, x, nu), -1}}};
}

int Lattice::cube_of(const Coord& x) const {
  int cs = cube_side_fine(), nc = ncubes_side(), h = (cs - 1) / 2;
  int c[3];
  for (int mu = 0; mu < 3; ++mu) c[mu] = wrap_side((wrap(x[mu]) + h) / cs, nc);
  return (c[0] * nc + c[1]) * nc + c[2];
}

Coord Lattice::cube_center(int c) const {
  int nc = ncubes_side(), cs = cube_side_fine();
  return {(c / (nc * nc)) * cs, ((c / nc) % nc) * cs, (c % nc) * cs};
}

int Lattice::cube_dist(int a, int b) const {
  return fine_dist(cube_center(a), cube_center(b)) / cube_side_fine();
}

std::vector<int> Lattice::cube_neighbors(int c) const {
  std::set<int> out;
  int cs = cube_side_fine();
  Coord x = cube_center(c);
  for (int mu = 0; mu < 3; ++mu)
    for (int s : {-1, 1}) {
      Coord y = x;
      y[mu] = wrap(y[mu] + s * cs);
      int d = cube_of(y);
      if (d != c) out.insert(d);
    }
  return {out.begin(), out.end()};
}

std::string Lattice::descriptor_json() const {
  nlohmann::ordered_json j;
  j["format"] = "rgqed3-lattice";
  j["version"] = 1;
  j["L"] = L;
  j["N"] = N;
  j["k"] = k;
  j["M"] = M;
  j["fine_side"] = n;
  j["eta"] = eta;
  j["site_order"] = "lexicographic (x0,x1,x2), x2 fastest";
  j["bond_order"] = "3*site + mu, forward bonds";
  j["plaquette_order"] = "3*site + plane, planes (0,1),(0,2),(1,2)";
  j["spinor_order"] = "4*site + spin";
  return j.dump(2);
}

bool polymer_connected(const Lattice& lat, const Polymer& X) {
  return components(lat, X).size() <= 1;
}

std::vector<Polymer> components(const Lattice& lat, const Polymer& X) {
  std::set<int> left(X.begin(), X.end());
  std::vector<Polymer> out;
  while (!left.empty()) {
    Polymer comp;
    std::vector<int> stack{*left.begin()};
    left.erase(left.begin());
    while (!stack.empty()) {
      int c = stack.back();
      stack.pop_back();
      comp.push_back(c);
      for (int d : lat.cube_neighbors(c))
        if (left.erase(d)) stack.push_back(d);
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(comp);
  }
  return out;
}

// Prim's MST over cube centers, sup metric, in units of M
double tree_distance(const Lattice& lat, const Polymer& X) {
  if (X.empty()) throw DomainError("empty polymer");
  std::size_t m = X.size();
  std::vector<int> best(m, 1 << 30);
  std::vector<bool> in(m, false);
  best[0] = 0;
  int total = 0;
  for (std::size_t it = 0; it < m; ++it) {
    std::size_t u = m;
    for (std::size_t i = 0; i < m; ++i)
      if (!in[i] && (u == m || best[i] < best[u])) u = i;
    in[u] = true;
    total += best[u];
    for (std::size_t i = 0; i < m; ++i)
      if (!in[i]) best[i] = std::min(best[i], lat.cube_dist(X[u], X[i]));
  }
  return double(total);
}

int polymer_size(const Polymer& X) { return int(X.size()); }

std::vector<Polymer> polymers_containing(const Lattice& lat, int c, int cap) {
  std::set<Polymer> seen;
  std::vector<Polymer> frontier{{c}};
  seen.insert({c});
  for (int sz = 1; sz < cap; ++sz) {
    std::vector<Polymer> next;
    for (const auto& X : frontier)
      for (int a : X)
        for (int b : lat.cube_neighbors(a)) {
          if (std::binary_search(X.begin(), X.end(), b)) continue;
          Polymer Y = X;
          Y.insert(std::upper_bound(Y.begin(), Y.end(), b), b);
          if (seen.insert(Y).second) next.push_back(Y);
        }
    frontier = std::move(next);
  }
  return {seen.begin(), seen.end()};
}

VecC scale_field(const VecC& f, FieldKind kind, int L, double alpha, bool inverse) {
  double e = kind == FieldKind::Gauge ? 0.5 : kind == FieldKind::Spinor ? 1.0 : 1.0 + alpha;
  double fac = std::pow(double(L), inverse ? e : -e);
  return fac * f;
}

}  // namespace rgqed3
