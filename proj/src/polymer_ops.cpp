#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <set>

#include "rgqed3/gauge.hpp"
#include "rgqed3/polymer.hpp"

namespace rgqed3 {

namespace {

double kernel_l1(const Kernel& K) {
  double s = 0;
  for (const auto& [m, v] : K.c) s += std::abs(v);
  return s;
}

// coefficients of psibar(x, a) psi(y, b), 4|S| x 4|S|
MatC bilinear_block(const Kernel& K, const FieldUniverse& U) {
  int ns = int(U.sites.size());
  MatC c = MatC::Zero(4 * ns, 4 * ns);
  for (const auto& [mono, v] : K.c) {
    if (mono.size() != 2) continue;
    auto d0 = U.decode(mono[0]), d1 = U.decode(mono[1]);
    if (d0.chi || d1.chi || d0.omega == d1.omega) continue;
    if (d0.omega == 1) c(4 * d0.idx + d0.beta, 4 * d1.idx + d1.beta) += v;
    else c(4 * d1.idx + d1.beta, 4 * d0.idx + d0.beta) -= v;
  }
  return c;
}

void drop_bilinear(Kernel& K, const FieldUniverse& U) {
  for (auto it = K.c.begin(); it != K.c.end();) {
    bool drop = false;
    if (it->first.size() == 2) {
      auto d0 = U.decode(it->first[0]), d1 = U.decode(it->first[1]);
      drop = !d0.chi && !d1.chi && d0.omega != d1.omega;
    }
    it = drop ? K.c.erase(it) : std::next(it);
  }
}

double e00(const PolymerFunction& E, const Polymer& X, const VecC& A) {
  return E.eval(X, A).coef({}).real();
}

}  // namespace

// ---------------------------------------------------------------- adjustment

PolymerFunction adjust_natural(const PolymerFunction& E, double alpha) {
  const Lattice* lp = E.lat;
  KernelFn base = E.fn;
  UniverseFn bu = E.ufn;
  double e = E.e;
  UniverseFn ufn = [lp](const Polymer& X) { return make_universe(*lp, X, is_small(*lp, X)); };
  KernelFn fn = [lp, base, bu, ufn, e, alpha](const Polymer& X, const VecC& A) {
    const Lattice& lat = *lp;
    FieldUniverse U0 = bu(X), U = ufn(X);
    Kernel K = embed(base(X, A), U0, U);
    if (!is_small(lat, X)) return K;
    MatC c = bilinear_block(K, U);
    drop_bilinear(K, U);
    int ns = int(U.sites.size());
    MatC T(ns, ns), dist(ns, ns);
    for (int i = 0; i < ns; ++i)
      for (int j = 0; j < ns; ++j) {
        T(i, j) = transport(lat, A, e, U.sites[i], U.sites[j]);
        dist(i, j) = i == j ? 0.0 : std::pow(site_distance(lat, U.sites[i], U.sites[j]), alpha);
      }
    double f = 1.0 / double(ns * ns);
    auto blk = [&](int i, int j) { return c.block<4, 4>(4 * i, 4 * j); };
    // sum_x U(x0, x) c(x, y), sum_y c(x, y) U(y, y0)
    std::vector<std::vector<Mat4>> left(ns, std::vector<Mat4>(ns, Mat4::Zero()));
    std::vector<std::vector<Mat4>> right(ns, std::vector<Mat4>(ns, Mat4::Zero()));
    for (int a = 0; a < ns; ++a)
      for (int y = 0; y < ns; ++y)
        for (int x = 0; x < ns; ++x) {
          left[a][y] += T(a, x) * blk(x, y);
          right[y][a] += blk(y, x) * T(x, a);
        }
    for (int x0 = 0; x0 < ns; ++x0)
      for (int y0 = 0; y0 < ns; ++y0) {
        // psibar(x0) [sum U c U] psi(y0)
        Mat4 t1 = Mat4::Zero();
        for (int y = 0; y < ns; ++y) t1 += left[x0][y] * T(y, y0);
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) add_pair(K, U.psibar(x0, a), U.psi(y0, b), f * t1(a, b));
        for (int y = 0; y < ns; ++y) {
          if (y == y0) continue;
          int p = U.pair_pos(U.sites[y], U.sites[y0]);
          // -psibar(x0) U c |y - y0|^alpha chi(y, y0)
          Mat4 t2 = -f * dist(y, y0) * left[x0][y];
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) add_pair(K, U.psibar(x0, a), U.chi(p, b), t2(a, b));
        }
      }
    for (int x = 0; x < ns; ++x)
      for (int x0 = 0; x0 < ns; ++x0) {
        if (x == x0) continue;
        int px = U.pair_pos(U.sites[x], U.sites[x0]);
        for (int y0 = 0; y0 < ns; ++y0) {
          // -chibar(x, x0) |x - x0|^alpha c U psi(y0)
          Mat4 t3 = -f * dist(x, x0) * right[x][y0];
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) add_pair(K, U.chibar(px, a), U.psi(y0, b), t3(a, b));
        }
        for (int y = 0; y < ns; ++y)
          for (int y0 = 0; y0 < ns; ++y0) {
            if (y == y0) continue;
            int py = U.pair_pos(U.sites[y], U.sites[y0]);
            Mat4 t4 = f * dist(x, x0) * dist(y, y0) * blk(x, y);
            for (int a = 0; a < 4; ++a)
              for (int b = 0; b < 4; ++b) add_pair(K, U.chibar(px, a), U.chi(py, b), t4(a, b));
          }
      }
    K.prune(1e-300);
    return K;
  };
  return PolymerFunction(lp, E.support, fn, ufn, E.e, true);
}

namespace {

// generator substitution chi(x, y) -> |x-y|^{-alpha} (U(x, y) psi(y) - psi(x)) into the psi universe
MatC chi_to_psi(const Lattice& lat, const FieldUniverse& U, const VecC& A, double e, double alpha) {
  int np = U.npsi();
  MatC S = MatC::Zero(U.ngen(), np);
  for (int g = 0; g < np; ++g) S(g, g) = 1.0;
  for (int p = 0; p < int(U.pairs.size()); ++p) {
    auto [x, y] = U.pairs[p];
    int ix = U.site_pos(x), iy = U.site_pos(y);
    double d = std::pow(site_distance(lat, x, y), -alpha);
    cd uxy = transport(lat, A, e, x, y), uyx = transport(lat, A, e, y, x);
    for (int b = 0; b < 4; ++b) {
      S(U.chi(p, b), U.psi(iy, b)) += d * uxy;
      S(U.chi(p, b), U.psi(ix, b)) -= d;
      S(U.chibar(p, b), U.psibar(iy, b)) += d * uyx;
      S(U.chibar(p, b), U.psibar(ix, b)) -= d;
    }
  }
  return S;
}

}  // namespace

double adjust_identity_residual(const PolymerFunction& E, const PolymerFunction& Enat, const Polymer& X,
                              const VecC& A, double alpha) {
  const Lattice& lat = *E.lat;
  FieldUniverse U = Enat.universe(X);
  FieldUniverse P = make_universe(lat, X, false);
  MatC S = chi_to_psi(lat, U, A, Enat.e, alpha);
  Kernel lhs = substitute(Enat.eval(X, A), S, std::vector<int>(P.ngen(), 0));
  lhs.species = P.species();
  Kernel rhs = embed(E.eval(X, A), E.universe(X), U);
  Kernel rhs_psi = substitute(rhs, S, std::vector<int>(P.ngen(), 0));
  rhs_psi.species = P.species();
  return kernel_l1(lhs - rhs_psi) / std::max(kernel_l1(rhs_psi), 1e-300);
}

AdjustBounds adjust_bounds(const PolymerFunction& E, const PolymerFunction& Enat, const Polymer& X,
                           const VecC& A, int L) {
  AdjustBounds b;
  const Lattice& lat = *E.lat;
  auto n0 = degree_norms(E.eval(X, A), E.universe(X));
  auto n1 = degree_norms(Enat.eval(X, A), Enat.universe(X));
  auto get = [](const std::map<std::pair<int, int>, double>& m, int n, int k) {
    auto it = m.find({n, k});
    return it == m.end() ? 0.0 : it->second;
  };
  double e20 = get(n0, 2, 0);
  double ml = double(lat.M * L);
  if (e20 > 0) {
    b.c20 = get(n1, 2, 0) / e20;
    b.c11 = (get(n1, 1, 1) - get(n0, 1, 1)) / (ml * e20);
    b.c02 = (get(n1, 0, 2) - get(n0, 0, 2)) / (ml * ml * e20);
  }
  VecC zero = VecC::Zero(lat.nbonds(0));
  b.nat20_at_zero = get(degree_norms(Enat.eval(X, zero), Enat.universe(X)), 2, 0);
  return b;
}

// ---------------------------------------------------------------- scaling

Polymer block_closure(const Lattice& lat, const Lattice& next, const Polymer& X) {
  if (next.n != lat.n || next.k != lat.k + 1 || next.M != lat.M) throw DomainError("block_closure: lattice level mismatch");
  Polymer Y;
  for (int c : X) Y.push_back(next.cube_of(lat.cube_center(c)));
  std::sort(Y.begin(), Y.end());
  Y.erase(std::unique(Y.begin(), Y.end()), Y.end());
  return Y;
}

PolymerFunction reblock_scale(const PolymerFunction& E, const Lattice& next, double alpha) {
  const Lattice& lat = *E.lat;
  auto groups = std::make_shared<std::map<Polymer, std::vector<Polymer>>>();
  for (const auto& X : E.support) (*groups)[block_closure(lat, next, X)].push_back(X);
  std::vector<Polymer> support;
  for (auto& [Y, xs] : *groups) support.push_back(Y);
  const Lattice* np = &next;
  UniverseFn bu = E.ufn;
  bool chi = E.has_chi;
  UniverseFn ufn = [np, groups, bu, chi](const Polymer& Y) {
    FieldUniverse U;
    U.sites = polymer_sites(*np, Y);
    if (chi) {
      std::set<std::pair<int, int>> pr;
      auto it = groups->find(Y);
      if (it != groups->end())
        for (const auto& X : it->second)
          for (auto& q : bu(X).pairs) pr.insert(q);
      U.pairs.assign(pr.begin(), pr.end());
    }
    return U;
  };
  KernelFn base = E.fn;
  double L = lat.L;
  KernelFn fn = [groups, base, bu, ufn, L, alpha](const Polymer& Y, const VecC& A) {
    FieldUniverse UY = ufn(Y);
    Kernel out(UY.ngen(), UY.species());
    auto it = groups->find(Y);
    if (it == groups->end()) return out;
    VecC AL = std::pow(L, -0.5) * A;
    int np = UY.npsi();
    for (const auto& X : it->second) {
      Kernel K = embed(base(X, AL), bu(X), UY);
      for (auto& [m, v] : K.c) {
        int n = 0, k = 0;
        for (int g : m) (g < np ? n : k)++;
        v *= std::pow(L, -double(n) - (1.0 + alpha) * k);
      }
      out += K;
    }
    return out;
  };
  return PolymerFunction(&next, support, fn, ufn, E.e * std::sqrt(L), chi);
}

double kernel_scaling_residual(const PolymerFunction& E, const Polymer& X, const VecC& A, double alpha, int L) {
  const Lattice& lat = *E.lat;
  FieldUniverse U = E.universe(X);
  VecC AL = std::pow(double(L), -0.5) * A;
  Kernel K = E.eval(X, AL);
  int np = U.npsi();
  double mk = lat.weight(0), mk1 = mk / std::pow(double(L), 3);
  // kernel values at level k: c / mu_k; (S_L E)(xi') = L^{2n + (5 - alpha) m} E(L xi')
  std::map<std::pair<int, int>, double> lhs;
  for (const auto& [m, v] : K.c) {
    int n = 0, k = 0;
    for (int g : m) (g < np ? n : k)++;
    double muk = std::pow(mk, n) * std::pow(mk * mk, k);
    double muk1 = std::pow(mk1, n) * std::pow(mk1 * mk1, k);
    double val = std::abs(v) / muk * std::pow(double(L), 2.0 * n + (5.0 - alpha) * k);
    lhs[{n, k}] += val * muk1;
  }
  for (auto& [nm, v] : lhs) v *= std::tgamma(nm.first + 1.0) * std::tgamma(nm.second + 1.0);
  auto rhs = degree_norms(K, U);
  double res = 0;
  for (auto& [nm, v] : rhs) {
    double r = std::pow(double(L), -nm.first - (1.0 + alpha) * nm.second) * v;
    res = std::max(res, std::abs(lhs[nm] - r) / std::max(r, 1e-300));
  }
  return res;
}

// ---------------------------------------------------------------- symmetry checks

WardCheck ward_check(const PolymerFunction& E, const Polymer& X, const VecC& A, const VecR& lambda, const VecC& f) {
  const Lattice& lat = *E.lat;
  VecC g = (grad_matrix(lat, 0) * lambda).cast<cd>();
  auto deriv = [&](const VecC& dir) {
    auto D = [&](double h) { return (e00(E, X, A + h * dir) - e00(E, X, A - h * dir)) / (2 * h); };
    double h = 1e-3 / std::max(1.0, dir.cwiseAbs().maxCoeff());
    return (4.0 * D(h / 2) - D(h)) / 3.0;
  };
  WardCheck w;
  w.derivative = std::abs(deriv(g));
  w.scale = std::abs(deriv(f)) * g.norm() / std::max(f.norm(), 1e-300);
  w.residual = w.derivative / std::max(w.scale, 1e-300);
  return w;
}

ChargeCheck charge_check(const PolymerFunction& E, const Polymer& X, const VecC& A, const VecC& f) {
  ChargeCheck c;
  double a = e00(E, X, A), b = e00(E, X, -A);
  c.scale = std::max({std::abs(a), std::abs(b), 1e-300});
  c.even = std::abs(a - b);
  auto F = [&](double t) { return e00(E, X, t * f); };
  double h = 1e-2;
  auto d1 = [&](double s) { return (F(s) - F(-s)) / (2 * s); };
  auto d3 = [&](double s) { return (F(2 * s) - 2 * F(s) + 2 * F(-s) - F(-2 * s)) / (2 * s * s * s); };
  c.d1 = std::abs((4 * d1(h / 2) - d1(h)) / 3);
  c.d3 = std::abs((4 * d3(h / 2) - d3(h)) / 3);
  return c;
}

double norm_gauge_residual(const PolymerFunction& E, const Polymer& X, const VecC& A, const VecR& lambda) {
  const Lattice& lat = *E.lat;
  VecC Ag = A - (grad_matrix(lat, 0) * lambda).cast<cd>();
  FieldUniverse U = E.universe(X);
  auto n0 = degree_norms(E.eval(X, A), U), n1 = degree_norms(E.eval(X, Ag), U);
  double r = 0, total = 0;
  for (auto& [nm, v] : n0) total += v;
  for (auto& [nm, v] : n0) {
    double w = n1.count(nm) ? n1.at(nm) : 0.0;
    r = std::max(r, std::abs(v - w) / std::max(v, 1e-12 * total));
  }
  return r;
}

double locality_residual(const PolymerFunction& E, const Polymer& X, const VecC& A, Rng& rng) {
  const Lattice& lat = *E.lat;
  auto sites = polymer_sites(lat, X);
  VecC B = A;
  for (int x = 0; x < lat.nsites(0); ++x)
    for (int mu = 0; mu < 3; ++mu) {
      int y = lat.shift(0, x, mu, 1);
      if (std::binary_search(sites.begin(), sites.end(), x) || std::binary_search(sites.begin(), sites.end(), y)) continue;
      B[lat.bond(0, x, mu)] += rng.uniform();
    }
  Kernel a = E.eval(X, A), b = E.eval(X, B);
  return kernel_l1(a - b) / std::max(kernel_l1(a), 1e-300);
}

// ---------------------------------------------------------------- interpolation

namespace {

std::vector<cd> indicator(int nc, const Polymer& on) {
  std::vector<cd> s(nc, 0.0);
  for (int c : on) s[c] = 1.0;
  return s;
}

std::vector<int> complement_in(const Polymer& Y, const Polymer& X) {
  std::vector<int> r;
  std::set_difference(Y.begin(), Y.end(), X.begin(), X.end(), std::back_inserter(r));
  return r;
}

// every Y with X subset Y subset {0..nc-1}
template <class Fn>
void for_supersets(int nc, const Polymer& X, Fn fn) {
  std::vector<int> free;
  for (int c = 0; c < nc; ++c)
    if (!std::binary_search(X.begin(), X.end(), c)) free.push_back(c);
  int nf = int(free.size());
  for (long m = 0; m < (1L << nf); ++m) {
    Polymer Y = X;
    for (int i = 0; i < nf; ++i)
      if (m >> i & 1) Y.push_back(free[i]);
    std::sort(Y.begin(), Y.end());
    fn(Y, complement_in(Y, X));
  }
}

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5)), pp = 0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1, p2 = 0;
      for (int j = 1; j <= n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1) * z * p2 - (j - 1.0) * p3) / j;
      }
      pp = n * (z * p1 - p2) / (z * z - 1);
      double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-16) break;
    }
    x[i] = 0.5 * (1 - z);
    w[i] = 1.0 / ((1 - z * z) * pp * pp);
  }
}

}  // namespace

std::map<Polymer, cd> localize_by_interpolation(const InterpFamily& fam) {
  std::map<Polymer, cd> out;
  for (int i = 0; i < int(fam.base.size()); ++i) {
    const Polymer& X = fam.base[i];
    for_supersets(fam.ncubes, X, [&](const Polymer& Y, const std::vector<int>& free) {
      int nf = int(free.size());
      cd sum = 0;
      for (long m = 0; m < (1L << nf); ++m) {
        Polymer on = X;
        int cnt = 0;
        for (int j = 0; j < nf; ++j)
          if (m >> j & 1) on.push_back(free[j]);
          else ++cnt;
        sum += double(cnt % 2 ? -1 : 1) * fam.F(i, indicator(fam.ncubes, on));
      }
      if (sum != cd(0)) out[Y] += sum;
    });
  }
  return out;
}

std::map<Polymer, cd> localize_by_quadrature(const InterpFamily& fam, double radius, int ngl, int ncauchy) {
  std::vector<double> gx, gw;
  gauss_legendre(ngl, gx, gw);
  std::map<Polymer, cd> out;
  for (int i = 0; i < int(fam.base.size()); ++i) {
    const Polymer& X = fam.base[i];
    for_supersets(fam.ncubes, X, [&](const Polymer& Y, const std::vector<int>& free) {
      int nf = int(free.size());
      // integral over [0,1]^nf of the mixed derivative, each derivative by a Cauchy integral
      int per = ngl * ncauchy;
      long total = 1;
      for (int j = 0; j < nf; ++j) total *= per;
      cd sum = 0;
      std::vector<cd> s = indicator(fam.ncubes, X);
      for (long t = 0; t < total; ++t) {
        long r = t;
        cd wt = 1.0;
        for (int j = 0; j < nf; ++j) {
          int q = int(r % per);
          r /= per;
          int a = q / ncauchy, b = q % ncauchy;
          double th = 2 * M_PI * b / ncauchy;
          cd z = radius * std::exp(I1 * th);
          s[free[j]] = gx[a] + z;
          wt *= gw[a] / (double(ncauchy) * z);
        }
        sum += wt * fam.F(i, s);
      }
      if (std::abs(sum) > 0) out[Y] += sum;
    });
  }
  return out;
}

cd interpolation_total(const InterpFamily& fam) {
  cd s = 0;
  for (int i = 0; i < int(fam.base.size()); ++i) s += fam.F(i, std::vector<cd>(fam.ncubes, 1.0));
  return s;
}

CauchyBound cauchy_bound(const InterpFamily& fam, int i, const std::vector<int>& vars, double radius, int ncauchy) {
  CauchyBound cb;
  int nv = int(vars.size());
  long total = 1;
  for (int j = 0; j < nv; ++j) total *= ncauchy;
  std::vector<cd> s(fam.ncubes, 0.5);
  for (int c : fam.base[i]) s[c] = 1.0;
  cd d = 0;
  double sup = 0;
  for (long t = 0; t < total; ++t) {
    long r = t;
    cd wt = 1.0;
    std::vector<cd> z = s;
    for (int j = 0; j < nv; ++j) {
      int b = int(r % ncauchy);
      r /= ncauchy;
      cd dz = radius * std::exp(I1 * (2 * M_PI * b / ncauchy));
      z[vars[j]] = s[vars[j]] + dz;
      wt /= double(ncauchy) * dz;
    }
    cd v = fam.F(i, z);
    sup = std::max(sup, std::abs(v));
    d += wt * v;
  }
  cb.derivative = std::abs(d);
  cb.bound = sup / std::pow(radius, nv);
  return cb;
}

InterpFamily random_linear_family(int ncubes, const std::vector<Polymer>& base, Rng& rng, double scale) {
  InterpFamily fam;
  fam.ncubes = ncubes;
  fam.base = base;
  int nb = int(base.size());
  auto g = std::make_shared<std::vector<cd>>();
  auto a = std::make_shared<MatC>(nb, ncubes);
  for (int i = 0; i < nb; ++i) {
    g->push_back(rng.cnormal());
    for (int c = 0; c < ncubes; ++c) (*a)(i, c) = scale * rng.cnormal();
  }
  fam.F = [g, a, base](int i, const std::vector<cd>& s) {
    cd v = (*g)[i];
    for (int c = 0; c < int(s.size()); ++c)
      if (!std::binary_search(base[i].begin(), base[i].end(), c)) v *= 1.0 + s[c] * (*a)(i, c);
    return v;
  };
  return fam;
}

// ---------------------------------------------------------------- Mayer / cluster

namespace {

bool touching(const Lattice& lat, const Polymer& a, const Polymer& b) {
  Polymer u;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(u));
  return polymer_connected(lat, u);
}

// connected part of the incompatibility graph sum over connected spanning subgraphs of (-1)^|G|
double ursell(const std::vector<std::vector<char>>& inc) {
  int n = int(inc.size());
  int full = (1 << n) - 1;
  std::vector<double> f(full + 1, 0.0), c(full + 1, 0.0);
  for (int S = 1; S <= full; ++S) {
    bool indep = true;
    for (int i = 0; i < n && indep; ++i)
      if (S >> i & 1)
        for (int j = i + 1; j < n; ++j)
          if ((S >> j & 1) && inc[i][j]) {
            indep = false;
            break;
          }
    f[S] = indep ? 1.0 : 0.0;
  }
  for (int S = 1; S <= full; ++S) {
    int low = S & -S;
    double v = f[S];
    for (int T = (S - 1) & S; T > 0; T = (T - 1) & S)
      if (T & low) v -= c[T] * f[S ^ T];
    c[S] = v;
  }
  return c[full];
}

MayerResult cluster_from_H(const Lattice& lat, const std::vector<Polymer>& polymers,
                           std::map<Polymer, cd> H, int max_order) {
  MayerResult r;
  // factorization over components
  for (const auto& [Y, h] : H) {
    auto comps = components(lat, Y);
    if (comps.size() < 2) continue;
    cd prod = 1.0;
    for (auto& c : comps) prod *= H.count(c) ? H.at(c) : cd(0);
    r.factorization = std::max(r.factorization, std::abs(h - prod));
  }
  r.K = H;
  std::vector<Polymer> conn;
  std::vector<cd> hc;
  for (const auto& [Y, h] : H)
    if (polymer_connected(lat, Y)) {
      conn.push_back(Y);
      hc.push_back(h);
    }
  int P = int(conn.size());
  r.nconnected = P;
  std::vector<std::vector<char>> incompat(P, std::vector<char>(P, 0));
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j) incompat[i][j] = touching(lat, conn[i], conn[j]);
  for (int i = 0; i < P; ++i) {
    double s = 0;
    for (int j = 0; j < P; ++j)
      if (incompat[i][j]) s += std::abs(hc[j]) * std::exp(double(conn[j].size()));
    r.spectral = std::max(r.spectral, s);
  }

  // Ursell series over multisets i1 <= i2 <= ... <= in
  r.order_size.assign(max_order + 1, 0.0);
  std::vector<int> idx;
  std::function<void(int)> rec = [&](int start) {
    int n = int(idx.size());
    if (n > 0) {
      std::vector<std::vector<char>> g(n, std::vector<char>(n, 0));
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) g[a][b] = a != b && incompat[idx[a]][idx[b]];
      double phi = ursell(g);
      if (phi != 0) {
        cd w = phi;
        double mult = 1;
        int run = 1;
        for (int a = 0; a < n; ++a) {
          w *= hc[idx[a]];
          if (a > 0 && idx[a] == idx[a - 1]) mult *= ++run;
          else run = 1;
        }
        w /= mult;
        Polymer X;
        for (int a : idx) X.insert(X.end(), conn[a].begin(), conn[a].end());
        std::sort(X.begin(), X.end());
        X.erase(std::unique(X.begin(), X.end()), X.end());
        r.Esharp[X] += w;
        r.order_size[n] += std::abs(w);
      }
    }
    if (n == max_order) return;
    for (int j = start; j < P; ++j) {
      idx.push_back(j);
      rec(j);
      idx.pop_back();
    }
  };
  rec(0);

  // exact Moebius form over subsets of the covered cubes
  Polymer cubes;
  for (auto& X : polymers) cubes.insert(cubes.end(), X.begin(), X.end());
  std::sort(cubes.begin(), cubes.end());
  cubes.erase(std::unique(cubes.begin(), cubes.end()), cubes.end());
  int nc = int(cubes.size());
  if (nc > 20) throw DomainError("mayer_cluster: too many cubes for the exact form");
  auto mask_of = [&](const Polymer& Y) {
    long m = 0;
    for (int c : Y) m |= 1L << (std::lower_bound(cubes.begin(), cubes.end(), c) - cubes.begin());
    return m;
  };
  std::vector<std::pair<long, cd>> hm;
  for (auto& [Y, h] : H) hm.push_back({mask_of(Y), h});
  long full = (1L << nc) - 1;
  std::vector<cd> logz(full + 1);
  r.min_abs_z = 1e300;
  for (long U = 0; U <= full; ++U) {
    cd z = 1.0;
    for (auto& [m, h] : hm)
      if ((m & U) == m) z += h;
    r.min_abs_z = std::min(r.min_abs_z, std::abs(z));
    logz[U] = std::log(z);
  }
  if (r.min_abs_z < 1e-3) r.divergent = true;
  // Moebius transform in place: E#(X) = sum_{U in X} (-1)^{|X-U|} log Z_U
  std::vector<cd> mob = logz;
  for (int b = 0; b < nc; ++b)
    for (long U = 0; U <= full; ++U)
      if (U >> b & 1) mob[U] -= mob[U ^ (1L << b)];
  for (long U = 1; U <= full; ++U) {
    if (std::abs(mob[U]) < 1e-15) continue;
    Polymer X;
    for (int b = 0; b < nc; ++b)
      if (U >> b & 1) X.push_back(cubes[b]);
    if (polymer_connected(lat, X)) r.Esharp_mobius[X] = mob[U];
    else r.disconnected_mobius = std::max(r.disconnected_mobius, std::abs(mob[U]));
  }
  std::set<Polymer> keys;
  for (auto& [X, v] : r.Esharp) keys.insert(X);
  for (auto& [X, v] : r.Esharp_mobius) keys.insert(X);
  for (auto& X : keys) {
    cd a = r.Esharp.count(X) ? r.Esharp.at(X) : cd(0);
    cd b = r.Esharp_mobius.count(X) ? r.Esharp_mobius.at(X) : cd(0);
    r.ursell_vs_mobius = std::max(r.ursell_vs_mobius, std::abs(a - b));
  }
  cd sum = 0;
  for (auto& [X, v] : r.Esharp) sum += v;
  r.lhs = std::exp(sum);
  r.rhs = 1.0;
  for (auto& [Y, h] : H) r.rhs += h;
  r.rel = std::abs(r.lhs - r.rhs) / std::abs(r.rhs);
  if (r.order_size.size() > 2 && r.order_size[max_order] > 0.5 * r.order_size[1]) r.divergent = true;
  return r;
}

}  // namespace

MayerResult mayer_cluster(const Lattice& lat, const std::vector<Polymer>& polymers, const std::vector<cd>& weights,
                          int max_order) {
  int p = int(polymers.size());
  if (p > 16) throw DomainError("mayer_cluster: too many polymers");
  std::map<Polymer, cd> K;
  for (int T = 1; T < (1 << p); ++T) {
    Polymer Y;
    cd w = 1.0;
    for (int i = 0; i < p; ++i)
      if (T >> i & 1) {
        Y.insert(Y.end(), polymers[i].begin(), polymers[i].end());
        w *= std::exp(weights[i]) - 1.0;
      }
    std::sort(Y.begin(), Y.end());
    Y.erase(std::unique(Y.begin(), Y.end()), Y.end());
    K[Y] += w;
  }
  return cluster_from_H(lat, polymers, K, max_order);
}

GrassmannWeights fluctuation_weights(const std::vector<Polymer>& polymers, double scale, Rng& rng) {
  GrassmannWeights w;
  for (auto& X : polymers) w.cubes.insert(w.cubes.end(), X.begin(), X.end());
  std::sort(w.cubes.begin(), w.cubes.end());
  w.cubes.erase(std::unique(w.cubes.begin(), w.cubes.end()), w.cubes.end());
  int n = int(w.cubes.size());
  w.blk = PairBlock{0, n};
  w.Gamma = MatC::Zero(n, n);
  for (int i = 0; i < n; ++i) w.Gamma(i, i) = 1.0 + 0.5 * rng.uniform();
  auto pos = [&](int c) { return int(std::lower_bound(w.cubes.begin(), w.cubes.end(), c) - w.cubes.begin()); };
  for (auto& X : polymers) {
    Kernel E(2 * n);
    E.add({}, scale * rng.cnormal());
    std::vector<int> loc;
    for (int c : X) loc.push_back(pos(c));
    for (int a : loc)
      for (int b : loc) add_pair(E, w.blk.psibar(a), w.blk.psi(b), scale * rng.cnormal());
    for (std::size_t i = 0; i < loc.size(); ++i)
      for (std::size_t j = i + 1; j < loc.size(); ++j) {
        Kernel p1(2 * n), p2(2 * n);
        add_pair(p1, w.blk.psibar(loc[i]), w.blk.psi(loc[i]), 1.0);
        add_pair(p2, w.blk.psibar(loc[j]), w.blk.psi(loc[j]), 1.0);
        E += product(p1, p2) * (scale * rng.cnormal());
      }
    w.E.push_back(E);
  }
  return w;
}

MayerResult mayer_cluster(const Lattice& lat, const std::vector<Polymer>& polymers, const GrassmannWeights& w,
                          int max_order) {
  int p = int(polymers.size());
  if (p > 10) throw DomainError("mayer_cluster: too many polymers");
  int ng = 2 * w.blk.n;
  std::vector<Kernel> f;
  for (auto& E : w.E) f.push_back(exp_even(E) - Kernel::constant(ng, 1.0));
  std::map<Polymer, Kernel> K;
  for (int T = 1; T < (1 << p); ++T) {
    Polymer Y;
    Kernel prod = Kernel::constant(ng, 1.0);
    for (int i = 0; i < p; ++i)
      if (T >> i & 1) {
        Y.insert(Y.end(), polymers[i].begin(), polymers[i].end());
        prod = product(prod, f[i]);
      }
    std::sort(Y.begin(), Y.end());
    Y.erase(std::unique(Y.begin(), Y.end()), Y.end());
    auto it = K.find(Y);
    if (it == K.end()) K.emplace(Y, prod);
    else it->second += prod;
  }
  std::map<Polymer, cd> H;
  for (auto& [Y, k] : K) H[Y] = gaussian_integral(k, w.blk, w.Gamma);
  MayerResult r = cluster_from_H(lat, polymers, H, max_order);
  // brute force: int prod_i exp(E_i)
  Kernel all = Kernel::constant(ng, 1.0);
  for (auto& E : w.E) all = product(all, exp_even(E));
  r.rhs = gaussian_integral(all, w.blk, w.Gamma);
  r.rel = std::abs(r.lhs - r.rhs) / std::abs(r.rhs);
  return r;
}

// ---------------------------------------------------------------- serialization

void dump_polymer_function(const PolymerFunction& E, const VecC& A, const std::string& dir, int max_polymers) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream man(fs::path(dir) / "manifest.json");
  man << "{\"lattice\": " << E.lat->descriptor_json() << ", \"e\": " << E.e
      << ", \"has_chi\": " << (E.has_chi ? "true" : "false") << ", \"polymers\": [";
  int cnt = 0;
  for (const auto& X : E.support) {
    if (cnt >= max_polymers) break;
    std::string name = "kernel_" + std::to_string(cnt) + ".json";
    std::ofstream kf(fs::path(dir) / name);
    kf << E.eval(X, A).dump_json();
    man << (cnt ? ", " : "") << "{\"cubes\": [";
    for (std::size_t i = 0; i < X.size(); ++i) man << (i ? ", " : "") << X[i];
    man << "], \"d_M\": " << tree_distance(*E.lat, X) << ", \"small\": " << (is_small(*E.lat, X) ? "true" : "false")
        << ", \"file\": \"" << name << "\"}";
    ++cnt;
  }
  man << "], \"total_polymers\": " << E.support.size() << "}\n";
}

}  // namespace rgqed3
