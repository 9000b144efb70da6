#include "rgqed3/walk.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <unordered_map>

#include "rgqed3/fermion.hpp"

namespace rgqed3 {

SpMatC dirac_sparse(const Lattice& lat, const VecC& A, double e, double mass, int sign) {
  const auto& G = gamma_rep();
  int ns = lat.nsites(0);
  double eta = lat.eta;
  Mat4 Id = Mat4::Identity();
  std::vector<Eigen::Triplet<cd>> tr;
  tr.reserve(std::size_t(ns) * 16 * 7);
  auto put = [&](int r, int c, const Mat4& m) {
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        if (m(a, b) != cd(0)) tr.emplace_back(4 * r + a, 4 * c + b, m(a, b));
  };
  for (int x = 0; x < ns; ++x) {
    for (int mu = 0; mu < 3; ++mu) {
      int xp = lat.shift(0, x, mu, 1), xm = lat.shift(0, x, mu, -1);
      cd up = std::exp(I1 * e * eta * double(sign) * A[lat.bond(0, x, mu)]);
      cd um = std::exp(-I1 * e * eta * double(sign) * A[lat.bond(0, xm, mu)]);
      put(x, xp, Mat4(-(up / eta) * 0.5 * (Id - G.g[mu])));
      put(x, xm, Mat4(-(um / eta) * 0.5 * (Id + G.g[mu])));
    }
    put(x, x, Mat4((3.0 / eta + mass) * Id));
  }
  SpMatC D(4 * ns, 4 * ns);
  D.setFromTriplets(tr.begin(), tr.end());
  return D;
}

SpMatC scalar_sparse(const Lattice& lat, const VecC& A, double e, double mass2) {
  int ns = lat.nsites(0);
  double eta = lat.eta, i2 = 1.0 / (eta * eta);
  std::vector<Eigen::Triplet<cd>> tr;
  for (int x = 0; x < ns; ++x) {
    for (int mu = 0; mu < 3; ++mu) {
      int xp = lat.shift(0, x, mu, 1), xm = lat.shift(0, x, mu, -1);
      tr.emplace_back(x, xp, -i2 * std::exp(I1 * e * eta * A[lat.bond(0, x, mu)]));
      tr.emplace_back(x, xm, -i2 * std::exp(-I1 * e * eta * A[lat.bond(0, xm, mu)]));
    }
    tr.emplace_back(x, x, 6.0 * i2 + mass2);
  }
  SpMatC D(ns, ns);
  D.setFromTriplets(tr.begin(), tr.end());
  return D;
}

VecC sparse_solve(const SpMatC& D, const VecC& f) {
  if (D.rows() <= 4000) {
    Eigen::SparseLU<SpMatC, Eigen::COLAMDOrdering<int>> lu;
    lu.compute(D);
    if (lu.info() != Eigen::Success) throw DomainError("sparse LU failed");
    return lu.solve(f);
  }
  Eigen::BiCGSTAB<SpMatC, Eigen::IncompleteLUT<cd>> it;
  it.setTolerance(1e-15);
  it.setMaxIterations(5000);
  it.compute(D);
  VecC x = it.solve(f);
  if ((D * x - f).norm() > 1e-12 * f.norm()) throw DomainError("iterative solve did not converge");
  return x;
}

namespace {

double ramp(int u, int half, int pad) {
  int a = std::abs(u);
  if (pad <= 1) return a <= half ? 1.0 : 0.0;
  double th = M_PI / 4 * (1.0 + (a - (half + 0.5)) / double(pad - 1));
  if (th <= 0) return 1.0;
  if (th >= M_PI / 2) return 0.0;
  return std::cos(th);
}

}  // namespace

WalkExpansion::WalkExpansion(const Lattice& lat_, const SpMatC& D_, int dof_, int pad_)
    : lat(lat_), D(D_), dof(dof_), pad(pad_) {
  int cs = lat.cube_side_fine();
  if (cs % 2 == 0) throw ConfigError("cube side must be odd");
  half = (cs - 1) / 2;
  ncube = lat.ncubes();
  if (pad < 1 || cs < 2 * (pad - 1)) throw ConfigError("pad too large for the cube side");
  int r = half + pad;
  if (2 * r + 1 > lat.n) throw ConfigError("enlarged cube does not fit in the torus");
  if (D.rows() != dof * lat.nsites(0)) throw ConfigError("operator size does not match dof");

  std::vector<int> pos(lat.nsites(0), -1);
  std::unordered_map<std::size_t, std::vector<int>> byhash;
  std::vector<std::vector<Eigen::Triplet<cd>>> reps;
  loc_.resize(ncube);
  SpMatC Dc = D;
  Dc.makeCompressed();
  for (int c = 0; c < ncube; ++c) {
    Coord cc = lat.cube_center(c);
    Local& L = loc_[c];
    for (int a = -r; a <= r; ++a)
      for (int b = -r; b <= r; ++b)
        for (int d = -r; d <= r; ++d) {
          Coord x{lat.wrap(cc[0] + a), lat.wrap(cc[1] + b), lat.wrap(cc[2] + d)};
          L.sites.push_back(lat.index(0, x));
          L.h.push_back(ramp(a, half, pad) * ramp(b, half, pad) * ramp(d, half, pad));
        }
    for (std::size_t i = 0; i < L.sites.size(); ++i) pos[L.sites[i]] = int(i);
    std::vector<Eigen::Triplet<cd>> tr;
    for (std::size_t i = 0; i < L.sites.size(); ++i)
      for (int s = 0; s < dof; ++s) {
        int col = dof * L.sites[i] + s;
        for (SpMatC::InnerIterator it(Dc, col); it; ++it) {
          int p = pos[it.row() / dof];
          if (p < 0) continue;
          tr.emplace_back(dof * p + it.row() % dof, dof * int(i) + s, it.value());
        }
      }
    for (int s : L.sites) pos[s] = -1;
    std::sort(tr.begin(), tr.end(), [](const auto& a, const auto& b) {
      return a.col() != b.col() ? a.col() < b.col() : a.row() < b.row();
    });
    std::size_t hsh = tr.size();
    for (const auto& t : tr) {
      std::size_t v = std::hash<double>()(t.value().real()) ^ (std::hash<double>()(t.value().imag()) << 1);
      hsh = hsh * 1000003u ^ (v + std::size_t(t.row()) * 31u + std::size_t(t.col()));
    }
    int cls = -1;
    for (int cand : byhash[hsh]) {
      const auto& o = reps[cand];
      if (o.size() != tr.size()) continue;
      bool same = true;
      for (std::size_t i = 0; i < tr.size() && same; ++i)
        same = o[i].row() == tr[i].row() && o[i].col() == tr[i].col() && o[i].value() == tr[i].value();
      if (same) { cls = cand; break; }
    }
    if (cls < 0) {
      cls = int(reps.size());
      std::size_t n = dof * L.sites.size();
      double bytes = 16.0 * n * n * (reps.size() + 1);
      if (bytes > 2.5e9) throw ConfigError("too many distinct local inverses for memory");
      SpMatC Dl(n, n);
      Dl.setFromTriplets(tr.begin(), tr.end());
      dloc_.push_back(Dl);
      lu_.emplace_back(MatC(Dl));
      byhash[hsh].push_back(cls);
      reps.push_back(std::move(tr));
    }
    L.cls = cls;
  }
}

std::vector<double> WalkExpansion::partition_sum() const {
  std::vector<double> s(lat.nsites(0), 0.0);
  for (const auto& L : loc_)
    for (std::size_t i = 0; i < L.sites.size(); ++i) s[L.sites[i]] += L.h[i] * L.h[i];
  return s;
}

VecC WalkExpansion::gather(int c, const VecC& f, bool with_h) const {
  const Local& L = loc_[c];
  VecC g(dof * L.sites.size());
  for (std::size_t i = 0; i < L.sites.size(); ++i)
    for (int s = 0; s < dof; ++s)
      g[dof * i + s] = (with_h ? L.h[i] : 1.0) * f[dof * L.sites[i] + s];
  return g;
}

void WalkExpansion::scatter_add(int c, const VecC& v, VecC& out) const {
  const Local& L = loc_[c];
  for (std::size_t i = 0; i < L.sites.size(); ++i)
    for (int s = 0; s < dof; ++s) out[dof * L.sites[i] + s] += v[dof * i + s];
}

bool WalkExpansion::touches(int c, const VecC& f) const {
  const Local& L = loc_[c];
  for (std::size_t i = 0; i < L.sites.size(); ++i) {
    if (L.h[i] == 0.0) continue;
    for (int s = 0; s < dof; ++s)
      if (f[dof * L.sites[i] + s] != cd(0)) return true;
  }
  return false;
}

VecC WalkExpansion::term0(int c, const VecC& f) const {
  VecC u = lu_[loc_[c].cls].solve(gather(c, f, true));
  const Local& L = loc_[c];
  for (std::size_t i = 0; i < L.sites.size(); ++i)
    for (int s = 0; s < dof; ++s) u[dof * i + s] *= L.h[i];
  VecC out = VecC::Zero(f.size());
  scatter_add(c, u, out);
  return out;
}

namespace {
VecC commutator_local(const SpMatC& Dl, const std::vector<double>& h, int dof, const VecC& u) {
  VecC hu = u;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (int s = 0; s < dof; ++s) hu[dof * i + s] *= h[i];
  VecC Du = Dl * u;
  VecC v = Dl * hu;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (int s = 0; s < dof; ++s) v[dof * i + s] -= h[i] * Du[dof * i + s];
  return -v;
}
}  // namespace

VecC WalkExpansion::step(int c, const VecC& f) const {
  const Local& L = loc_[c];
  VecC u = lu_[L.cls].solve(gather(c, f, true));
  VecC out = VecC::Zero(f.size());
  scatter_add(c, commutator_local(dloc_[L.cls], L.h, dof, u), out);
  return out;
}

VecC WalkExpansion::sstar(const VecC& f) const {
  VecC out = VecC::Zero(f.size());
  for (int c = 0; c < ncube; ++c) {
    if (!touches(c, f)) continue;
    const Local& L = loc_[c];
    VecC u = lu_[L.cls].solve(gather(c, f, true));
    for (std::size_t i = 0; i < L.sites.size(); ++i)
      for (int s = 0; s < dof; ++s) u[dof * i + s] *= L.h[i];
    scatter_add(c, u, out);
  }
  return out;
}

VecC WalkExpansion::K(const VecC& f, const std::vector<char>* allowed) const {
  VecC out = VecC::Zero(f.size());
  for (int c = 0; c < ncube; ++c) {
    if (allowed && !(*allowed)[c]) continue;
    if (!touches(c, f)) continue;
    const Local& L = loc_[c];
    VecC u = lu_[L.cls].solve(gather(c, f, true));
    scatter_add(c, commutator_local(dloc_[L.cls], L.h, dof, u), out);
  }
  return out;
}

std::vector<VecC> WalkExpansion::partial_sums(const VecC& f, int nmax) const {
  std::vector<VecC> out;
  VecC v = f;
  VecC acc = VecC::Zero(f.size());
  for (int n = 0; n <= nmax; ++n) {
    acc += sstar(v);
    out.push_back(acc);
    if (n < nmax) v = K(v);
  }
  return out;
}

std::vector<int> WalkExpansion::enlarged(int c, int layers) const {
  std::set<int> out;
  int cs = lat.cube_side_fine();
  Coord x = lat.cube_center(c);
  for (int a = -layers; a <= layers; ++a)
    for (int b = -layers; b <= layers; ++b)
      for (int d = -layers; d <= layers; ++d)
        out.insert(lat.cube_of({lat.wrap(x[0] + a * cs), lat.wrap(x[1] + b * cs), lat.wrap(x[2] + d * cs)}));
  return {out.begin(), out.end()};
}

std::vector<int> WalkExpansion::enlarged(const std::vector<int>& cubes) const {
  std::set<int> out;
  for (int c : cubes)
    for (int d : enlarged(c)) out.insert(d);
  return {out.begin(), out.end()};
}

std::vector<char> WalkExpansion::interior(const std::vector<char>& s, int layers) const {
  std::vector<char> r(ncube, 0);
  for (int c = 0; c < ncube; ++c) {
    bool ok = true;
    for (int d : enlarged(c, layers)) ok = ok && s[d];
    r[c] = ok;
  }
  return r;
}

VecC WalkExpansion::weakened_tail(const VecC& f, const std::vector<char>& s, int nmax) const {
  auto in = interior(s, 2);
  VecC v = f;
  VecC acc = VecC::Zero(f.size());
  for (int n = 1; n <= nmax; ++n) {
    v = K(v, &in);
    acc += v;
  }
  return sstar(acc);
}

std::map<Polymer, VecC> WalkExpansion::pieces(const VecC& f, int nmax, long* nwalks) const {
  std::map<Polymer, VecC> out;
  long count = 0;
  std::vector<int> all(ncube);
  for (int c = 0; c < ncube; ++c) all[c] = c;
  // v = (K_1 S_1 h_1) ... (K_n S_n h_n) f built right to left, X the enlargements so far
  std::function<void(const VecC&, const std::set<int>&, int, const std::vector<int>&)> rec =
      [&](const VecC& v, const std::set<int>& X, int depth, const std::vector<int>& cand) {
        for (int c : cand) {
          if (!touches(c, v)) continue;
          std::set<int> X2 = X;
          for (int d : enlarged(c)) X2.insert(d);
          Polymer key(X2.begin(), X2.end());
          VecC t = term0(c, v);
          ++count;
          auto it = out.find(key);
          if (it == out.end()) out.emplace(key, t);
          else it->second += t;
          if (depth < nmax) rec(step(c, v), X2, depth + 1, enlarged(c));
        }
      };
  rec(f, {}, 0, all);
  if (nwalks) *nwalks = count;
  return out;
}

double WalkExpansion::parametrix_residual(const VecC& f) const {
  VecC lhs = D * sstar(f);
  VecC rhs = f - K(f);
  return (lhs - rhs).norm() / f.norm();
}

ResidualStudy walk_residuals(const WalkExpansion& w, const VecC& f, int nmax) {
  VecC x = sparse_solve(w.D, f);
  auto ps = w.partial_sums(f, nmax);
  ResidualStudy r;
  for (const auto& s : ps) r.residual.push_back((s - x).norm() / x.norm());
  for (std::size_t n = 0; n + 1 < r.residual.size(); ++n) {
    r.ratio.push_back(r.residual[n + 1] / r.residual[n]);
    r.max_ratio = std::max(r.max_ratio, r.ratio.back());
  }
  return r;
}

namespace {

// components of a cube set under sup-metric adjacency
std::vector<std::vector<int>> sup_components(const WalkExpansion& w, const Polymer& Y) {
  std::set<int> left(Y.begin(), Y.end());
  std::vector<std::vector<int>> out;
  while (!left.empty()) {
    std::vector<int> comp, stack{*left.begin()};
    left.erase(left.begin());
    while (!stack.empty()) {
      int c = stack.back();
      stack.pop_back();
      comp.push_back(c);
      for (int d : w.enlarged(c))
        if (left.erase(d)) stack.push_back(d);
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(comp);
  }
  return out;
}

using Poly = std::vector<VecC>;

Poly shiftK(const WalkExpansion& w, const std::vector<char>& mask, const Poly& p) {
  Poly q(p.size(), VecC::Zero(p[0].size()));
  for (std::size_t j = 0; j + 1 < p.size(); ++j)
    if (p[j].squaredNorm() > 0) q[j + 1] = w.K(p[j], &mask);
  return q;
}

void add_to(Poly& a, const Poly& b) {
  for (std::size_t j = 0; j < a.size(); ++j) a[j] += b[j];
}

bool is_zero(const Poly& p) {
  for (const auto& v : p)
    if (v.squaredNorm() > 0) return false;
  return true;
}

}  // namespace

ResumCheck resum_walks(const WalkExpansion& w, const VecC& f, const Polymer& Y, int nmax) {
  ResumCheck rc;
  auto comps = sup_components(w, Y);
  rc.ncomponents = int(comps.size());
  int nc = w.ncube;
  std::vector<std::vector<char>> inmask;
  std::vector<char> outmask(nc, 1);
  for (const auto& comp : comps) {
    std::vector<char> s(nc, 0);
    for (int c : comp) s[c] = 1;
    auto m = w.interior(s);
    for (int c = 0; c < nc; ++c)
      if (m[c]) { outmask[c] = 0; ++rc.inner_cubes; }
    inmask.push_back(m);
  }
  std::size_t nb = comps.size();
  int deg = nmax + 1;
  VecC zero = VecC::Zero(f.size());

  auto R = [&](std::size_t b, const Poly& p) {
    Poly acc(deg, zero), cur = p;
    for (int j = 1; j <= nmax; ++j) {
      cur = shiftK(w, inmask[b], cur);
      if (is_zero(cur)) break;
      add_to(acc, cur);
    }
    return acc;
  };
  auto W = [&](const Poly& p) {
    Poly acc = p;
    for (std::size_t b = 0; b < nb; ++b) add_to(acc, R(b, p));
    return acc;
  };
  auto sstar_masked = [&](const std::vector<char>& mask, const Poly& p) {
    Poly q(deg, zero);
    for (int j = 0; j < deg; ++j) {
      if (p[j].squaredNorm() == 0) continue;
      for (int c = 0; c < nc; ++c)
        if (mask[c] && w.touches(c, p[j])) q[j] += w.term0(c, p[j]);
    }
    return q;
  };

  // sum_m (t K_out W)^m f
  Poly base(deg, zero);
  base[0] = f;
  Poly total = base, term = base;
  for (int m = 1; m <= nmax; ++m) {
    term = shiftK(w, outmask, W(term));
    if (is_zero(term)) break;
    add_to(total, term);
  }
  // first factor: in a component (grouped with the following in-Y steps) or outside
  Poly rhs = sstar_masked(outmask, W(total));
  for (std::size_t b = 0; b < nb; ++b) {
    Poly g = total;
    add_to(g, R(b, total));
    add_to(rhs, sstar_masked(inmask[b], g));
  }
  // cross terms that the grouping drops
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t b2 = 0; b2 < nb; ++b2) {
      if (b == b2) continue;
      Poly rb2 = R(b2, total);
      for (const auto& v : sstar_masked(inmask[b], rb2)) rc.cross_product = std::max(rc.cross_product, v.norm());
      for (const auto& v : shiftK(w, inmask[b], rb2)) rc.cross_product = std::max(rc.cross_product, v.norm());
    }

  VecC v = f;
  for (int j = 0; j <= nmax; ++j) {
    VecC lhs = w.sstar(v);
    double nl = lhs.norm();
    double e = (lhs - rhs[j]).norm() / (nl > 0 ? nl : 1.0);
    rc.rel.push_back(e);
    rc.max_rel = std::max(rc.max_rel, e);
    if (j < nmax) v = w.K(v);
  }
  return rc;
}

PieceDecay piece_decay(const Lattice& lat, const std::map<Polymer, VecC>& pieces, double finf) {
  PieceDecay pd;
  std::map<double, double> best;
  for (const auto& [X, v] : pieces) {
    double d = tree_distance(lat, X);
    double m = v.cwiseAbs().maxCoeff() / finf;
    pd.dist.push_back(d);
    pd.size.push_back(m);
    if (m > 0) best[d] = std::max(best[d], m);
  }
  // least squares of log max|S(X) f| against d_M(X)
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (auto [d, m] : best) {
    double y = std::log(m);
    n += 1; sx += d; sy += y; sxx += d * d; sxy += d * y;
  }
  if (n >= 2) {
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    pd.kappa = -slope;
    pd.logC = (sy - slope * sx) / n;
  }
  return pd;
}

}  // namespace rgqed3
