#include "rgqed3/polymer.hpp"

#include <algorithm>
#include <boost/random/sobol.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "rgqed3/gauge.hpp"

namespace rgqed3 {

// ---------------------------------------------------------------- universes

std::vector<int> FieldUniverse::species() const {
  std::vector<int> s(ngen(), 1);
  std::fill(s.begin(), s.begin() + npsi(), 0);
  return s;
}

int FieldUniverse::site_pos(int fine_site) const {
  auto it = std::lower_bound(sites.begin(), sites.end(), fine_site);
  if (it == sites.end() || *it != fine_site) return -1;
  return int(it - sites.begin());
}

int FieldUniverse::pair_pos(int x, int y) const {
  auto it = std::lower_bound(pairs.begin(), pairs.end(), std::make_pair(x, y));
  if (it == pairs.end() || *it != std::make_pair(x, y)) return -1;
  return int(it - pairs.begin());
}

FieldUniverse::Gen FieldUniverse::decode(int g) const {
  Gen r{};
  r.chi = g >= npsi();
  int h = r.chi ? g - npsi() : g;
  r.idx = h / 8;
  r.omega = (h % 8) / 4;
  r.beta = h % 4;
  return r;
}

std::vector<int> polymer_sites(const Lattice& lat, const Polymer& X) {
  std::vector<int> out;
  int cs = lat.cube_side_fine(), half = cs / 2;
  for (int c : X) {
    Coord cc = lat.cube_center(c);
    for (int a = -half; a < cs - half; ++a)
      for (int b = -half; b < cs - half; ++b)
        for (int d = -half; d < cs - half; ++d)
          out.push_back(lat.index(0, {lat.wrap(cc[0] + a), lat.wrap(cc[1] + b), lat.wrap(cc[2] + d)}));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

FieldUniverse make_universe(const Lattice& lat, const Polymer& X, bool with_chi) {
  FieldUniverse U;
  U.sites = polymer_sites(lat, X);
  if (with_chi)
    for (int x : U.sites)
      for (int y : U.sites)
        if (x != y) U.pairs.push_back({x, y});
  return U;
}

Kernel embed(const Kernel& e, const FieldUniverse& from, const FieldUniverse& to) {
  std::vector<int> map(from.ngen());
  for (int g = 0; g < from.ngen(); ++g) {
    auto d = from.decode(g);
    int pos;
    if (d.chi) {
      auto [x, y] = from.pairs[d.idx];
      pos = to.pair_pos(x, y);
      if (pos < 0) throw DomainError("embed: pair missing in target universe");
      map[g] = d.omega ? to.chibar(pos, d.beta) : to.chi(pos, d.beta);
    } else {
      pos = to.site_pos(from.sites[d.idx]);
      if (pos < 0) throw DomainError("embed: site missing in target universe");
      map[g] = d.omega ? to.psibar(pos, d.beta) : to.psi(pos, d.beta);
    }
  }
  Kernel out(to.ngen(), to.species());
  for (const auto& [m, v] : e.c) {
    std::vector<int> seq(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) seq[i] = map[m[i]];
    int s = permutation_sign(seq);
    out.add(seq, double(s) * v);
  }
  return out;
}

void add_pair(Kernel& e, int g1, int g2, cd v) {
  if (g1 == g2 || v == cd(0)) return;
  if (g1 < g2) e.add({g1, g2}, v);
  else e.add({g2, g1}, -v);
}

cd pair_coef(const Kernel& e, int g1, int g2) {
  if (g1 == g2) return 0;
  return g1 < g2 ? e.coef({g1, g2}) : -e.coef({g2, g1});
}

std::map<std::pair<int, int>, double> degree_norms(const Kernel& e, const FieldUniverse& U) {
  std::map<std::pair<int, int>, double> out;
  int np = U.npsi();
  for (const auto& [m, v] : e.c) {
    int n = 0, k = 0;
    for (int g : m) (g < np ? n : k)++;
    out[{n, k}] += std::abs(v);
  }
  for (auto& [nm, v] : out) v *= std::tgamma(nm.first + 1.0) * std::tgamma(nm.second + 1.0);
  return out;
}

double site_distance(const Lattice& lat, int x, int y) {
  Coord a = lat.coord(0, x), b = lat.coord(0, y);
  double s = 0;
  for (int mu = 0; mu < 3; ++mu) {
    double d = lat.disp(a[mu], b[mu]);
    s += d * d;
  }
  return lat.eta * std::sqrt(s);
}

cd transport(const Lattice& lat, const VecC& A, double e, int x, int y) {
  if (x == y) return 1.0;
  Coord a = lat.coord(0, x), b = lat.coord(0, y);
  Coord d{lat.disp(a[0], b[0]), lat.disp(a[1], b[1]), lat.disp(a[2], b[2])};
  cd t = 0;
  for (auto [bd, v] : lat.tau_row(0, a, d)) t += v * A[bd];
  return std::exp(I1 * e * lat.eta * t);
}

PolymerFunction::PolymerFunction(const Lattice* lat_, std::vector<Polymer> support_, KernelFn fn_,
                                 UniverseFn ufn_, double e_, bool has_chi_)
    : lat(lat_), support(std::move(support_)), fn(std::move(fn_)), ufn(std::move(ufn_)), e(e_),
      has_chi(has_chi_) {}

double PolymerFunction::volume(const Polymer& X) const {
  return double(polymer_sites(*lat, X).size()) * lat->weight(0);
}

// ---------------------------------------------------------------- test families

namespace {

std::vector<Polymer> all_polymers(const Lattice& lat, int cap) {
  std::set<Polymer> s;
  for (int c = 0; c < lat.ncubes(); ++c)
    for (auto& X : polymers_containing(lat, c, cap))
      if (X[0] == c) s.insert(X);
  return {s.begin(), s.end()};
}

std::vector<Polymer> straight_lines(const Lattice& lat, int len) {
  std::set<Polymer> s;
  int m = lat.ncubes_side();
  if (len > m) return {};
  int cs = lat.cube_side_fine();
  for (int c = 0; c < lat.ncubes(); ++c)
    for (int mu = 0; mu < 3; ++mu) {
      Polymer X;
      Coord cc = lat.cube_center(c);
      for (int i = 0; i < len; ++i) {
        Coord p = cc;
        p[mu] = lat.wrap(p[mu] + i * cs);
        X.push_back(lat.cube_of(p));
      }
      std::sort(X.begin(), X.end());
      s.insert(X);
    }
  return {s.begin(), s.end()};
}

UniverseFn plain_universe(const Lattice& lat, bool chi) {
  const Lattice* lp = &lat;
  return [lp, chi](const Polymer& X) { return make_universe(*lp, X, chi); };
}

// Dirichlet restriction of D-slash + mass to the sites of X
MatC local_dirac(const Lattice& lat, const std::vector<int>& sites, const VecC& A, double e, double mass) {
  const auto& G = gamma_rep();
  int ns = int(sites.size());
  double eta = lat.eta;
  MatC D = MatC::Zero(4 * ns, 4 * ns);
  Mat4 Id = Mat4::Identity();
  auto pos = [&](int s) {
    auto it = std::lower_bound(sites.begin(), sites.end(), s);
    return (it != sites.end() && *it == s) ? int(it - sites.begin()) : -1;
  };
  for (int i = 0; i < ns; ++i) {
    int x = sites[i];
    D.block<4, 4>(4 * i, 4 * i) += (3.0 / eta + mass) * Id;
    for (int mu = 0; mu < 3; ++mu) {
      int j = pos(lat.shift(0, x, mu, 1));
      if (j < 0) continue;
      cd u = std::exp(I1 * e * eta * A[lat.bond(0, x, mu)]);
      D.block<4, 4>(4 * i, 4 * j) += -(u / eta) * 0.5 * (Id - G.g[mu]);
      D.block<4, 4>(4 * j, 4 * i) += -(std::conj(u) / eta) * 0.5 * (Id + G.g[mu]);
    }
  }
  return D;
}

}  // namespace

double local_logdet(const Lattice& lat, const Polymer& X, const VecC& A, double e, double mass) {
  auto sites = polymer_sites(lat, X);
  MatC D = local_dirac(lat, sites, A, e, mass);
  Eigen::PartialPivLU<MatC> lu(D);
  cd s = 0;
  for (Eigen::Index i = 0; i < D.rows(); ++i) s += std::log(lu.matrixLU()(i, i));
  // the permutation sign and the phase drop out of the real part
  return s.real();
}

PolymerFunction toy_family(const Lattice& lat, const ToyParams& p) {
  auto support = all_polymers(lat, p.cap);
  if (p.large_line > 0) {
    auto lines = straight_lines(lat, p.large_line);
    support.insert(support.end(), lines.begin(), lines.end());
    std::sort(support.begin(), support.end());
    support.erase(std::unique(support.begin(), support.end()), support.end());
  }
  const Lattice* lp = &lat;
  const auto& G = gamma_rep();
  KernelFn fn = [lp, p, &G](const Polymer& X, const VecC& A) {
    const Lattice& lat = *lp;
    FieldUniverse U = make_universe(lat, X, false);
    int ns = int(U.sites.size());
    double eta = lat.eta, w3 = lat.weight(0);
    double w = p.amp * std::exp(-p.decay * tree_distance(lat, X));
    Kernel K(U.ngen(), U.species());

    // energy: constant, plaquettes inside X, local log det
    double e00 = p.c0 * ns * w3;
    if (p.cF != 0)
      for (int i = 0; i < ns; ++i)
        for (int pl = 0; pl < 3; ++pl) {
          auto bonds = lat.plaquette(0, 3 * U.sites[i] + pl);
          bool inside = true;
          cd circ = 0;
          for (auto [b, sg] : bonds) {
            int s0 = b / 3, mu = b % 3;
            if (U.site_pos(s0) < 0 || U.site_pos(lat.shift(0, s0, mu, 1)) < 0) inside = false;
            circ += double(sg) * A[b];
          }
          if (inside) e00 += p.cF * (1.0 - std::cos(p.e * eta * circ.real())) * w3;
        }
    if (p.cdet != 0) {
      VecC zero = VecC::Zero(A.size());
      e00 += p.cdet * (local_logdet(lat, X, A, p.e, p.dirac_mass) - local_logdet(lat, X, zero, p.e, p.dirac_mass));
    }
    K.add({}, w * e00);

    Mat4 Id = Mat4::Identity();
    for (int i = 0; i < ns; ++i) {
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          cd v = p.a * Id(a, b) + p.g0 * G.g[0](a, b);
          add_pair(K, U.psibar(i, a), U.psi(i, b), w * w3 * v);
        }
      for (int mu = 0; mu < 3; ++mu) {
        int x = U.sites[i];
        int j = U.site_pos(lat.shift(0, x, mu, 1));
        if (j < 0 || p.b == 0) continue;
        cd u = std::exp(I1 * p.e * eta * A[lat.bond(0, x, mu)]);
        Mat4 fw = -0.5 * u * (Id - G.g[mu]), bw = -0.5 * std::conj(u) * (Id + G.g[mu]);
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            add_pair(K, U.psibar(i, a), U.psi(j, b), p.b * w * w3 * fw(a, b));
            add_pair(K, U.psibar(j, a), U.psi(i, b), p.b * w * w3 * bw(a, b));
          }
      }
    }
    if (p.q != 0)
      for (int i = 0; i < ns; ++i) {
        Kernel B(U.ngen(), U.species());
        for (int a = 0; a < 4; ++a) add_pair(B, U.psibar(i, a), U.psi(i, a), 1.0);
        K += product(B, B) * (p.q * w * w3 * w3);
      }
    K.prune();
    return K;
  };
  return PolymerFunction(&lat, support, fn, plain_universe(lat, false), p.e, false);
}

PolymerFunction constant_family(const Lattice& lat, int cap, cd c) {
  const Lattice* lp = &lat;
  KernelFn fn = [lp, c](const Polymer& X, const VecC&) {
    FieldUniverse U = make_universe(*lp, X, false);
    return Kernel::constant(U.ngen(), c, U.species());
  };
  return PolymerFunction(&lat, all_polymers(lat, cap), fn, plain_universe(lat, false), 0.0, false);
}

PolymerFunction mass_insertion_family(const Lattice& lat, int cube, cd c) {
  const Lattice* lp = &lat;
  KernelFn fn = [lp, c](const Polymer& X, const VecC&) {
    FieldUniverse U = make_universe(*lp, X, false);
    Kernel K(U.ngen(), U.species());
    double w3 = lp->weight(0);
    for (int i = 0; i < int(U.sites.size()); ++i)
      for (int b = 0; b < 4; ++b) add_pair(K, U.psibar(i, b), U.psi(i, b), c * w3);
    return K;
  };
  return PolymerFunction(&lat, {{cube}}, fn, plain_universe(lat, false), 0.0, false);
}

// ---------------------------------------------------------------- norms

std::pair<double, double> h_pair(double ek, double eps) {
  return {std::pow(ek, -0.25), std::pow(ek, -0.25 + eps)};
}

double kernel_norm_h(const Kernel& e, const FieldUniverse& U, double h1, double h2) {
  (void)U;
  return kernel_norm(e, std::vector<double>{h1, h2});
}

std::vector<VecC> sample_fields(const Lattice& lat, const NormParams& p, int level) {
  int j = level < 0 ? lat.k : level;
  (void)j;
  std::vector<VecC> out;
  int nb = lat.nbonds(0);
  if (p.include_zero) out.push_back(VecC::Zero(nb));
  // modes: cos/sin of the lowest momenta per bond direction
  const int nmode = 12;
  boost::random::sobol gen(nmode);
  for (std::uint64_t s = 0; s < p.seed; ++s) gen.discard(nmode);
  FieldDomainParams dp{p.ek, p.eps, p.alpha};
  double tw = 2.0 * M_PI / lat.n;
  for (int t = 0; t < p.samples; ++t) {
    std::vector<double> u(nmode);
    for (auto& x : u) x = 2.0 * (double(gen()) - double(gen.min())) / (double(gen.max()) - double(gen.min()) + 1.0) - 1.0;
    VecC A = VecC::Zero(nb);
    for (int x = 0; x < lat.nsites(0); ++x) {
      Coord c = lat.coord(0, x);
      for (int mu = 0; mu < 3; ++mu) {
        double v = 0;
        for (int q = 0; q < 2; ++q) {
          int nu = (mu + 1 + q) % 3;
          double ph = tw * c[nu];
          v += u[4 * mu + 2 * q] * std::cos(ph) + u[4 * mu + 2 * q + 1] * std::sin(ph);
        }
        A[lat.bond(0, x, mu)] = v;
      }
    }
    auto dn = domain_norms(lat, A, p.alpha);
    double bA = std::pow(p.ek, -0.75 + p.eps), bdA = std::pow(p.ek, -0.75 + 2 * p.eps),
           bh = std::pow(p.ek, -0.75 + 3 * p.eps);
    double sc = 1.0;
    if (dn.sup_A > 0) sc = std::min(sc, bA / dn.sup_A);
    if (dn.sup_dA > 0) sc = std::min(sc, bdA / dn.sup_dA);
    if (dn.sup_holder > 0) sc = std::min(sc, bh / dn.sup_holder);
    A *= sc * (1.0 - 1e-9);
    if (!in_domain_R(lat, A, dp)) throw DomainError("sample_fields: scaled field outside the domain");
    out.push_back(A);
  }
  return out;
}

NormReport polymer_norm(const PolymerFunction& E, const NormParams& p, int level) {
  NormReport r;
  auto fields = sample_fields(*E.lat, p, level);
  r.nfields = int(fields.size());
  auto [h1, h2] = h_pair(p.ek, p.eps);
  for (const auto& X : E.support) {
    double wt = std::exp(p.kappa * tree_distance(*E.lat, X));
    FieldUniverse U = E.universe(X);
    for (const auto& A : fields) {
      double v = kernel_norm_h(E.eval(X, A), U, h1, h2) * wt;
      if (v > r.value) {
        r.value = v;
        r.argmax = X;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------- extraction

bool is_small(const Lattice& lat, const Polymer& X) { return tree_distance(lat, X) <= lat.L; }

namespace {

// sum over x, y of the psibar(x, a) psi(y, b) coefficients
Mat4 bilinear_moment(const Kernel& K, const FieldUniverse& U) {
  Mat4 m = Mat4::Zero();
  for (const auto& [mono, v] : K.c) {
    if (mono.size() != 2) continue;
    auto d0 = U.decode(mono[0]), d1 = U.decode(mono[1]);
    if (d0.chi || d1.chi || d0.omega == d1.omega) continue;
    // psibar first: v g0 g1 with g0 psibar, else v g0 g1 = -v g1 g0
    if (d0.omega == 1) m(d0.beta, d1.beta) += v;
    else m(d1.beta, d0.beta) -= v;
  }
  return m;
}

struct Ext {
  std::map<Polymer, cd> a0;
  std::map<Polymer, Mat4> a2;
};

}  // namespace

ExtractionResult extract(const PolymerFunction& E, int ref_cube) {
  ExtractionResult r;
  const Lattice& lat = *E.lat;
  VecC zero = VecC::Zero(lat.nbonds(0));
  std::vector<cd> epsc(lat.ncubes(), 0.0);
  std::vector<Mat4> mc(lat.ncubes(), Mat4::Zero());
  auto a0 = std::make_shared<std::map<Polymer, cd>>();
  auto a2 = std::make_shared<std::map<Polymer, Mat4>>();
  for (const auto& X : E.support) {
    if (!is_small(lat, X)) continue;
    Kernel K = E.eval(X, zero);
    FieldUniverse U = E.universe(X);
    double vol = double(U.sites.size()) * lat.weight(0);
    cd al0 = K.coef({}) / vol;
    Mat4 al2 = bilinear_moment(K, U) / vol;
    (*a0)[X] = al0;
    (*a2)[X] = al2;
    for (int c : X) {
      epsc[c] -= al0;
      mc[c] -= al2;
    }
  }
  r.alpha0 = *a0;
  r.alpha2 = *a2;
  r.eps_c = epsc[ref_cube];
  r.eps = r.eps_c.real();
  r.mmat = mc[ref_cube];
  cd tr = r.mmat.trace() / 4.0;
  r.m = tr.real();
  r.m_nonscalar = (r.mmat - tr * Mat4::Identity()).norm();
  r.m_imag = std::max(std::abs(tr.imag()), std::abs(r.eps_c.imag()));
  for (int c = 0; c < lat.ncubes(); ++c) r.eps_spread = std::max(r.eps_spread, std::abs(epsc[c] - r.eps_c));

  const Lattice* lp = &lat;
  KernelFn base = E.fn;
  UniverseFn ufn = E.ufn;
  KernelFn fn = [lp, base, ufn, a0, a2](const Polymer& X, const VecC& A) {
    Kernel K = base(X, A);
    auto it = a0->find(X);
    if (it == a0->end()) return K;
    FieldUniverse U = ufn(X);
    double w3 = lp->weight(0);
    double vol = double(U.sites.size()) * w3;
    K.add({}, -it->second * vol);
    const Mat4& al2 = a2->at(X);
    for (int i = 0; i < int(U.sites.size()); ++i)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) add_pair(K, U.psibar(i, a), U.psi(i, b), -w3 * al2(a, b));
    K.prune(1e-300);
    return K;
  };
  r.RE = PolymerFunction(&lat, E.support, fn, ufn, E.e, E.has_chi);
  return r;
}

namespace {

FieldUniverse global_universe(const Lattice& lat) {
  FieldUniverse U;
  U.sites.resize(lat.nsites(0));
  std::iota(U.sites.begin(), U.sites.end(), 0);
  return U;
}

double kernel_l1(const Kernel& K) {
  double s = 0;
  for (const auto& [m, v] : K.c) s += std::abs(v);
  return s;
}

// -eps Vol(Lam) - int_Lam psibar m psi on the global universe
Kernel local_terms(const Lattice& lat, const FieldUniverse& G, const std::vector<int>& sites, cd eps, const Mat4& m) {
  Kernel K(G.ngen(), G.species());
  double w3 = lat.weight(0);
  K.add({}, -eps * double(sites.size()) * w3);
  for (int x : sites) {
    int i = G.site_pos(x);
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) add_pair(K, G.psibar(i, a), G.psi(i, b), -w3 * m(a, b));
  }
  return K;
}

}  // namespace

double decomposition_residual(const PolymerFunction& E, const ExtractionResult& ex, const VecC& A) {
  const Lattice& lat = *E.lat;
  FieldUniverse G = global_universe(lat);
  Kernel lhs(G.ngen(), G.species()), rhs(G.ngen(), G.species());
  for (const auto& X : E.support) {
    FieldUniverse U = E.universe(X);
    lhs += embed(E.eval(X, A), U, G);
    rhs += embed(ex.RE.eval(X, A), U, G);
  }
  rhs += local_terms(lat, G, G.sites, ex.eps_c, ex.mmat);
  Kernel d = lhs - rhs;
  return kernel_l1(d) / std::max(kernel_l1(lhs), 1e-300);
}

RestrictedCheck restricted_decomposition_check(const PolymerFunction& E, const ExtractionResult& ex,
                              const std::vector<char>& lambda, const VecC& A) {
  const Lattice& lat = *E.lat;
  RestrictedCheck rc;
  FieldUniverse G = global_universe(lat);
  Polymer lamP;
  for (int c = 0; c < lat.ncubes(); ++c)
    if (lambda[c]) lamP.push_back(c);
  std::vector<int> lam_sites = polymer_sites(lat, lamP);
  double w3 = lat.weight(0);
  VecC zero = VecC::Zero(lat.nbonds(0));

  Kernel lhs(G.ngen(), G.species()), rhs(G.ngen(), G.species()), bloc(G.ngen(), G.species());
  std::vector<cd> epsL(lat.ncubes(), 0.0);
  std::vector<Mat4> mL(lat.ncubes(), Mat4::Zero());
  std::vector<char> near(lat.ncubes(), 0);
  for (const auto& X : E.support) {
    bool inside = std::all_of(X.begin(), X.end(), [&](int c) { return lambda[c] != 0; });
    bool meets = std::any_of(X.begin(), X.end(), [&](int c) { return lambda[c] != 0; });
    FieldUniverse U = E.universe(X);
    if (inside) {
      lhs += embed(E.eval(X, A), U, G);
      rhs += embed(ex.RE.eval(X, A), U, G);
    }
    auto it = ex.alpha0.find(X);
    if (it == ex.alpha0.end()) continue;
    const Mat4& a2 = ex.alpha2.at(X);
    if (inside)
      for (int c : X) {
        epsL[c] -= it->second;
        mL[c] -= a2;
      }
    if (!meets || inside) continue;
    // B(X) for X crossing the boundary
    ++rc.boundary_polymers;
    for (int c : X) near[c] = 1;
    std::vector<int> in;
    for (int x : U.sites)
      if (std::binary_search(lam_sites.begin(), lam_sites.end(), x)) in.push_back(x);
    bloc.add({}, -it->second * double(in.size()) * w3);
    for (int x : in) {
      int i = G.site_pos(x);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) add_pair(bloc, G.psibar(i, a), G.psi(i, b), -w3 * a2(a, b));
    }
  }
  rhs += local_terms(lat, G, lam_sites, ex.eps_c, ex.mmat);
  rhs += bloc;
  rc.residual = kernel_l1(lhs - rhs) / std::max(kernel_l1(lhs), 1e-300);

  // the cube-wise form of the correction, and its support
  Kernel bdef(G.ngen(), G.species());
  for (int c : lamP) {
    cd de = epsL[c] - ex.eps_c;
    Mat4 dm = mL[c] - ex.mmat;
    bool nz = std::abs(de) > 1e-14 * (1 + std::abs(ex.eps_c)) || dm.norm() > 1e-14 * (1 + ex.mmat.norm());
    if (nz && !near[c]) ++rc.nonzero_outside_cross;
    auto sites = polymer_sites(lat, {c});
    bdef.add({}, -de * double(sites.size()) * w3);
    for (int x : sites) {
      int i = G.site_pos(x);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) add_pair(bdef, G.psibar(i, a), G.psi(i, b), -w3 * dm(a, b));
    }
  }
  rc.residual = std::max(rc.residual, kernel_l1(bdef - bloc) / std::max(kernel_l1(lhs), 1e-300));
  return rc;
}

}  // namespace rgqed3
