#include "rgqed3/flow.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <memory>
#include <set>

#include "rgqed3/rgstep.hpp"

namespace rgqed3 {

double flow_e(const FlowParams& p, int k) { return p.e * std::pow(double(p.L), -0.5 * (p.N - k)); }
double flow_mbar(const FlowParams& p, int k) { return p.mbar * std::pow(double(p.L), -double(p.N - k)); }

double schedule_residual(const FlowParams& p) {
  double r = 0;
  for (int k = 0; k < p.K(); ++k) {
    double a = flow_e(p, k + 1), b = std::sqrt(double(p.L)) * flow_e(p, k);
    r = std::max(r, std::abs(a - b) / a);
  }
  return r;
}

namespace {

double wm(const FlowParams& p, int k) { return std::pow(flow_e(p, k), -0.75 + 8 * p.eps); }
double wE(const FlowParams& p, int k) { return std::pow(flow_e(p, k), -0.25 + 7 * p.eps); }

}  // namespace

FlowState zero_state(const FlowParams& p) {
  int K = p.K();
  return {std::vector<double>(K + 1, 0.0), std::vector<double>(K + 1, 0.0)};
}

FlowState random_state(const FlowParams& p, Rng& rng, double r) {
  FlowState x = zero_state(p);
  for (int k = 0; k < p.K(); ++k) x.m[k] = r * rng.uniform() / wm(p, k);
  for (int k = 1; k <= p.K(); ++k) x.E[k] = r * rng.uniform() / wE(p, k);
  return x;
}

FlowState flow_map(const FlowParams& p, const StepMaps& f, const FlowState& x) {
  int K = p.K();
  FlowState y = zero_state(p);
  for (int k = 0; k < K; ++k) y.m[k] = x.m[k + 1] / p.L - f.m_of(k, x.E[k]);
  for (int k = 1; k <= K; ++k)
    y.E[k] = f.LR(k - 1, x.E[k - 1]) + f.Edet(k - 1) + f.Esharp(k - 1, x.m[k - 1], x.E[k - 1]);
  return y;
}

double flow_norm(const FlowParams& p, const FlowState& x) {
  double r = 0;
  for (int k = 0; k <= p.K(); ++k)
    r = std::max({r, wm(p, k) * std::abs(x.m[k]), wE(p, k) * std::abs(x.E[k])});
  return r;
}

double flow_distance(const FlowParams& p, const FlowState& a, const FlowState& b) {
  FlowState d = a;
  for (int k = 0; k <= p.K(); ++k) {
    d.m[k] -= b.m[k];
    d.E[k] -= b.E[k];
  }
  return flow_norm(p, d);
}

double boundary_residual(const FlowParams& p, const FlowState& x) {
  return std::abs(x.m[p.K()]) + std::abs(x.E[0]);
}

namespace {

EnergyFlow energy_from(const FlowParams& p, const std::vector<double>& epsE, const std::vector<double>& eps0,
                       double m0) {
  int K = p.K();
  EnergyFlow r;
  r.eps.assign(K + 1, 0.0);
  double g = 0.25 - 7 * p.eps;
  for (int k = 0; k < K; ++k) r.c = std::max(r.c, std::abs(epsE[k] + eps0[k]) / std::pow(flow_e(p, k), g));
  for (int k = K - 1; k >= 0; --k) r.eps[k] = r.eps[k + 1] / std::pow(double(p.L), 3) - epsE[k] - eps0[k];
  for (int k = 0; k < K; ++k)
    if (r.c > 0) r.bound_ratio = std::max(r.bound_ratio, std::abs(r.eps[k]) / (2 * r.c * std::pow(flow_e(p, k), g)));
  r.bare_eps = std::pow(double(p.L), 3.0 * p.N) * r.eps[0];
  r.bare_m = std::pow(double(p.L), double(p.N)) * m0;
  return r;
}

}  // namespace

EnergyFlow energy_backward(const FlowParams& p, const StepMaps& f, const FlowState& xi) {
  int K = p.K();
  std::vector<double> a(K + 1, 0.0), b(K + 1, 0.0);
  for (int k = 0; k < K; ++k) {
    a[k] = f.eps_of(k, xi.E[k]);
    b[k] = f.eps0(k);
  }
  return energy_from(p, a, b, xi.m[0]);
}

double energy_geometric_residual(const FlowParams& p, double c) {
  int K = p.K();
  std::vector<double> a(K + 1, c), b(K + 1, 0.0);
  EnergyFlow r = energy_from(p, a, b, 0.0);
  double q = std::pow(double(p.L), -3.0), res = 0;
  for (int k = 0; k <= K; ++k) {
    double exact = -c * (1 - std::pow(q, K - k)) / (1 - q);
    res = std::max(res, std::abs(r.eps[k] - exact) / std::abs(c));
  }
  return res;
}

FlowSolution solve_flow(const FlowParams& p, const StepMaps& f, const FlowState& init) {
  FlowSolution s;
  FlowState x = init;
  x.m[p.K()] = 0;
  x.E[0] = 0;
  double prev = -1;
  s.status = "max_iter";
  for (int it = 1; it <= p.max_iter; ++it) {
    FlowState y = flow_map(p, f, x);
    FlowIter h;
    h.it = it;
    h.dist = flow_distance(p, y, x);
    h.ratio = prev > 0 ? h.dist / prev : 0;
    h.norm = flow_norm(p, y);
    s.history.push_back(h);
    s.max_norm = std::max(s.max_norm, h.norm);
    if (prev > 1e3 * p.tol) s.max_ratio = std::max(s.max_ratio, h.ratio);
    x = y;
    s.iterations = it;
    if (h.norm >= 1 && s.exit_level < 0) {
      for (int k = 0; k <= p.K() && s.exit_level < 0; ++k)
        if (wm(p, k) * std::abs(x.m[k]) >= 1 || wE(p, k) * std::abs(x.E[k]) >= 1) s.exit_level = k;
      s.status = "left_B1";
      break;
    }
    if (!std::isfinite(h.dist) || (prev > 0 && it > 3 && h.ratio > 1 && h.dist > 1e3 * p.tol)) {
      s.status = "diverged";
      break;
    }
    if (h.dist <= p.tol) {
      s.status = "converged";
      break;
    }
    prev = h.dist;
  }
  s.xi = x;
  s.boundary = boundary_residual(p, x);
  s.energy = energy_backward(p, f, x);
  return s;
}

StepMaps affine_maps(const FlowParams& p, double lip, std::uint64_t seed) {
  int K = p.K();
  Rng rng(seed);
  auto v = std::make_shared<std::vector<std::array<double, 8>>>(K + 1);
  for (int k = 0; k <= K; ++k)
    for (auto& a : (*v)[k]) a = rng.uniform();
  double l3 = lip / 3;
  FlowParams q = p;
  StepMaps f;
  f.name = "affine";
  // weighted Lipschitz constants l3 each; offsets of size 0.1 in the B norm
  f.m_of = [q, v, l3](int k, double E) { return l3 * wE(q, k) / wm(q, k) * (*v)[k][0] * E + 0.1 * (*v)[k][1] / wm(q, k); };
  f.LR = [q, v, l3](int k, double E) { return l3 * wE(q, k) / wE(q, k + 1) * (*v)[k][2] * E; };
  f.Edet = [q, v](int k) { return 0.1 * (*v)[k][3] / wE(q, k + 1); };
  f.Esharp = [q, v, l3](int k, double m, double E) {
    return l3 * (wm(q, k) / wE(q, k + 1) * (*v)[k][4] * m + wE(q, k) / wE(q, k + 1) * (*v)[k][5] * E) +
           0.05 * (*v)[k][6] / wE(q, k + 1);
  };
  f.eps_of = [v](int k, double E) { return 0.5 * (*v)[k][7] * E; };
  f.eps0 = [q](int k) { return 0.01 * std::pow(flow_e(q, k), 0.25 - 7 * q.eps); };
  f.lip_m = f.lip_LR = f.lip_sharp_m = f.lip_sharp_E = l3;
  return f;
}

FlowState affine_fixed_point(const FlowParams& p, const StepMaps& f) {
  int K = p.K(), n = 2 * (K + 1);
  auto pack = [&](const FlowState& x) {
    VecR v(n);
    for (int k = 0; k <= K; ++k) {
      v[k] = x.m[k];
      v[K + 1 + k] = x.E[k];
    }
    return v;
  };
  FlowState z = zero_state(p);
  VecR c = pack(flow_map(p, f, z));
  MatR B(n, n);
  for (int i = 0; i < n; ++i) {
    FlowState u = z;
    if (i <= K) u.m[i] = 1;
    else u.E[i - K - 1] = 1;
    B.col(i) = pack(flow_map(p, f, u)) - c;
  }
  VecR x = (MatR::Identity(n, n) - B).partialPivLu().solve(c);
  FlowState r = z;
  for (int k = 0; k <= K; ++k) {
    r.m[k] = x[k];
    r.E[k] = x[K + 1 + k];
  }
  return r;
}

StepMaps surrogate_maps(const FlowParams& p, const SurrogateParams& s) {
  FlowParams q = p;
  double L = p.L, eps = p.eps;
  StepMaps f;
  f.name = "surrogate";
  f.m_of = [q, s](int k, double E) { return s.Cm * std::sqrt(flow_e(q, k)) * E; };
  f.LR = [s, L, eps](int, double E) { return s.CL * std::pow(L, -0.25 + 2 * eps) * E; };
  f.Edet = [q, s, eps](int k) { return s.det * std::pow(flow_e(q, k + 1), 0.25 - 2 * eps); };
  f.Esharp = [q, s, eps](int k, double m, double E) {
    return s.sharp * std::pow(flow_e(q, k), 0.25 - 6 * eps) * (1 + std::tanh(m) + std::tanh(E)) / 3;
  };
  f.eps_of = [s](int, double E) { return s.eps_of * E; };
  f.eps0 = [q, s, eps](int k) { return s.eps0 * std::pow(flow_e(q, k), 0.25 - 7 * eps); };
  f.lip_m = s.Cm;
  f.lip_LR = s.CL * std::pow(L, -0.25 + 2 * eps);
  f.lip_sharp_m = f.lip_sharp_E = s.sharp / 3;
  return f;
}

NDependence n_dependence(const FlowParams& base, const SurrogateParams& s, const std::vector<int>& Ns) {
  NDependence r;
  for (int N : Ns) {
    FlowParams p = base;
    p.N = N;
    FlowSolution sol = solve_flow(p, surrogate_maps(p, s), zero_state(p));
    r.N.push_back(N);
    r.m0.push_back(sol.xi.m[0]);
    r.eps0.push_back(sol.energy.eps[0]);
    r.norm.push_back(flow_norm(p, sol.xi));
    r.iterations.push_back(sol.iterations);
  }
  return r;
}

// ---------------------------------------------------------------- toy mode

namespace {

std::uint64_t field_hash(const VecC& A) {
  std::uint64_t h = 1469598103934665603ull;
  const unsigned char* b = reinterpret_cast<const unsigned char*>(A.data());
  for (std::size_t i = 0; i < sizeof(cd) * std::size_t(A.size()); ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

// memoized evaluation keyed by polymer and field
PolymerFunction cached(const PolymerFunction& E) {
  auto store = std::make_shared<std::map<std::pair<Polymer, std::uint64_t>, Kernel>>();
  KernelFn base = E.fn;
  KernelFn fn = [store, base](const Polymer& X, const VecC& A) {
    auto key = std::make_pair(X, field_hash(A));
    auto it = store->find(key);
    if (it != store->end()) return it->second;
    Kernel K = base(X, A);
    (*store)[key] = K;
    return K;
  };
  return PolymerFunction(E.lat, E.support, fn, E.ufn, E.e, E.has_chi);
}

UniverseFn plain(const Lattice* lp) {
  return [lp](const Polymer& X) { return make_universe(*lp, X, false); };
}

PolymerFunction zero_function(const Lattice& lat, double e) {
  const Lattice* lp = &lat;
  KernelFn fn = [lp](const Polymer& X, const VecC&) {
    FieldUniverse U = make_universe(*lp, X, false);
    return Kernel(U.ngen(), U.species());
  };
  return PolymerFunction(&lat, {}, fn, plain(lp), e, false);
}

// sum_i c_i E_i on the union of the supports
PolymerFunction combine(const Lattice& lat, const std::vector<std::pair<double, PolymerFunction>>& terms, double e) {
  auto parts = std::make_shared<std::vector<std::pair<double, PolymerFunction>>>(terms);
  auto sets = std::make_shared<std::vector<std::set<Polymer>>>();
  std::set<Polymer> all;
  for (const auto& [c, E] : terms) {
    sets->emplace_back(E.support.begin(), E.support.end());
    all.insert(E.support.begin(), E.support.end());
  }
  const Lattice* lp = &lat;
  KernelFn fn = [lp, parts, sets](const Polymer& X, const VecC& A) {
    FieldUniverse U = make_universe(*lp, X, false);
    Kernel K(U.ngen(), U.species());
    for (std::size_t i = 0; i < parts->size(); ++i)
      if ((*sets)[i].count(X)) K += (*parts)[i].second.eval(X, A) * (*parts)[i].first;
    K.prune();
    return K;
  };
  return PolymerFunction(&lat, std::vector<Polymer>(all.begin(), all.end()), fn, plain(lp), e, false);
}

// single cube polymers carrying tabulated E00 values per sample field
PolymerFunction table_function(const Lattice& lat, const std::vector<VecC>& fields,
                               const std::vector<VecC>& pieces, double e) {
  auto tab = std::make_shared<std::map<std::uint64_t, VecC>>();
  for (std::size_t s = 0; s < fields.size(); ++s) (*tab)[field_hash(fields[s])] = pieces[s];
  std::vector<Polymer> support;
  for (int c = 0; c < lat.ncubes(); ++c) support.push_back({c});
  const Lattice* lp = &lat;
  KernelFn fn = [lp, tab](const Polymer& X, const VecC& A) {
    FieldUniverse U = make_universe(*lp, X, false);
    auto it = tab->find(field_hash(A));
    if (it == tab->end()) throw DomainError("E^det requested at a field outside the sample table");
    return Kernel::constant(U.ngen(), it->second[X[0]], U.species());
  };
  return PolymerFunction(&lat, support, fn, plain(lp), e, false);
}

double sampled_norm(const PolymerFunction& E, const std::vector<VecC>& fields, double ek, double eps, double kappa) {
  auto [h1, h2] = h_pair(ek, eps);
  double r = 0;
  for (const auto& X : E.support) {
    double wt = std::exp(kappa * tree_distance(*E.lat, X));
    FieldUniverse U = E.universe(X);
    for (const auto& A : fields) r = std::max(r, kernel_norm_h(E.eval(X, A), U, h1, h2) * wt);
  }
  return r;
}

}  // namespace

ToyFlowResult toy_flow(const ToyFlowParams& tp, const std::vector<double>& m_init) {
  auto t0 = std::chrono::steady_clock::now();
  const FlowParams& p = tp.fp;
  if (p.mlog != 0) throw ConfigError("toy mode runs with M = 1");
  int K = p.K();
  if (int(m_init.size()) != K + 1) throw ConfigError("toy flow needs K + 1 initial masses");
  double L = p.L;

  std::vector<std::unique_ptr<Lattice>> lat;
  for (int k = 0; k <= K; ++k) lat.push_back(std::make_unique<Lattice>(p.L, p.N, k, 1));

  // sample fields: level K from the Sobol sampler, lower levels by A -> L^{-1/2} A
  std::vector<std::vector<VecC>> fields(K + 1);
  NormParams np;
  np.ek = flow_e(p, K);
  np.eps = p.eps;
  np.samples = tp.samples;
  np.seed = tp.seed;
  fields[K] = sample_fields(*lat[K], np, K);
  for (int k = K - 1; k >= 0; --k)
    for (const auto& A : fields[k + 1]) fields[k].push_back(std::pow(L, -0.5) * A);

  ToyFlowResult res;
  res.nfields = int(fields[K].size());

  // E^det forcing per level
  std::vector<PolymerFunction> Edet(K);
  for (int k = 0; k < K; ++k) {
    double ek = flow_e(p, k);
    if (k == 0) {
      ToyParams t;
      t.c0 = t.cF = t.a = t.b = t.q = 0;
      t.cdet = tp.cdet0;
      t.e = ek;
      t.decay = 0;
      t.cap = 1;
      Edet[k] = cached(toy_family(*lat[k], t));
      continue;
    }
    FermionParams fp;
    fp.e = ek;
    fp.mbar = flow_mbar(p, k);
    fp.b = tp.b;
    VecC zero = VecC::Zero(lat[k]->nbonds(0));
    FermionKit kit0(*lat[k], zero, fp);
    std::vector<VecC> pieces;
    for (const auto& A : fields[k]) {
      if (A.norm() == 0) {
        pieces.push_back(VecC::Zero(lat[k]->ncubes()));
        continue;
      }
      FermionKit kitA(*lat[k], A, fp);
      EDet d = e_det(kitA, kit0, tp.det_tol);
      pieces.push_back(d.pieces);
      if (k == K - 1 && res.det_total == 0) res.det_total = std::abs(d.total);
    }
    Edet[k] = table_function(*lat[k], fields[k], pieces, ek);
  }

  auto sharp = [&](int k, double m, double epsE) {
    ToyParams t;
    t.c0 = tp.c00 + tp.rho * epsE;
    t.cF = t.cdet = t.b = 0;
    t.a = tp.a0 + m;
    t.q = tp.q0;
    t.amp = tp.sharp * std::pow(flow_e(p, k), 0.25 - 6 * p.eps);
    t.decay = 0;
    t.e = flow_e(p, k);
    t.cap = 1;
    return toy_family(*lat[k], t);
  };

  std::vector<double> m = m_init;
  m[K] = 0;
  std::vector<PolymerFunction> E;
  for (int k = 0; k <= K; ++k) E.push_back(zero_function(*lat[k], flow_e(p, k)));
  std::vector<double> epsE(K + 1, 0.0), mE(K + 1, 0.0), normE(K + 1, 0.0);
  std::vector<PolymerFunction> RE(K + 1);

  auto analyse = [&](int k) {
    if (E[k].support.empty()) {
      epsE[k] = mE[k] = normE[k] = 0;
      RE[k] = E[k];
      return;
    }
    ExtractionResult ex = extract(E[k]);
    epsE[k] = ex.eps;
    mE[k] = ex.m;
    RE[k] = cached(ex.RE);
    normE[k] = sampled_norm(E[k], fields[k], flow_e(p, k), p.eps, tp.kappa);
  };
  for (int k = 0; k <= K; ++k) analyse(k);

  FlowSolution& s = res.sol;
  s.status = "max_iter";
  double prev = -1;
  for (int it = 1; it <= p.max_iter; ++it) {
    std::vector<double> m2(K + 1, 0.0);
    for (int k = 0; k < K; ++k) m2[k] = m[k + 1] / L - mE[k];
    std::vector<PolymerFunction> E2;
    E2.push_back(zero_function(*lat[0], flow_e(p, 0)));
    for (int k = 1; k <= K; ++k) {
      int j = k - 1;
      std::vector<std::pair<double, PolymerFunction>> parts;
      if (!RE[j].support.empty()) parts.push_back({1.0, RE[j]});
      parts.push_back({1.0, Edet[j]});
      parts.push_back({1.0, sharp(j, m[j], epsE[j])});
      PolymerFunction inner = combine(*lat[j], parts, flow_e(p, j));
      E2.push_back(cached(reblock_scale(inner, *lat[k], 0.5)));
    }
    // distance in the B norm
    FlowIter h;
    h.it = it;
    for (int k = 0; k <= K; ++k) {
      h.dist = std::max(h.dist, wm(p, k) * std::abs(m2[k] - m[k]));
      if (k == 0) continue;
      PolymerFunction d = combine(*lat[k], {{1.0, E2[k]}, {-1.0, E[k]}}, flow_e(p, k));
      h.dist = std::max(h.dist, wE(p, k) * sampled_norm(d, fields[k], flow_e(p, k), p.eps, tp.kappa));
    }
    m = m2;
    E = E2;
    for (int k = 0; k <= K; ++k) analyse(k);
    FlowState x{m, normE};
    h.norm = flow_norm(p, x);
    h.ratio = prev > 0 ? h.dist / prev : 0;
    if (prev > 1e3 * p.tol) s.max_ratio = std::max(s.max_ratio, h.ratio);
    s.max_norm = std::max(s.max_norm, h.norm);
    s.history.push_back(h);
    s.iterations = it;
    if (h.norm >= 1) {
      for (int k = 0; k <= K && s.exit_level < 0; ++k)
        if (wm(p, k) * std::abs(m[k]) >= 1 || wE(p, k) * normE[k] >= 1) s.exit_level = k;
      s.status = "left_B1";
      break;
    }
    if (h.dist <= p.tol) {
      s.status = "converged";
      break;
    }
    if (it > 3 && h.ratio > 1 && h.dist > 1e3 * p.tol) {
      s.status = "diverged";
      break;
    }
    prev = h.dist;
  }
  s.xi = {m, normE};
  s.boundary = std::abs(m[K]) + normE[0];
  std::vector<double> eps0(K + 1, 0.0);
  s.energy = energy_from(p, epsE, eps0, m[0]);
  res.in_B1 = s.max_norm < 1;
  for (int k = 0; k <= K; ++k) {
    ToyLevel l;
    l.k = k;
    l.e = flow_e(p, k);
    l.m = m[k];
    l.eps = s.energy.eps[k];
    l.normE = normE[k];
    l.bnorm = std::max(wm(p, k) * std::abs(m[k]), wE(p, k) * normE[k]);
    res.levels.push_back(l);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace rgqed3
