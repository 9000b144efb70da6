#include "rgqed3/grassmann.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace rgqed3 {

Kernel::Kernel(int n, std::vector<int> sp) : ngen(n), species(std::move(sp)) {
  if (species.empty()) species.assign(n, 0);
  if (int(species.size()) != n) throw ConfigError("species size mismatch");
}

Kernel Kernel::constant(int n, cd v, std::vector<int> sp) {
  Kernel k(n, std::move(sp));
  k.add({}, v);
  return k;
}

Kernel Kernel::generator(int n, int g, cd v, std::vector<int> sp) {
  if (g < 0 || g >= n) throw DomainError("generator out of range");
  Kernel k(n, std::move(sp));
  k.add({g}, v);
  return k;
}

cd Kernel::coef(const Mono& m) const {
  auto it = c.find(m);
  return it == c.end() ? cd(0) : it->second;
}

void Kernel::add(const Mono& m, cd v) {
  if (v == cd(0)) return;
  c[m] += v;
}

int Kernel::max_degree() const {
  int d = 0;
  for (const auto& [m, v] : c)
    if (v != cd(0)) d = std::max(d, int(m.size()));
  return d;
}

bool Kernel::is_even() const {
  for (const auto& [m, v] : c)
    if (m.size() % 2 && v != cd(0)) return false;
  return true;
}

void Kernel::prune(double tol) {
  for (auto it = c.begin(); it != c.end();) {
    if (std::abs(it->second) <= tol) it = c.erase(it);
    else ++it;
  }
}

bool same_universe(const Kernel& a, const Kernel& b) {
  return a.ngen == b.ngen && a.species == b.species;
}

static void check_universe(const Kernel& a, const Kernel& b) {
  if (!same_universe(a, b)) throw DomainError("kernel universe mismatch");
}

Kernel Kernel::operator+(const Kernel& o) const {
  Kernel r = *this;
  r += o;
  return r;
}

Kernel Kernel::operator-(const Kernel& o) const { return *this + o * cd(-1.0); }

Kernel Kernel::operator*(cd s) const {
  Kernel r = *this;
  r *= s;
  return r;
}

Kernel& Kernel::operator+=(const Kernel& o) {
  check_universe(*this, o);
  for (const auto& [m, v] : o.c) c[m] += v;
  return *this;
}

Kernel& Kernel::operator*=(cd s) {
  for (auto& [m, v] : c) v *= s;
  return *this;
}

std::string Kernel::dump_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& [m, v] : c) {
    if (v == cd(0)) continue;
    j.push_back({{"tuple", m}, {"re", v.real()}, {"im", v.imag()}});
  }
  return j.dump();
}

int merge_sign(const Mono& a, const Mono& b, Mono* out) {
  // inversions: pairs (i in a, j in b) with i > j
  std::size_t i = 0, j = 0;
  long inv = 0;
  if (out) out->clear();
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i] < b[j])) {
      if (out) out->push_back(a[i]);
      ++i;
    } else if (i == a.size() || b[j] < a[i]) {
      inv += long(a.size() - i);
      if (out) out->push_back(b[j]);
      ++j;
    } else {
      return 0;
    }
  }
  return inv % 2 ? -1 : 1;
}

Kernel product(const Kernel& a, const Kernel& b, int cap) {
  check_universe(a, b);
  Kernel r(a.ngen, a.species);
  Mono m;
  for (const auto& [ma, va] : a.c) {
    if (va == cd(0)) continue;
    for (const auto& [mb, vb] : b.c) {
      if (vb == cd(0) || int(ma.size() + mb.size()) > cap) continue;
      int s = merge_sign(ma, mb, &m);
      if (s) r.c[m] += double(s) * va * vb;
    }
  }
  return r;
}

// sorts a sequence of generators by adjacent swaps, tracking the sign
int permutation_sign(std::vector<int>& seq) {
  int s = 1;
  for (std::size_t i = 0; i < seq.size(); ++i)
    for (std::size_t j = 0; j + 1 < seq.size() - i; ++j) {
      if (seq[j] == seq[j + 1]) return 0;
      if (seq[j] > seq[j + 1]) {
        std::swap(seq[j], seq[j + 1]);
        s = -s;
      }
    }
  for (std::size_t i = 0; i + 1 < seq.size(); ++i)
    if (seq[i] == seq[i + 1]) return 0;
  return s;
}

Kernel product_bruteforce(const Kernel& a, const Kernel& b) {
  check_universe(a, b);
  Kernel r(a.ngen, a.species);
  for (const auto& [ma, va] : a.c)
    for (const auto& [mb, vb] : b.c) {
      std::vector<int> seq = ma;
      seq.insert(seq.end(), mb.begin(), mb.end());
      int s = permutation_sign(seq);
      if (s) r.add(seq, double(s) * va * vb);
    }
  return r;
}

Kernel exp_even(const Kernel& a) {
  if (!a.is_even()) throw DomainError("exp of an odd element");
  cd c0 = a.coef({});
  Kernel n = a;
  n.c.erase(Mono{});
  Kernel sum = Kernel::constant(a.ngen, 1.0, a.species);
  Kernel term = sum;
  for (int j = 1; j <= a.ngen / 2 + 1; ++j) {
    term = product(term, n) * cd(1.0 / j);
    term.prune();
    if (term.c.empty()) break;
    sum += term;
  }
  return sum * std::exp(c0);
}

double kernel_norm(const Kernel& e, const std::vector<double>& h) {
  double s = 0;
  for (const auto& [m, v] : e.c) {
    double w = std::abs(v);
    for (int g : m) w *= h.at(e.species[g]);
    s += w;
  }
  return s;
}

double kernel_norm(const Kernel& e, double h) {
  int ns = e.species.empty() ? 1 : *std::max_element(e.species.begin(), e.species.end()) + 1;
  return kernel_norm(e, std::vector<double>(ns, h));
}

// sum over all increasing tuples of the universe, up to the max degree
double kernel_norm_bruteforce(const Kernel& e, const std::vector<double>& h) {
  double s = 0;
  int n = e.ngen;
  if (n > 20) throw DomainError("universe too large for enumeration");
  for (unsigned long mask = 0; mask < (1ul << n); ++mask) {
    Mono m;
    double w = 1;
    for (int g = 0; g < n; ++g)
      if (mask >> g & 1) {
        m.push_back(g);
        w *= h.at(e.species[g]);
      }
    s += w * std::abs(e.coef(m));
  }
  return s;
}

double norm_1inf(const MatC& H) {
  double r = 0;
  for (Eigen::Index t = 0; t < H.rows(); ++t) r = std::max(r, H.row(t).cwiseAbs().sum());
  return r;
}

Kernel substitute(const Kernel& e, const MatC& K, const std::vector<int>& tsp) {
  if (K.rows() != e.ngen) throw DomainError("substitution matrix has wrong row count");
  int nt = int(K.cols());
  if (int(tsp.size()) != nt) throw DomainError("target species size mismatch");
  std::vector<Kernel> lin(e.ngen);
  for (int g = 0; g < e.ngen; ++g) {
    lin[g] = Kernel(nt, tsp);
    for (int t = 0; t < nt; ++t) lin[g].add({t}, K(g, t));
  }
  Kernel r(nt, tsp);
  for (const auto& [m, v] : e.c) {
    if (v == cd(0)) continue;
    Kernel term = Kernel::constant(nt, v, tsp);
    for (int g : m) {
      term = product(term, lin[g]);
      if (term.c.empty()) break;
    }
    r += term;
  }
  return r;
}

Kernel substitute_bruteforce(const Kernel& e, const MatC& K, const std::vector<int>& tsp) {
  int nt = int(K.cols());
  Kernel r(nt, tsp);
  for (const auto& [m, v] : e.c) {
    // all assignments of targets to the generators in m
    int d = int(m.size());
    std::vector<int> pick(d, 0);
    while (true) {
      cd w = v;
      for (int i = 0; i < d; ++i) w *= K(m[i], pick[i]);
      std::vector<int> seq = pick;
      int s = permutation_sign(seq);
      if (s && w != cd(0)) r.add(seq, double(s) * w);
      int i = d - 1;
      while (i >= 0 && ++pick[i] == nt) pick[i--] = 0;
      if (i < 0) break;
    }
  }
  return r;
}

Kernel compose_dressed(const Kernel& e, const MatC& H1, const MatC& H2) {
  if (H1.cols() != H2.cols()) throw DomainError("dressing matrices act on different spaces");
  int nt = int(H1.cols());
  MatC K = MatC::Zero(e.ngen, nt);
  int i1 = 0, i2 = 0;
  for (int g = 0; g < e.ngen; ++g) {
    if (e.species[g] == 0) {
      if (i1 >= H1.rows()) throw DomainError("H1 has too few rows");
      K.row(g) = H1.row(i1++);
    } else {
      if (i2 >= H2.rows()) throw DomainError("H2 has too few rows");
      K.row(g) = H2.row(i2++);
    }
  }
  if (i1 != H1.rows() || i2 != H2.rows()) throw DomainError("dressing matrix size mismatch");
  return substitute(e, K, std::vector<int>(nt, 0));
}

Kernel shift_split(const Kernel& e) {
  int n = e.ngen;
  MatC K = MatC::Zero(n, 2 * n);
  std::vector<int> sp(2 * n);
  int ns = n ? *std::max_element(e.species.begin(), e.species.end()) + 1 : 1;
  for (int g = 0; g < n; ++g) {
    K(g, g) = 1.0;
    K(g, n + g) = 1.0;
    sp[g] = e.species[g];
    sp[n + g] = ns + e.species[g];
  }
  return substitute(e, K, sp);
}

Kernel integrate_block(const Kernel& e, const PairBlock& blk, const MatC& G) {
  if (G.rows() != blk.n || G.cols() != blk.n) throw DomainError("covariance size mismatch");
  Kernel r(e.ngen, e.species);
  for (const auto& [m, v] : e.c) {
    if (v == cd(0)) continue;
    Mono in, out;
    for (int g : m) (blk.contains(g) ? in : out).push_back(g);
    std::vector<int> s, t;
    for (int g : in) {
      int q = g - blk.off;
      if (q < blk.n) s.push_back(q);
      else t.push_back(2 * blk.n - 1 - q);
    }
    if (s.size() != t.size()) continue;
    std::sort(t.begin(), t.end());
    // move the (even) block part to the right of the rest
    int sg = merge_sign(out, in);
    cd val = 1.0;
    if (!s.empty()) {
      MatC sub(s.size(), t.size());
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < t.size(); ++j) sub(i, j) = G(s[i], t[j]);
      val = sub.determinant();
    }
    r.add(out, double(sg) * v * val);
  }
  return r;
}

cd gaussian_integral(const Kernel& e, const PairBlock& blk, const MatC& G) {
  for (const auto& [m, v] : e.c)
    for (int g : m)
      if (!blk.contains(g) && v != cd(0)) throw DomainError("kernel has generators outside the block");
  return integrate_block(e, blk, G).coef({});
}

Kernel partial_integral(const Kernel& e, const PairBlock& blk) {
  return integrate_block(e, blk, MatC::Identity(blk.n, blk.n));
}

Kernel quadratic_action(int ngen, const PairBlock& blk, const MatC& D, std::vector<int> sp) {
  Kernel a(ngen, std::move(sp));
  // -sum Psibar(i) D(i,j) Psi(j)
  for (int i = 0; i < blk.n; ++i)
    for (int j = 0; j < blk.n; ++j) {
      Kernel pb = Kernel::generator(ngen, blk.psibar(i), 1.0, a.species);
      Kernel p = Kernel::generator(ngen, blk.psi(j), -D(i, j), a.species);
      a += product(pb, p);
    }
  return a;
}

cd top_form_ratio(const Kernel& e, const PairBlock& blk, const MatC& D) {
  Kernel w = exp_even(quadratic_action(e.ngen, blk, D, e.species));
  Mono top(2 * blk.n);
  std::iota(top.begin(), top.end(), blk.off);
  Kernel num = product(e, w);
  cd z = w.coef(top);
  if (z == cd(0)) throw DomainError("degenerate quadratic form");
  return num.coef(top) / z;
}

cd wick_linear(const std::vector<LinearField>& seq, const MatC& G) {
  std::vector<int> ps, pb;
  for (int i = 0; i < int(seq.size()); ++i) (seq[i].bar ? pb : ps).push_back(i);
  if (ps.size() != pb.size()) return 0.0;
  // target order: Psi-type in order, then Psibar-type reversed
  std::vector<int> pos(seq.size());
  int r = 0;
  for (int i : ps) pos[i] = r++;
  for (int j = int(pb.size()) - 1; j >= 0; --j) pos[pb[j]] = r++;
  std::vector<int> perm(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) perm[i] = pos[i];
  int sg = permutation_sign(perm);
  if (ps.empty()) return double(sg);
  MatC m(ps.size(), pb.size());
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = 0; j < pb.size(); ++j)
      m(i, j) = seq[ps[i]].w.transpose() * G * seq[pb[j]].w;
  return double(sg) * m.determinant();
}

Kernel random_kernel(Rng& rng, int ngen, int maxdeg, double density, std::vector<int> sp) {
  Kernel k(ngen, std::move(sp));
  for (unsigned long mask = 0; mask < (1ul << ngen); ++mask) {
    if (__builtin_popcountl(mask) > maxdeg) continue;
    if (rng.uniform(0.0, 1.0) > density) continue;
    Mono m;
    for (int g = 0; g < ngen; ++g)
      if (mask >> g & 1) m.push_back(g);
    k.add(m, cd(rng.uniform(), rng.uniform()));
  }
  return k;
}

}  // namespace rgqed3
