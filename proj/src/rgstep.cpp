#include "rgqed3/rgstep.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace rgqed3 {

std::vector<double> b_sequence(double b, int L, int kmax) {
  std::vector<double> out;
  if (kmax < 1) return out;
  double bk = b;
  out.push_back(bk);
  for (int k = 1; k < kmax; ++k) {
    bk = b * bk / (bk + b / L);
    out.push_back(bk);
  }
  return out;
}

static double sites(int L, int m) { return std::pow(double(L), 3.0 * m); }

double log_norm_step(double b, int L, int N, int k) {
  return -4.0 * sites(L, N - k - 1) * std::log(b * L * L);
}

double log_norm_total(double b, int L, int N, int k) {
  return -4.0 * sites(L, N - k) * std::log(b_closed(b, L, k));
}

double ComposeResiduals::max() const {
  return std::max({one_step, crit_vs_dot, psi0_vs_psik, cross, w_block, s0_block});
}

ComposeResiduals compose_check(const FermionKit& kit, Rng& rng) {
  const Lattice& lat = kit.lat;
  ComposeResiduals r;
  double L3 = std::pow(double(lat.L), 3), eta3 = lat.weight(0);
  double bk = kit.bk, bL = kit.bL, bk1 = kit.bk1, c = bL / (bk + bL);
  int nk = kit.dim_unit(), nk1 = int(kit.Q.rows());

  MatC Qk1 = kit.Q * kit.Qk, Qk1_m = kit.Q_m * kit.Qk_m;
  MatC Qk1T = kit.QkT * kit.QT, Qk1T_m = kit.QkT_m * kit.QT_m;
  auto dot = [&](const VecC& Psi1, const VecC& psi) -> VecC {
    return kit.Qk * psi + c * (kit.QT_m * Psi1) - c * (kit.QT_m * (Qk1 * psi));
  };
  auto dotbar = [&](const VecC& Psi1, const VecC& psi) -> VecC {
    return kit.Qk_m * psi + c * (kit.QT * Psi1) - c * (kit.QT * (Qk1_m * psi));
  };

  for (int t = 0; t < 3; ++t) {
    VecC P1 = rng.cvec(nk1), P1b = rng.cvec(nk1);
    VecC ps = rng.cvec(kit.dim_fine()), psb = rng.cvec(kit.dim_fine());
    VecC Pc = dot(P1, ps), Pcb = dotbar(P1b, psb);
    VecC a = P1 - kit.Q * Pc, ab = P1b - kit.Q_m * Pcb;
    VecC d = Pc - kit.Qk * ps, db = Pcb - kit.Qk_m * psb;
    cd lhs = bL * L3 * ab.cwiseProduct(a).sum() + bk * db.cwiseProduct(d).sum();
    VecC e = P1 - Qk1 * ps, eb = P1b - Qk1_m * psb;
    cd rhs = (bk1 / lat.L) * L3 * eb.cwiseProduct(e).sum();
    r.one_step = std::max(r.one_step, std::abs(lhs - rhs) / std::abs(rhs));
  }

  MatC Gk = kit.Gamma_k();
  Eigen::PartialPivLU<MatC> lu0(kit.S0_inverse());
  MatC psi0 = (bk1 / lat.L) * lu0.solve(Qk1T_m);
  MatC psi0b = (bk1 / lat.L) * lu_solve_transpose(lu0, Qk1T);
  MatC crit = bL * Gk * kit.QT_m;
  MatC critb = bL * Gk.transpose() * kit.QT;
  MatC dotop = kit.Qk * psi0 + c * kit.QT_m - c * kit.QT_m * (Qk1 * psi0);
  r.crit_vs_dot = rel_err(crit, dotop);
  MatC H = kit.Hk();
  MatC Hb = bk * kit.solve_S_transpose(kit.QkT);
  r.psi0_vs_psik = rel_err(H * crit, psi0);

  // full quadratic form in (Psi_{k+1}, W)
  int nt = nk1 + nk;
  MatC Pk(nk, nt), Pkb(nk, nt), E1 = MatC::Zero(nk1, nt);
  Pk << crit, MatC::Identity(nk, nk);
  Pkb << critb, MatC::Identity(nk, nk);
  E1.leftCols(nk1) = MatC::Identity(nk1, nk1);
  MatC ps = H * Pk, psb = Hb * Pkb;
  MatC u = E1 - kit.Q * Pk, ub = E1 - kit.Q_m * Pkb;
  MatC v = Pk - kit.Qk * ps, vb = Pkb - kit.Qk_m * psb;
  MatC B = bL * L3 * ub.transpose() * u + bk * vb.transpose() * v + eta3 * psb.transpose() * (kit.Dm * ps);

  MatC W = kit.Dk() + bL * kit.P;
  double scale = B.norm();
  r.cross = (B.topRightCorner(nk1, nk).norm() + B.bottomLeftCorner(nk, nk1).norm()) / scale;
  r.w_block = rel_err(B.bottomRightCorner(nk, nk), W);
  MatC f = MatC::Identity(nk1, nk1) - Qk1 * psi0, fb = MatC::Identity(nk1, nk1) - Qk1_m * psi0b;
  MatC S0form = (bk1 / lat.L) * L3 * fb.transpose() * f + eta3 * psi0b.transpose() * (kit.Dm * psi0);
  r.s0_block = rel_err(B.topLeftCorner(nk1, nk1), S0form);
  return r;
}

cd logdet_lu(const MatC& M) {
  Eigen::PartialPivLU<MatC> lu(M);
  const MatC& LU = lu.matrixLU();
  cd s = 0;
  for (Eigen::Index i = 0; i < LU.rows(); ++i) s += std::log(LU(i, i));
  if (lu.permutationP().determinant() < 0) s += cd(0, M_PI);
  double im = std::remainder(s.imag(), 2 * M_PI);
  return {s.real(), im};
}

LogDet logdet_selfadjoint(const MatC& T, double R0, double tol) {
  if (T.rows() != T.cols()) throw DomainError("matrix not square");
  int n = int(T.rows());
  double tn = std::max(T.norm(), 1e-300);
  if ((T - T.adjoint()).norm() > 1e-12 * tn) throw DomainError("matrix not self-adjoint");
  if (!(R0 > 0)) throw ConfigError("R0 must be positive");
  LogDet out;
  Eigen::SelfAdjointEigenSolver<MatC> es(T, Eigen::EigenvaluesOnly);
  out.min_abs_eig = es.eigenvalues().cwiseAbs().minCoeff();
  if (out.min_abs_eig < 1e-8 * tn)
    throw DomainError("matrix is numerically singular: min |eig| = " + std::to_string(out.min_abs_eig));

  MatC Id = MatC::Identity(n, n);
  int evals = 0;
  // Tr (T + iy)^{-1} on [0, R0]
  auto low = [&](double y) {
    ++evals;
    return MatC((T + I1 * y * Id).partialPivLu().inverse()).trace();
  };
  // y = R0/t: dy/y = dt/t, Tr T (T + iy)^{-1} / t
  auto high = [&](double t) {
    ++evals;
    if (t <= 0) return T.trace() / (I1 * R0);
    double y = R0 / t;
    return MatC((T + I1 * y * Id).partialPivLu().solve(T)).trace() / t;
  };
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  double err = 0;
  cd a = GK::integrate(high, 0.0, 1.0, 15, tol, &err);
  cd b = GK::integrate(low, 0.0, R0, 15, tol, &err);
  out.value = a - I1 * b + double(n) * (std::log(R0) + I1 * (M_PI / 2));
  out.evaluations = evals;
  return out;
}

namespace {
template <int P>
VecC gl_panels(const std::function<VecC(double)>& f, double a, double b, int panels) {
  using G = boost::math::quadrature::gauss<double, P>;
  const auto& x = G::abscissa();
  const auto& w = G::weights();
  VecC sum;
  double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    double lo = a + p * h, mid = lo + h / 2, half = h / 2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::vector<double> pts{mid + half * x[i]};
      if (x[i] != 0) pts.push_back(mid - half * x[i]);
      for (double t : pts) {
        VecC v = half * w[i] * f(t);
        if (sum.size() == 0) sum = v;
        else sum += v;
      }
    }
  }
  return sum;
}
}  // namespace

HalfLineResult integrate_half_line(const std::function<VecC(double)>& f, double Y0, double tol,
                                   int max_panels) {
  auto tail = [&](double t) -> VecC { return f(Y0 / t) * (Y0 / (t * t)); };
  auto est = [&](int p) -> VecC {
    return gl_panels<20>(f, 0.0, Y0, p) + gl_panels<20>(tail, 0.0, 1.0, std::max(1, p / 2));
  };
  HalfLineResult r;
  int p = 4;
  VecC prev = est(p);
  while (true) {
    VecC cur = est(2 * p);
    r.change = (cur - prev).norm() / std::max(1.0, cur.norm());
    r.value = cur;
    r.panels = 2 * p;
    if (r.change <= tol) return r;
    if (2 * p >= max_panels)
      throw DomainError("y quadrature did not converge, change " + std::to_string(r.change));
    prev = cur;
    p *= 2;
  }
}

VecC deltaz_integrand(const FermionKit& kit, double y) {
  const Lattice& lat = kit.lat;
  const auto& G = gamma_rep();
  int n = lat.nsites(kit.k), dim = 4 * n;
  double bk = kit.bk, c = kit.bL;
  // f(i g3 y) through the eigenprojectors of ghat3
  auto fn = [&](auto f) -> Mat4 {
    double s = y / std::sqrt(2.0);
    return f(I1 * s) * G.proj_plus + f(-I1 * s) * G.proj_minus;
  };
  Mat4 f1 = fn([&](cd z) { return 1.0 / (bk + z); });
  Mat4 f2 = fn([&](cd z) { return 1.0 / (bk + c + z); });
  // B g3 B = g3 f1^2 (I - P) + g3 f2^2 P since everything commutes
  MatC I = MatC::Identity(dim, dim);
  MatC M = spin_diag(n, G.g[3] * f1 * f1) * (I - kit.P) + spin_diag(n, G.g[3] * f2 * f2) * kit.P;
  // G_y = G (I + C G)^{-1}, so Tr[G_y M] = Tr[(I + C G)^{-1} M G]
  Mat4 am = kit.alpha(y) - bk * Mat4::Identity();
  MatC C = spin_diag(n, am) + spin_diag(n, kit.beta(y)) * kit.P;
  MatC X = I + C * kit.G();
  MatC Z = X.partialPivLu().solve(M * kit.G());
  int nc = lat.ncubes();
  VecC out = VecC::Zero(nc);
  for (int s = 0; s < n; ++s) {
    int cube = lat.cube_of(lat.coord(kit.k, s));
    for (int a = 0; a < 4; ++a) out[cube] += Z(4 * s + a, 4 * s + a);
  }
  return (-I1 * bk * bk) * out;
}

double deltaz_volume_log(const FermionKit& kit) {
  double L3 = std::pow(double(kit.lat.L), 3);
  double vol = kit.lat.nsites(kit.k);
  return 4 * vol * ((1 - 1 / L3) * std::log(kit.bk) + std::log(kit.bk + kit.bL) / L3);
}

static double y_cut(const FermionKit& kit) { return 10.0 * std::max(kit.bk, 1.0); }

DeltaZ delta_z(const FermionKit& kit, double tol) {
  if (kit.k >= kit.lat.N) throw ConfigError("delta Z needs k < N");
  DeltaZ out;
  auto f = [&](double y) -> VecC {
    VecC v(1);
    v[0] = deltaz_integrand(kit, y).sum();
    return v;
  };
  HalfLineResult h = integrate_half_line(f, y_cut(kit), tol);
  out.panels = h.panels;
  out.log_formula = deltaz_volume_log(kit) + h.value[0];
  out.log_direct = logdet_lu(kit.Dk() + kit.bL * kit.P);
  out.rel = std::abs(std::exp(out.log_formula - out.log_direct) - 1.0);
  return out;
}

double volume_factor_residual(const FermionKit& kit) {
  MatC I = MatC::Identity(kit.P.rows(), kit.P.cols());
  MatC M = kit.bk * (I - kit.P) + (kit.bk + kit.bL) * kit.P;
  cd ld = logdet_lu(M);
  return std::abs(std::exp(ld - deltaz_volume_log(kit)) - 1.0);
}

EDet e_det(const FermionKit& kitA, const FermionKit& kit0, double tol) {
  auto f = [&](double y) -> VecC { return deltaz_integrand(kitA, y) - deltaz_integrand(kit0, y); };
  HalfLineResult h = integrate_half_line(f, y_cut(kitA), tol);
  return {h.value, h.value.sum()};
}

Kernel berezin_block(const Kernel& e, const PairBlock& blk) {
  Kernel r(e.ngen, e.species);
  for (const auto& [m, v] : e.c) {
    Mono in, out;
    for (int g : m) (blk.contains(g) ? in : out).push_back(g);
    if (int(in.size()) != 2 * blk.n) continue;
    r.add(out, double(merge_sign(out, in)) * v);
  }
  return r;
}

TinyStep::TinyStep(const Lattice& lat_, const VecC& A, FermionParams p_) : lat(lat_), p(p_) {
  if (lat.k != 0 || lat.N != 1) throw ConfigError("tiny step runs on N = 1, k = 0");
  bool ap = p.antiperiodic;
  n0 = 4 * lat.nsites(0);
  n1 = 4 * lat.nsites(1);
  double bL = p.b / lat.L;
  cw = bL * std::pow(double(lat.L), 3);
  D0 = dirac_operator(lat, A, p.e, 1, ap);
  D0.diagonal().array() += p.mbar;
  Q = spin_lift(q_step(lat, A, p.e, 0, +1, ap));
  Q_m = spin_lift(q_step(lat, A, p.e, 0, -1, ap));
  QT = spin_lift(qt_step(lat, A, p.e, 0, +1, ap));
  QT_m = spin_lift(qt_step(lat, A, p.e, 0, -1, ap));
  P = QT_m * Q;
  Gamma0 = (D0 + bL * P).inverse();
  H = bL * Gamma0 * QT_m;
  Hbar = bL * Gamma0.transpose() * QT;
  D1 = bL * (MatC::Identity(n1, n1) - bL * Q * Gamma0 * QT_m);
}

Kernel TinyStep::closed_form(const Kernel& F0) const {
  if (F0.ngen != 2 * n0) throw DomainError("F0 must live on the T^0 universe");
  PairBlock b1 = blk1(), bw{2 * n1, n0}, b0 = blk0();
  int ng = 2 * n1 + 2 * n0;
  MatC K = MatC::Zero(2 * n0, ng);
  for (int i = 0; i < n0; ++i) {
    for (int a = 0; a < n1; ++a) {
      K(b0.psi(i), b1.psi(a)) = H(i, a);
      K(b0.psibar(i), b1.psibar(a)) = Hbar(i, a);
    }
    K(b0.psi(i), bw.psi(i)) = 1.0;
    K(b0.psibar(i), bw.psibar(i)) = 1.0;
  }
  Kernel shifted = substitute(F0, K, std::vector<int>(ng, 0));
  Kernel fl = integrate_block(shifted, bw, Gamma0);
  // back to the Psi_1 universe
  Kernel f1(2 * n1);
  for (const auto& [m, v] : fl.c) {
    for (int g : m)
      if (g >= 2 * n1) throw DomainError("fluctuation integral left W generators");
    f1.add(m, v);
  }
  double L3 = std::pow(double(lat.L), 3);
  Kernel gauss = exp_even(quadratic_action(2 * n1, b1, L3 * D1));
  return product(gauss, f1);
}

Kernel TinyStep::brute_force(const Kernel& F0) const {
  if (F0.ngen != 2 * n0) throw DomainError("F0 must live on the T^0 universe");
  PairBlock b1 = blk1(), b0 = blk0();
  struct Item {
    int g;  // -1 for a field
    LinearField f;
  };
  // source terms a_al = cw Psibar_1(al) (Q Psi_0)(al), abar_al = cw (Q(-A) Psibar_0)(al) Psi_1(al)
  std::vector<std::vector<Item>> src;
  for (int a = 0; a < n1; ++a) {
    src.push_back({{b1.psibar(a), {}}, {-1, {false, Q.row(a).transpose()}}});
    src.push_back({{-1, {true, Q_m.row(a).transpose()}}, {b1.psi(a), {}}});
  }
  auto unit = [&](int g) -> LinearField {
    VecC w = VecC::Zero(n0);
    if (g < n0) {
      w[g] = 1.0;
      return {false, w};
    }
    w[2 * n0 - 1 - g] = 1.0;
    return {true, w};
  };
  Kernel R(2 * n1);
  int ns = int(src.size());
  for (unsigned mask = 0; mask < (1u << ns); ++mask) {
    std::vector<Item> seq;
    for (int t = 0; t < ns; ++t)
      if (mask >> t & 1) seq.insert(seq.end(), src[t].begin(), src[t].end());
    double pre = std::pow(cw, __builtin_popcount(mask));
    for (const auto& [m, v] : F0.c) {
      if (v == cd(0)) continue;
      std::vector<Item> all = seq;
      for (int g : m) all.push_back({-1, unit(g)});
      // pull the Psi_1 generators to the front
      int sign = 1, nf = 0;
      std::vector<int> gs;
      std::vector<LinearField> fs;
      for (const auto& it : all) {
        if (it.g >= 0) {
          if (nf % 2) sign = -sign;
          gs.push_back(it.g);
        } else {
          ++nf;
          fs.push_back(it.f);
        }
      }
      int s2 = permutation_sign(gs);
      if (!s2) continue;
      cd w = wick_linear(fs, Gamma0);
      if (w == cd(0)) continue;
      R.add(gs, double(sign * s2) * pre * v * w);
    }
  }
  Kernel gauss = exp_even(quadratic_action(2 * n1, b1, cw * MatC::Identity(n1, n1)));
  return product(gauss, R);
}

double TinyStep::normalization_residual(const Kernel& F0) const {
  Kernel R = brute_force(F0);
  cd top = berezin_block(R, blk1()).coef({});
  double bL = p.b / lat.L;
  cd lhs_log = -double(n1) * std::log(cw) + logdet_lu(D0 + bL * P) + std::log(top);
  cd avg = gaussian_integral(F0, blk0(), D0.inverse());
  cd rhs_log = logdet_lu(D0) + std::log(avg);
  return std::abs(std::exp(lhs_log - rhs_log) - 1.0);
}

Kernel mass_insertion(const PairBlock& b0, int ngen) {
  Kernel k(ngen);
  for (int i = 0; i < b0.n; ++i)
    k += product(Kernel::generator(ngen, b0.psibar(i)), Kernel::generator(ngen, b0.psi(i)));
  return k;
}

Kernel quartic_two_sites(const PairBlock& b0, int ngen, int x, int y, int a, int c) {
  int i = 4 * x + a, j = 4 * y + c;
  Kernel k = Kernel::generator(ngen, b0.psibar(i));
  k = product(k, Kernel::generator(ngen, b0.psi(i)));
  k = product(k, Kernel::generator(ngen, b0.psibar(j)));
  return product(k, Kernel::generator(ngen, b0.psi(j)));
}

double delta_g_normalization_residual(int n1, double cw, Rng& rng) {
  PairBlock b1{0, n1}, bx{2 * n1, n1};
  int ng = 4 * n1;
  MatC R = rng.cmat(n1, n1), Rb = rng.cmat(n1, n1);
  Kernel ex(ng);
  for (int a = 0; a < n1; ++a) {
    Kernel u = Kernel::generator(ng, b1.psi(a)), ub = Kernel::generator(ng, b1.psibar(a));
    for (int j = 0; j < n1; ++j) {
      u += Kernel::generator(ng, bx.psi(j), -R(a, j));
      ub += Kernel::generator(ng, bx.psibar(j), -Rb(a, j));
    }
    ex += product(ub, u) * cd(-cw);
  }
  Kernel top = berezin_block(exp_even(ex), b1);
  double ref = std::pow(cw, n1);
  Kernel diff = top - Kernel::constant(ng, ref);
  return kernel_norm(diff, 1.0) / ref;
}

}  // namespace rgqed3
