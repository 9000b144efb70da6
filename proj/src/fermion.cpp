#include "rgqed3/fermion.hpp"

#include <cmath>
#include <vector>

namespace rgqed3 {

namespace {

Mat4 build_gamma(int j) {
  // Euclidean chiral rep, G_j = [[0,-i s_j],[i s_j,0]], G_4 = [[0,1],[1,0]]
  Eigen::Matrix2cd s[3];
  s[0] << 0, 1, 1, 0;
  s[1] << 0, cd(0, -1), cd(0, 1), 0;
  s[2] << 1, 0, 0, -1;
  Mat4 g = Mat4::Zero();
  if (j < 3) {
    g.block<2, 2>(0, 2) = -I1 * s[j];
    g.block<2, 2>(2, 0) = I1 * s[j];
  } else {
    g.block<2, 2>(0, 2) = Eigen::Matrix2cd::Identity();
    g.block<2, 2>(2, 0) = Eigen::Matrix2cd::Identity();
  }
  return g;
}

GammaRep make_rep() {
  GammaRep r;
  Mat4 G[4];
  for (int j = 0; j < 4; ++j) G[j] = build_gamma(j);
  const double s = 1.0 / std::sqrt(2.0);
  for (int j = 0; j < 4; ++j) r.g[j] = s * G[j];
  r.C = G[1] * G[3];
  r.ghat3 = G[3];
  r.proj_plus = 0.5 * (Mat4::Identity() + G[3]);
  r.proj_minus = 0.5 * (Mat4::Identity() - G[3]);
  return r;
}

// sign for antiperiodic wrap when moving from fine coordinate a by d
int wrap_sign(const Lattice& lat, const Coord& a, const Coord& d) {
  int s = 1;
  for (int mu = 0; mu < 3; ++mu) {
    int t = a[mu] + d[mu];
    int w = (t >= 0) ? t / lat.n : -((-t + lat.n - 1) / lat.n);
    if (w % 2 != 0) s = -s;
  }
  return s;
}

double tau_value(const SparseRow& row, const VecC& A, cd& out) {
  out = 0;
  for (auto [b, v] : row) out += v * A[b];
  return 0;
}

}  // namespace

const GammaRep& gamma_rep() {
  static const GammaRep r = make_rep();
  return r;
}

double gamma_algebra_residual() {
  const auto& r = gamma_rep();
  double res = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      Mat4 ac = r.g[a] * r.g[b] + r.g[b] * r.g[a];
      Mat4 ex = (a == b ? 1.0 : 0.0) * Mat4::Identity();
      res = std::max(res, (ac - ex).norm());
    }
  for (int a = 0; a < 4; ++a) res = std::max(res, (r.g[a].adjoint() - r.g[a]).norm());
  Mat4 Ci = r.C.inverse();
  res = std::max(res, (r.C.transpose() - Ci).norm());
  res = std::max(res, (Ci + r.C).norm());
  for (int a = 0; a < 3; ++a) res = std::max(res, (-r.g[a].transpose() - Ci * r.g[a] * r.C).norm());
  res = std::max(res, (r.ghat3 * r.ghat3 - Mat4::Identity()).norm());
  return res;
}

double b_closed(double b, int L, int k) {
  return b * (1.0 - 1.0 / L) / (1.0 - std::pow(double(L), -k));
}

MatC spin_kron(const MatC& a, const Mat4& s) {
  MatC r = MatC::Zero(4 * a.rows(), 4 * a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      cd v = a(i, j);
      if (v == cd(0)) continue;
      r.block<4, 4>(4 * i, 4 * j) = v * s;
    }
  return r;
}

MatC spin_diag(int nsites, const Mat4& s) {
  MatC r = MatC::Zero(4 * nsites, 4 * nsites);
  for (int i = 0; i < nsites; ++i) r.block<4, 4>(4 * i, 4 * i) = s;
  return r;
}

MatC forward_derivative(const Lattice& lat, const VecC& A, double e, int mu, bool ap) {
  int ns = lat.nsites(0);
  double eta = lat.eta;
  MatC D = MatC::Zero(ns, ns);
  for (int x = 0; x < ns; ++x) {
    Coord cx = lat.coord(0, x);
    Coord d{0, 0, 0};
    d[mu] = 1;
    int xp = lat.shift(0, x, mu, 1);
    double sg = ap ? wrap_sign(lat, cx, d) : 1.0;
    D(x, xp) += sg * std::exp(I1 * e * eta * A[lat.bond(0, x, mu)]) / eta;
    D(x, x) -= 1.0 / eta;
  }
  return D;
}

MatC dirac_operator(const Lattice& lat, const VecC& A, double e, int sign, bool ap) {
  const auto& G = gamma_rep();
  int ns = lat.nsites(0);
  double eta = lat.eta;
  MatC D = MatC::Zero(4 * ns, 4 * ns);
  Mat4 Id = Mat4::Identity();
  Mat4 pm[3], pp[3];
  for (int mu = 0; mu < 3; ++mu) {
    pm[mu] = 0.5 * (Id - G.g[mu]);
    pp[mu] = 0.5 * (Id + G.g[mu]);
  }
#pragma omp parallel for schedule(static)
  for (int x = 0; x < ns; ++x) {
    Coord cx = lat.coord(0, x);
    for (int mu = 0; mu < 3; ++mu) {
      Coord dp{0, 0, 0}, dm{0, 0, 0};
      dp[mu] = 1;
      dm[mu] = -1;
      int xp = lat.shift(0, x, mu, 1), xm = lat.shift(0, x, mu, -1);
      double sp = ap ? wrap_sign(lat, cx, dp) : 1.0;
      double sm = ap ? wrap_sign(lat, cx, dm) : 1.0;
      cd up = sp * std::exp(I1 * e * eta * double(sign) * A[lat.bond(0, x, mu)]);
      cd um = sm * std::exp(-I1 * e * eta * double(sign) * A[lat.bond(0, xm, mu)]);
      D.block<4, 4>(4 * x, 4 * xp) += -(up / eta) * pm[mu];
      D.block<4, 4>(4 * x, 4 * xm) += -(um / eta) * pp[mu];
      D.block<4, 4>(4 * x, 4 * x) += (1.0 / eta) * Id;
    }
  }
  return D;
}

MatC q_step(const Lattice& lat, const VecC& A, double e, int j, int sign, bool ap) {
  int nc = lat.nsites(j + 1), nf = lat.nsites(j);
  double L3 = std::pow(double(lat.L), 3);
  MatC Q = MatC::Zero(nc, nf);
  for (int y = 0; y < nc; ++y) {
    Coord cy = lat.coord(j + 1, y);
    int s = lat.stride(j);
    for (auto [x, off] : lat.block(j, y)) {
      Coord d{off[0] * s, off[1] * s, off[2] * s};
      cd t;
      tau_value(lat.tau_row(0, cy, d), A, t);
      double sg = ap ? wrap_sign(lat, cy, d) : 1.0;
      Q(y, x) = sg * std::exp(I1 * e * lat.eta * double(sign) * t) / L3;
    }
  }
  return Q;
}

MatC qt_step(const Lattice& lat, const VecC& A, double e, int j, int sign, bool ap) {
  double L3 = std::pow(double(lat.L), 3);
  return L3 * q_step(lat, A, e, j, sign, ap).transpose();
}

MatC q_chain(const Lattice& lat, const VecC& A, double e, int j1, int sign, bool ap) {
  int nc = lat.nsites(j1), nf = lat.nsites(0);
  double w = std::pow(double(lat.L), -3.0 * j1);
  MatC Q = MatC::Zero(nc, nf);
  for (int x = 0; x < nf; ++x) {
    SparseRow row = lat.tau_chain(0, 0, x, j1);
    cd t;
    tau_value(row, A, t);
    // locate the chain end
    int cur = x;
    double sg = 1.0;
    for (int j = 0; j < j1; ++j) {
      auto [c, off] = lat.block_of(j, cur);
      if (ap) {
        int s = lat.stride(j);
        sg *= wrap_sign(lat, lat.coord(j + 1, c), Coord{off[0] * s, off[1] * s, off[2] * s});
      }
      cur = c;
    }
    Q(cur, x) = sg * w * std::exp(I1 * e * lat.eta * double(sign) * t);
  }
  return Q;
}

MatC qt_chain(const Lattice& lat, const VecC& A, double e, int j1, int sign, bool ap) {
  double w = std::pow(double(lat.L), 3.0 * j1);
  return w * q_chain(lat, A, e, j1, sign, ap).transpose();
}

MatC q_composed(const Lattice& lat, const VecC& A, double e, int j1, int sign, bool ap) {
  MatC Q = MatC::Identity(lat.nsites(0), lat.nsites(0));
  for (int j = 0; j < j1; ++j) Q = q_step(lat, A, e, j, sign, ap) * Q;
  return Q;
}

FermionKit::FermionKit(const Lattice& lat_, const VecC& A_, FermionParams p_, bool with_propagator)
    : lat(lat_), A(A_), p(p_), k(lat_.k) {
  if (k < 1) throw ConfigError("fermion kit needs k >= 1 (b_0 is infinite)");
  bk = b_closed(p.b, lat.L, k);
  bk1 = b_closed(p.b, lat.L, k + 1);
  bL = p.b / lat.L;
  bool ap = p.antiperiodic;
  Qk = spin_lift(q_chain(lat, A, p.e, k, +1, ap));
  Qk_m = spin_lift(q_chain(lat, A, p.e, k, -1, ap));
  QkT = spin_lift(qt_chain(lat, A, p.e, k, +1, ap));
  QkT_m = spin_lift(qt_chain(lat, A, p.e, k, -1, ap));
  if (k < lat.N) {
    Q = spin_lift(q_step(lat, A, p.e, k, +1, ap));
    Q_m = spin_lift(q_step(lat, A, p.e, k, -1, ap));
    QT = spin_lift(qt_step(lat, A, p.e, k, +1, ap));
    QT_m = spin_lift(qt_step(lat, A, p.e, k, -1, ap));
    P = QT_m * Q;
  }
  Dm = dirac_operator(lat, A, p.e, 1, ap);
  Dm.diagonal().array() += p.mbar;
  if (with_propagator) {
    luS_.compute(Sk_inverse());
    G_ = Qk * luS_.solve(QkT_m);
  }
}

MatC FermionKit::Pk1() const { return QkT_m * QT_m * Q * Qk; }

MatC FermionKit::Sk_inverse() const { return Dm + bk * Pk(); }
MatC FermionKit::Sk() const { return luS_.inverse(); }
MatC FermionKit::solve_S(const MatC& rhs) const { return luS_.solve(rhs); }
MatC FermionKit::solve_S_transpose(const MatC& rhs) const { return lu_solve_transpose(luS_, rhs); }

MatC FermionKit::Dk() const {
  MatC D = -bk * bk * G_;
  D.diagonal().array() += bk;
  return D;
}

MatC FermionKit::Gamma_k() const { return (Dk() + bL * P).inverse(); }

MatC FermionKit::B_k() const {
  MatC I = MatC::Identity(P.rows(), P.cols());
  return (1.0 / bk) * (I - P) + (1.0 / (bk + bL)) * P;
}

MatC FermionKit::S0_inverse() const { return Dm + (bk1 / lat.L) * Pk1(); }
MatC FermionKit::S0() const { return S0_inverse().inverse(); }
MatC FermionKit::G0() const { return Qk * S0_inverse().partialPivLu().solve(QkT_m); }

MatC FermionKit::gamma_k_rhs() const {
  MatC B = B_k();
  return B + bk * bk * B * G0() * B;
}

MatC FermionKit::Hk() const { return bk * luS_.solve(QkT_m); }

MatC FermionKit::Tk() const { return (1.0 / bk) * Qk * Sk_inverse(); }

namespace {
// f(i g3 y) for a scalar function f, through the eigenprojectors of ghat3
template <class F>
Mat4 spin_fn(F f, double y) {
  const auto& G = gamma_rep();
  double s = 1.0 / std::sqrt(2.0);
  return f(I1 * y * s) * G.proj_plus + f(-I1 * y * s) * G.proj_minus;
}
}  // namespace

Mat4 FermionKit::alpha(double y) const {
  double b = bk;
  return spin_fn([b](cd z) { return b * z / (b + z); }, y);
}

Mat4 FermionKit::beta(double y) const {
  double b = bk, c = bL;
  return spin_fn([b, c](cd z) { return b * b * c / ((b + c + z) * (b + z)); }, y);
}

MatC FermionKit::B_y(double y) const {
  double b = bk, c = bL;
  Mat4 f1 = spin_fn([b](cd z) { return 1.0 / (b + z); }, y);
  Mat4 f2 = spin_fn([b, c](cd z) { return 1.0 / (b + c + z); }, y);
  int n = lat.nsites(k);
  MatC I = MatC::Identity(P.rows(), P.cols());
  return spin_diag(n, f1) * (I - P) + spin_diag(n, f2) * P;
}

MatC FermionKit::Gamma_y_direct(double y) const {
  const auto& G = gamma_rep();
  MatC M = Dk() + bL * P + spin_diag(lat.nsites(k), I1 * y * G.g[3]);
  return M.inverse();
}

MatC FermionKit::S_y_inverse(double y) const {
  int nf = lat.nsites(0);
  return Dm + spin_diag(nf, alpha(y)) * Pk() + spin_diag(nf, beta(y)) * Pk1();
}

MatC FermionKit::G_y(double y) const {
  // S_y^{-1} = S_k^{-1} + Q_k^T(-A) C_y Q_k, C_y = (alpha - b_k) + beta P
  int n = lat.nsites(k);
  Mat4 am = alpha(y) - bk * Mat4::Identity();
  MatC C = spin_diag(n, am) + spin_diag(n, beta(y)) * P;
  MatC I = MatC::Identity(G_.rows(), G_.cols());
  MatC X = I + C * G_;
  return G_ * X.partialPivLu().inverse();
}

MatC FermionKit::G_y_direct(double y) const {
  return Qk * S_y_inverse(y).partialPivLu().solve(QkT_m);
}

MatC FermionKit::Gamma_y_rep(double y, bool direct) const {
  MatC B = B_y(y);
  MatC Gy = direct ? G_y_direct(y) : G_y(y);
  return B + bk * bk * B * Gy * B;
}

MatC resolvent_V(const Lattice& lat, const VecC& A, const VecC& Z, FermionParams p) {
  const auto& G = gamma_rep();
  int ns = lat.nsites(0);
  double eta = lat.eta, e = p.e;
  MatC V = MatC::Zero(4 * ns, 4 * ns);
  Mat4 Id = Mat4::Identity();
  for (int x = 0; x < ns; ++x)
    for (int mu = 0; mu < 3; ++mu) {
      int xp = lat.shift(0, x, mu, 1), xm = lat.shift(0, x, mu, -1);
      int bp = lat.bond(0, x, mu), bm = lat.bond(0, xm, mu);
      cd fp = std::exp(I1 * e * eta * A[bp]) * (std::exp(I1 * e * eta * Z[bp]) - 1.0) / eta;
      cd fm = std::exp(-I1 * e * eta * A[bm]) * (std::exp(-I1 * e * eta * Z[bm]) - 1.0) / eta;
      V.block<4, 4>(4 * x, 4 * xp) -= fp * 0.5 * (Id - G.g[mu]);
      V.block<4, 4>(4 * x, 4 * xm) -= fm * 0.5 * (Id + G.g[mu]);
    }
  int k = lat.k;
  VecC AZ = A + Z;
  MatC P1 = spin_lift(qt_chain(lat, AZ, e, k, -1) * q_chain(lat, AZ, e, k, +1));
  MatC P0 = spin_lift(qt_chain(lat, A, e, k, -1) * q_chain(lat, A, e, k, +1));
  V += b_closed(p.b, lat.L, k) * (P1 - P0);
  return V;
}

namespace {

Mat4 pick_spin(const std::array<int, 3>& perm, const std::array<int, 3>& sign) {
  const auto& G = gamma_rep();
  // target: S g_mu S^{-1} = s g_nu where r e_mu = s e_nu
  std::array<int, 3> nu{}, sg{};
  for (int v = 0; v < 3; ++v) {
    nu[perm[v]] = v;
    sg[perm[v]] = sign[v];
  }
  std::vector<Mat4> cands;
  Mat4 Id = Mat4::Identity();
  double r2 = std::sqrt(2.0);
  Mat4 h[4];
  for (int a = 0; a < 4; ++a) h[a] = r2 * G.g[a];
  for (int m = 0; m < 16; ++m) {
    Mat4 X = Id;
    for (int a = 0; a < 4; ++a)
      if (m & (1 << a)) X = X * h[a];
    cands.push_back(X);
  }
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b)
      for (double s : {1.0, -1.0}) cands.push_back((Id + s * h[a] * h[b]) / r2);
  for (const auto& S : cands) {
    Mat4 Si = S.inverse();
    double res = 0;
    for (int mu = 0; mu < 3; ++mu) res += (S * G.g[mu] * Si - double(sg[mu]) * G.g[nu[mu]]).norm();
    if (res < 1e-12) return S;
  }
  throw DomainError("no spin matrix for lattice symmetry");
}

}  // namespace

LatticeSymmetry rotation_e2() {
  LatticeSymmetry r{{1, 0, 2}, {-1, 1, 1}, Mat4::Identity()};
  r.S = pick_spin(r.perm, r.sign);
  return r;
}

LatticeSymmetry reflection_e0() {
  LatticeSymmetry r{{0, 1, 2}, {-1, 1, 1}, Mat4::Identity()};
  r.S = pick_spin(r.perm, r.sign);
  return r;
}

namespace {
Coord apply_r(const LatticeSymmetry& r, const Coord& x) {
  Coord y{};
  for (int v = 0; v < 3; ++v) y[v] = r.sign[v] * x[r.perm[v]];
  return y;
}
}  // namespace

VecC transform_gauge(const Lattice& lat, const VecC& A, const LatticeSymmetry& r) {
  // A_r(r b) = A(b)
  VecC out = VecC::Zero(A.size());
  int ns = lat.nsites(0);
  for (int x = 0; x < ns; ++x) {
    Coord cx = lat.coord(0, x);
    Coord rx = apply_r(r, cx);
    for (int mu = 0; mu < 3; ++mu) {
      int v = 0;
      for (int t = 0; t < 3; ++t)
        if (r.perm[t] == mu) v = t;
      int s = r.sign[v];
      if (s > 0) {
        out[lat.bond(0, lat.index(0, rx), v)] = A[lat.bond(0, x, mu)];
      } else {
        Coord st = rx;
        st[v] -= 1;
        out[lat.bond(0, lat.index(0, st), v)] = -A[lat.bond(0, x, mu)];
      }
    }
  }
  return out;
}

MatC transform_matrix(const Lattice& lat, const LatticeSymmetry& r) {
  int ns = lat.nsites(0);
  MatC U = MatC::Zero(4 * ns, 4 * ns);
  for (int z = 0; z < ns; ++z) {
    int rz = lat.index(0, apply_r(r, lat.coord(0, z)));
    U.block<4, 4>(4 * rz, 4 * z) = r.S;
  }
  return U;
}

VecC gauge_transform_field(const Lattice& lat, int level, const VecC& A, const VecR& lambda) {
  VecC out = A;
  int ns = lat.nsites(level);
  double a = lat.spacing(level);
  for (int x = 0; x < ns; ++x)
    for (int mu = 0; mu < 3; ++mu) {
      int xp = lat.shift(level, x, mu, 1);
      out[lat.bond(level, x, mu)] -= (lambda[xp] - lambda[x]) / a;
    }
  return out;
}

MatC gauge_phase(const Lattice& lat, int level, const VecR& lambda, double e) {
  int ns = lat.nsites(level);
  MatC D = MatC::Zero(4 * ns, 4 * ns);
  for (int x = 0; x < ns; ++x)
    for (int s = 0; s < 4; ++s) D(4 * x + s, 4 * x + s) = std::exp(I1 * e * lambda[x]);
  return D;
}

}  // namespace rgqed3

namespace rgqed3 {

double SymmetryReport::max() const {
  return std::max({gauge_D, gauge_Q, gauge_S, gauge_Dk, charge_D, charge_S, charge_Dk, rot_D, rot_S, refl_D, refl_S,
                   det_imag});
}

SymmetryReport symmetry_suite(const Lattice& lat, const VecR& Ar, const VecR& lambda, FermionParams p, Rng& rng,
                              int ncols) {
  SymmetryReport r;
  VecC A = Ar.cast<cd>();
  int nf = lat.nsites(0), k = lat.k;
  FermionKit K(lat, A, p);
  MatC F = rng.cmat(K.dim_fine(), ncols);
  MatC SF = K.solve_S(F);

  // A -> A - d lambda, psi -> e^{i e lambda} psi; coarse fields carry lambda on level-k sites
  FermionKit Kl(lat, gauge_transform_field(lat, 0, A, lambda), p);
  MatC Ph = gauge_phase(lat, 0, lambda, p.e);
  VecR lu(lat.nsites(k));
  for (int y = 0; y < lat.nsites(k); ++y) lu[y] = lambda[lat.index(0, lat.coord(k, y))];
  MatC Pu = gauge_phase(lat, k, lu, p.e);
  r.gauge_D = rel_err(Kl.Dm, Ph * K.Dm * Ph.adjoint());
  r.gauge_Q = rel_err(Kl.Qk, Pu * K.Qk * Ph.adjoint());
  r.gauge_S = rel_err(Kl.solve_S(Ph * F), Ph * SF);
  r.gauge_Dk = rel_err(Kl.Dk(), Pu * K.Dk() * Pu.adjoint());

  // C^{-1} X(-A) C = X(A)^T
  const GammaRep& G = gamma_rep();
  FermionKit Km(lat, -A, p);
  MatC Cf = spin_diag(nf, G.C), Cu = spin_diag(lat.nsites(k), G.C);
  MatC Cfi = spin_diag(nf, G.C.inverse()), Cui = spin_diag(lat.nsites(k), G.C.inverse());
  r.charge_D = rel_err(K.Dm.transpose(), Cfi * Km.Dm * Cf);
  r.charge_S = rel_err(K.solve_S_transpose(F), Cfi * Km.solve_S(Cf * F));
  r.charge_Dk = rel_err(K.Dk().transpose(), Cui * Km.Dk() * Cu);

  for (int which = 0; which < 2; ++which) {
    LatticeSymmetry s = which == 0 ? rotation_e2() : reflection_e0();
    FermionKit Kr(lat, transform_gauge(lat, A, s), p);
    MatC U = transform_matrix(lat, s);
    MatC Ui = U.inverse();
    double d = rel_err(Kr.Dm, U * K.Dm * Ui);
    double sres = rel_err(Kr.solve_S(U * F), U * SF);
    (which == 0 ? r.rot_D : r.refl_D) = d;
    (which == 0 ? r.rot_S : r.refl_S) = sres;
  }

  // the phase of det from the LU diagonal
  Eigen::PartialPivLU<MatC> lu_d(K.Dm);
  double ph = 0;
  for (Eigen::Index i = 0; i < K.Dm.rows(); ++i) ph += std::arg(lu_d.matrixLU()(i, i));
  if (lu_d.permutationP().determinant() < 0) ph += M_PI;
  r.det_imag = std::abs(std::sin(ph));
  return r;
}

}  // namespace rgqed3

namespace rgqed3 {

namespace {

AveragingSweep one_draw(const Lattice& lat, int k, std::uint64_t seed, double e) {
  Rng rng(seed);
  int nb = lat.nbonds(0);
  VecC A(nb);
  for (int i = 0; i < nb; ++i) A[i] = cd(rng.uniform(), 0.1 * rng.uniform());
  AveragingSweep r;
  MatC Q = q_chain(lat, A, e, k, 1), QTm = qt_chain(lat, A, e, k, -1);
  r.qqt = rel_err(Q * QTm, MatC::Identity(Q.rows(), Q.rows()));
  MatC P = QTm * Q;
  r.pp = rel_err(P * P, P);
  r.chain = rel_err(q_composed(lat, A, e, k, 1), Q);
  return r;
}

}  // namespace

AveragingSweep averaging_sweep(const Lattice& lat, int k, int draws, std::uint64_t seed, double e, bool parallel) {
  std::vector<AveragingSweep> all(draws);
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int d = 0; d < draws; ++d) all[d] = one_draw(lat, k, seed + d, e);
  } else {
    for (int d = 0; d < draws; ++d) all[d] = one_draw(lat, k, seed + d, e);
  }
  AveragingSweep r;
  for (const auto& a : all) {
    r.qqt = std::max(r.qqt, a.qqt);
    r.pp = std::max(r.pp, a.pp);
    r.chain = std::max(r.chain, a.chain);
  }
  return r;
}

}  // namespace rgqed3
