#include "rgqed3/gauge.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace rgqed3 {

MatR grad_matrix(const Lattice& lat, int j) {
  int ns = lat.nsites(j);
  double inv = 1.0 / lat.spacing(j);
  MatR G = MatR::Zero(3 * ns, ns);
  for (int x = 0; x < ns; ++x)
    for (int mu = 0; mu < 3; ++mu) {
      int b = lat.bond(j, x, mu);
      G(b, lat.shift(j, x, mu, 1)) += inv;
      G(b, x) -= inv;
    }
  return G;
}

MatR curl_matrix(const Lattice& lat, int j) {
  int np = lat.nplaq(j);
  double inv = 1.0 / lat.spacing(j);
  MatR D = MatR::Zero(np, lat.nbonds(j));
  for (int p = 0; p < np; ++p)
    for (auto [b, s] : lat.plaquette(j, p)) D(p, b) += s * inv;
  return D;
}

MatR qbond_step(const Lattice& lat, int j) {
  if (j + 1 > lat.N) throw DomainError("qbond_step: no coarser level");
  int nc = lat.nsites(j + 1);
  double w = std::pow(double(lat.L), -4);
  MatR Q = MatR::Zero(3 * nc, lat.nbonds(j));
  for (int c = 0; c < nc; ++c)
    for (int mu = 0; mu < 3; ++mu) {
      int row = lat.bond(j + 1, c, mu);
      for (auto [x, off] : lat.block(j, c))
        for (int t = 0; t < lat.L; ++t) Q(row, lat.bond(j, lat.shift(j, x, mu, t), mu)) += w;
    }
  return Q;
}

MatR qbond_chain(const Lattice& lat, int j1) {
  MatR Q = MatR::Identity(lat.nbonds(0), lat.nbonds(0));
  for (int j = 0; j < j1; ++j) Q = qbond_step(lat, j) * Q;
  return Q;
}

MatR qbond_explicit(const Lattice& lat, int j1) {
  int nc = lat.nsites(j1), s = lat.stride(j1), H = (s - 1) / 2;
  double w = std::pow(double(lat.L), -4 * j1);
  MatR Q = MatR::Zero(3 * nc, lat.nbonds(0));
  for (int c = 0; c < nc; ++c) {
    Coord y = lat.coord(j1, c);
    for (int mu = 0; mu < 3; ++mu) {
      int row = lat.bond(j1, c, mu);
      for (int a0 = -H; a0 <= H; ++a0)
        for (int a1 = -H; a1 <= H; ++a1)
          for (int a2 = -H; a2 <= H; ++a2) {
            int x = lat.index(0, {y[0] + a0, y[1] + a1, y[2] + a2});
            for (int t = 0; t < s; ++t) Q(row, lat.bond(0, lat.shift(0, x, mu, t), mu)) += w;
          }
    }
  }
  return Q;
}

MatR qscalar_step(const Lattice& lat, int j) {
  int nc = lat.nsites(j + 1);
  double w = std::pow(double(lat.L), -3);
  MatR Q = MatR::Zero(nc, lat.nsites(j));
  for (int c = 0; c < nc; ++c)
    for (auto [x, off] : lat.block(j, c)) Q(c, x) += w;
  return Q;
}

MatR qscalar_chain(const Lattice& lat, int j1) {
  MatR Q = MatR::Identity(lat.nsites(0), lat.nsites(0));
  for (int j = 0; j < j1; ++j) Q = qscalar_step(lat, j) * Q;
  return Q;
}

MatR level_adjoint(const Lattice& lat, const MatR& A, int j0, int j1) {
  return (lat.weight(j1) / lat.weight(j0)) * A.transpose();
}

MatR tau_block(const Lattice& lat, int j) {
  int nc = lat.nsites(j + 1), L3 = lat.L * lat.L * lat.L, s = lat.stride(j);
  MatR T = MatR::Zero(nc * (L3 - 1), lat.nbonds(j));
  int row = 0;
  for (int c = 0; c < nc; ++c) {
    Coord y = lat.coord(j + 1, c);
    for (auto [x, off] : lat.block(j, c)) {
      if (off == Coord{0, 0, 0}) continue;
      for (auto [b, v] : lat.tau_row(j, y, {off[0] * s, off[1] * s, off[2] * s})) T(row, b) += v;
      ++row;
    }
  }
  return T;
}

MatR tau_constraints(const Lattice& lat, int j1) {
  std::vector<MatR> blocks;
  int rows = 0;
  MatR Qj = MatR::Identity(lat.nbonds(0), lat.nbonds(0));
  for (int j = 0; j < j1; ++j) {
    blocks.push_back(tau_block(lat, j) * Qj);
    rows += blocks.back().rows();
    Qj = qbond_step(lat, j) * Qj;
  }
  MatR T(rows, lat.nbonds(0));
  int r = 0;
  for (auto& b : blocks) {
    T.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return T;
}

MatR tau_k_matrix(const Lattice& lat, int j1) {
  int ns = lat.nsites(0);
  MatR T = MatR::Zero(ns, lat.nbonds(0));
  for (int x = 0; x < ns; ++x)
    for (auto [b, v] : lat.tau_chain(0, 0, x, j1)) T(x, b) += v;
  return T;
}

VecC field_strength(const Lattice& lat, int j, const VecC& A) {
  return curl_matrix(lat, j).cast<cd>() * A;
}

double field_strength_norm2(const Lattice& lat, int j, const VecC& A) {
  return lat.weight(j) * field_strength(lat, j, A).squaredNorm();
}

VecC gauge_transform(const Lattice& lat, int j, const VecC& A, const VecR& lambda) {
  return A - grad_matrix(lat, j).cast<cd>() * lambda.cast<cd>();
}

VecC gauge_transform_spinor(const VecC& psi, const VecR& lambda, double e) {
  VecC out = psi;
  for (Eigen::Index x = 0; x < lambda.size(); ++x)
    for (int s = 0; s < 4; ++s) out[4 * x + s] *= std::exp(I1 * e * lambda[x]);
  return out;
}

DomainNorms domain_norms(const Lattice& lat, const VecC& A, double alpha) {
  DomainNorms r;
  int ns = lat.nsites(0);
  double eta = lat.eta;
  r.sup_A = A.cwiseAbs().maxCoeff();
  // dA(x, mu, nu) = (A_mu(x + eta e_nu) - A_mu(x)) / eta
  std::vector<cd> dA(9 * ns);
  for (int x = 0; x < ns; ++x)
    for (int mu = 0; mu < 3; ++mu)
      for (int nu = 0; nu < 3; ++nu) {
        cd v = (A[lat.bond(0, lat.shift(0, x, nu, 1), mu)] - A[lat.bond(0, x, mu)]) / eta;
        dA[9 * x + 3 * mu + nu] = v;
        r.sup_dA = std::max(r.sup_dA, std::abs(v));
      }
  // Holder quotient over 0 < |x - y| < 1
  int R = lat.stride(lat.k);
  std::vector<std::pair<Coord, double>> offs;
  for (int a = -R; a <= R; ++a)
    for (int b = -R; b <= R; ++b)
      for (int c = -R; c <= R; ++c) {
        double dist = eta * std::sqrt(double(a * a + b * b + c * c));
        if (dist > 0 && dist < 1) offs.push_back({{a, b, c}, std::pow(dist, alpha)});
      }
  for (int x = 0; x < ns; ++x) {
    Coord cx = lat.coord(0, x);
    for (auto& [o, den] : offs) {
      int y = lat.index(0, {cx[0] + o[0], cx[1] + o[1], cx[2] + o[2]});
      for (int q = 0; q < 9; ++q)
        r.sup_holder = std::max(r.sup_holder, std::abs(dA[9 * y + q] - dA[9 * x + q]) / den);
    }
  }
  return r;
}

bool in_domain_R(const Lattice& lat, const VecC& A, const FieldDomainParams& p) {
  DomainNorms n = domain_norms(lat, A, p.alpha);
  double base = -0.75;
  return n.sup_A < std::pow(p.ek, base + p.eps) && n.sup_dA < std::pow(p.ek, base + 2 * p.eps) &&
         n.sup_holder < std::pow(p.ek, base + 3 * p.eps);
}

MatR nullspace(const MatR& K, double rtol) {
  int n = K.cols();
  if (K.rows() == 0) return MatR::Identity(n, n);
  Eigen::ColPivHouseholderQR<MatR> qr(K.transpose());
  qr.setThreshold(rtol);
  int r = qr.rank();
  MatR Qf = qr.householderQ();
  return Qf.rightCols(n - r);
}

MatR constrained_minimizer(const MatR& S, const MatR& K, const MatR& R, double tol) {
  int n = K.cols();
  Eigen::ColPivHouseholderQR<MatR> qr(K.transpose());
  qr.setThreshold(1e-10);
  int r = qr.rank();
  MatR Qf = qr.householderQ();
  MatR Y = Qf.leftCols(r), Z = Qf.rightCols(n - r);
  MatR KY = K * Y;
  MatR y = KY.colPivHouseholderQr().solve(R);
  double res = (KY * y - R).norm() / std::max(1.0, R.norm());
  if (res > tol) throw DomainError("constrained_minimizer: inconsistent constraints");
  MatR x0 = Y * y;
  if (Z.cols() == 0) return x0;
  MatR SZ = S * Z;
  Eigen::LDLT<MatR> ldlt(Z.transpose() * SZ);
  if (ldlt.info() != Eigen::Success) throw DomainError("constrained_minimizer: singular form");
  MatR z = -ldlt.solve(SZ.transpose() * x0);
  return x0 + Z * z;
}

MatR r_projection_direct(const Lattice& lat, int j1) {
  int n = lat.nsites(0);
  MatR G = grad_matrix(lat, 0);
  MatR lap = G.transpose() * G;
  MatR Nb = nullspace(qscalar_chain(lat, j1));
  if (Nb.cols() == 0) return MatR::Zero(n, n);
  MatR V = lap * Nb;
  Eigen::HouseholderQR<MatR> qr(V);
  MatR U = qr.householderQ() * MatR::Identity(n, V.cols());
  return U * U.transpose();
}

MatR r_projection(const Lattice& lat, int j1, double a) {
  int n = lat.nsites(0);
  MatR Gr = grad_matrix(lat, 0);
  MatR Q = qscalar_chain(lat, j1);
  MatR QT = level_adjoint(lat, Q, 0, j1);
  MatR G = (Gr.transpose() * Gr + a * QT * Q).llt().solve(MatR::Identity(n, n));
  MatR QG = Q * G;
  MatR Nk = (QG * G * QT).inverse();
  MatR P = G * QT * Nk * QG;
  return MatR::Identity(n, n) - P;
}

namespace {

MatR green_landau(const MatR& d, const MatR& grad, const MatR& R, const MatR& QT, const MatR& Q,
                  double a) {
  MatR X = d.transpose() * d + grad * R * grad.transpose() + a * QT * Q;
  X = 0.5 * (X + X.transpose());
  Eigen::LLT<MatR> llt(X);
  if (llt.info() != Eigen::Success) throw DomainError("Landau Green's function: form not positive");
  return llt.solve(MatR::Identity(X.rows(), X.cols()));
}

MatR sym_inverse(const MatR& X) {
  MatR Xs = 0.5 * (X + X.transpose());
  Eigen::LLT<MatR> llt(Xs);
  if (llt.info() != Eigen::Success) throw DomainError("matrix not positive definite");
  return llt.solve(MatR::Identity(X.rows(), X.cols()));
}

}  // namespace

GaugeKit::GaugeKit(const Lattice& lat_, double a_, bool with_step)
    : lat(lat_), k(lat_.k), a(a_), has_step(with_step && lat_.k < lat_.N) {
  d0 = curl_matrix(lat, 0);
  grad0 = grad_matrix(lat, 0);
  lap0 = grad0.transpose() * grad0;
  Qk = qbond_chain(lat, k);
  QkT = level_adjoint(lat, Qk, 0, k);
  Rk = r_projection(lat, k, a);
  Pk = MatR::Identity(Rk.rows(), Rk.cols()) - Rk;
  Gk = green_landau(d0, grad0, Rk, QkT, Qk, a);
  Nk = sym_inverse(Qk * Gk * QkT);
  H = Gk * QkT * Nk;
  if (k == 0) {
    Hx = MatR::Identity(nunit_bonds(), nunit_bonds());
  } else {
    MatR T = tau_constraints(lat, k);
    MatR K(Qk.rows() + T.rows(), Qk.cols());
    K << Qk, T;
    MatR R = MatR::Zero(K.rows(), Qk.rows());
    R.topRows(Qk.rows()) = MatR::Identity(Qk.rows(), Qk.rows());
    Hx = constrained_minimizer(d0.transpose() * d0, K, R);
  }
  MatR dH = d0 * H;
  Delta = (lat.weight(0) / lat.weight(k)) * dH.transpose() * dH;
  Delta = 0.5 * (Delta + Delta.transpose());
  dunit = curl_matrix(lat, k);
  gradunit = grad_matrix(lat, k);
  if (!has_step) return;

  Q = qbond_step(lat, k);
  QT = level_adjoint(lat, Q, k, k + 1);
  tau = tau_block(lat, k);
  int L = lat.L, L3 = L * L * L, h = (L - 1) / 2, nb = nunit_bonds();
  int nc = lat.nsites(k + 1);
  central.assign(3 * nc, -1);
  std::vector<VecR> cols;
  for (int c = 0; c < nc; ++c) {
    std::vector<int> inb;
    for (auto [x, off] : lat.block(k, c))
      for (int mu = 0; mu < 3; ++mu) {
        int b = lat.bond(k, x, mu);
        if (off[mu] < h) {
          inb.push_back(b);
        } else if (off[(mu + 1) % 3] == 0 && off[(mu + 2) % 3] == 0) {
          central[lat.bond(k + 1, c, mu)] = b;
        } else {
          VecR v = VecR::Zero(nb);
          v[b] = 1.0;
          cols.push_back(v);
        }
      }
    MatR Tloc(L3 - 1, inb.size());
    for (int r = 0; r < L3 - 1; ++r)
      for (size_t q = 0; q < inb.size(); ++q) Tloc(r, q) = tau(c * (L3 - 1) + r, inb[q]);
    MatR E = nullspace(Tloc);
    for (int i = 0; i < E.cols(); ++i) {
      VecR v = VecR::Zero(nb);
      for (size_t q = 0; q < inb.size(); ++q) v[inb[q]] = E(q, i);
      cols.push_back(v);
    }
  }
  Ups.resize(nb, cols.size());
  for (size_t i = 0; i < cols.size(); ++i) Ups.col(i) = cols[i];
  Cmat = Ups;
  MatR QU = Q * Ups;
  for (int cb = 0; cb < 3 * nc; ++cb) {
    int b = central[cb];
    double qc = Q(cb, b);
    Cmat.row(b) = -QU.row(cb) / qc;
  }
  Ck = sym_inverse(Cmat.transpose() * Delta * Cmat);
  Eigen::SelfAdjointEigenSolver<MatR> es(Ck);
  Ck_half = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
            es.eigenvectors().transpose();

  int nu = lat.nsites(k);
  Mop = MatR::Zero(nu, nb);
  for (int c = 0; c < nc; ++c) {
    auto blk = lat.block(k, c);
    VecR S = VecR::Zero(nb);
    std::vector<VecR> rows(blk.size(), VecR::Zero(nb));
    for (size_t i = 0; i < blk.size(); ++i) {
      auto [x, off] = blk[i];
      if (off == Coord{0, 0, 0}) continue;
      // tau rows are stored in block order skipping the center
      int r = c * (L3 - 1) + int(i) - (i > size_t(L3 / 2) ? 1 : 0);
      rows[i] = tau.row(r).transpose();
      S += rows[i];
    }
    for (size_t i = 0; i < blk.size(); ++i) Mop.row(blk[i].first) = (-rows[i] + S / L3).transpose();
  }
  G0 = G0_next();
  PiTau = ker_tau_projector();
  Ctil = Ctilde();
}

MatR GaugeKit::Hk_minimizer_direct() const {
  int ns = lat.nsites(0);
  MatR K;
  if (k == 0) {
    K = Qk;
  } else {
    Eigen::SelfAdjointEigenSolver<MatR> es(Rk);
    std::vector<int> idx;
    for (int i = 0; i < ns; ++i)
      if (es.eigenvalues()[i] > 0.5) idx.push_back(i);
    MatR VR(ns, idx.size());
    for (size_t i = 0; i < idx.size(); ++i) VR.col(i) = es.eigenvectors().col(idx[i]);
    MatR div = grad0.transpose();
    K.resize(Qk.rows() + VR.cols(), Qk.cols());
    K << Qk, VR.transpose() * div;
  }
  MatR R = MatR::Zero(K.rows(), Qk.rows());
  R.topRows(Qk.rows()) = MatR::Identity(Qk.rows(), Qk.rows());
  return constrained_minimizer(d0.transpose() * d0, K, R);
}

MatR GaugeKit::G0_next() const {
  if (k + 1 > lat.N) throw DomainError("G0_next: no coarser level");
  MatR Qk1 = qbond_step(lat, k) * Qk;
  MatR Qk1T = level_adjoint(lat, Qk1, 0, k + 1);
  MatR R0 = r_projection(lat, k + 1, a);
  return green_landau(d0, grad0, R0, Qk1T, Qk1, a);
}

MatR GaugeKit::Gtilde_next() const {
  MatR Qk1 = qbond_step(lat, k) * Qk;
  MatR Qk1T = level_adjoint(lat, Qk1, 0, k + 1);
  MatR N0 = sym_inverse(Qk1 * G0 * Qk1T);
  MatR QG = Qk1 * G0;
  return G0 - G0 * Qk1T * N0 * QG;
}

MatR GaugeKit::covariance_rhs() const {
  int nb = nunit_bonds();
  MatR M1 = MatR::Identity(nb, nb) + gradunit * Mop;
  return M1 * Qk * Gtilde_next() * QkT * M1.transpose();
}

std::vector<int> GaugeKit::bonds_touching(const std::vector<int>& unit_sites) const {
  std::vector<char> in(lat.nsites(k), 0);
  for (int x : unit_sites) in[x] = 1;
  std::vector<int> out;
  for (int x = 0; x < lat.nsites(k); ++x)
    for (int mu = 0; mu < 3; ++mu)
      if (in[x] || in[lat.shift(k, x, mu, 1)]) out.push_back(lat.bond(k, x, mu));
  return out;
}

MatR GaugeKit::Ck_restricted(const std::vector<int>& unit_sites) const {
  std::vector<int> bt = bonds_touching(unit_sites);
  std::vector<char> ok(nunit_bonds(), 0);
  for (int b : bt) ok[b] = 1;
  std::vector<int> keep;
  for (int i = 0; i < Ups.cols(); ++i) {
    bool inside = true;
    for (int b = 0; b < Ups.rows() && inside; ++b)
      if (Ups(b, i) != 0.0 && !ok[b]) inside = false;
    if (inside) keep.push_back(i);
  }
  MatR Cs(Cmat.rows(), keep.size());
  for (size_t i = 0; i < keep.size(); ++i) Cs.col(i) = Cmat.col(keep[i]);
  return sym_inverse(Cs.transpose() * Delta * Cs);
}

MatR GaugeKit::ker_tau_projector() const {
  MatR V = nullspace(tau);
  return V * V.transpose();
}

MatR GaugeKit::Ctilde() const {
  MatR V = nullspace(tau);
  MatR X = Delta + a * QT * Q;
  return V * sym_inverse(V.transpose() * X * V) * V.transpose();
}

void write_matrix_bin(const std::string& path, const MatC& M) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      double re = M(i, j).real(), im = M(i, j).imag();
      f.write(reinterpret_cast<const char*>(&re), sizeof(double));
      f.write(reinterpret_cast<const char*>(&im), sizeof(double));
    }
}

void GaugeKit::dump(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json man;
  man["lattice"] = nlohmann::json::parse(lat.descriptor_json());
  man["format"] = "row-major little-endian complex128 pairs";
  auto put = [&](const std::string& name, const MatR& M) {
    std::string file = name + ".bin";
    write_matrix_bin(dir + "/" + file, M.cast<cd>());
    man["operators"].push_back({{"name", name}, {"rows", M.rows()}, {"cols", M.cols()}, {"file", file}});
  };
  put("Qk", Qk);
  put("QkT", QkT);
  put("Rk", Rk);
  put("Gk", Gk);
  put("Hk", H);
  put("Hxk", Hx);
  put("Deltak", Delta);
  if (has_step) {
    put("Q", Q);
    put("tau", tau);
    put("C", Cmat);
    put("Ck", Ck);
    put("M", Mop);
  }
  std::ofstream(dir + "/manifest.json") << man.dump(2) << "\n";
}

ConditioningResidual verify_conditioning_C(const GaugeKit& kit, const VecR& F) {
  const Lattice& lat = kit.lat;
  int k = kit.k;
  MatR Qk1 = kit.Q * kit.Qk;
  VecR J = level_adjoint(lat, Qk1, 0, k + 1) * F;
  ConditioningResidual r;
  r.lhs = lat.weight(0) / lat.weight(k) * J.dot(kit.G0 * J);
  VecR Jp = kit.QT * F;
  r.rhs = Jp.dot(kit.Ctil * Jp);
  double s = std::max(std::abs(r.lhs), 1e-300);
  r.rel = std::abs(r.lhs - r.rhs) / s;
  if (F.norm() == 0) r.rel = std::abs(r.lhs - r.rhs);
  return r;
}

QTRatios verify_QT_lower_bound(const GaugeKit& kit, const VecR& A) {
  const Lattice& lat = kit.lat;
  double nA = lat.weight(kit.k + 1) / lat.weight(kit.k) * A.squaredNorm();
  if (nA == 0) throw DomainError("verify_QT_lower_bound: A = 0");
  VecR v = kit.QT * A;
  QTRatios r;
  r.plain = v.squaredNorm() / nA;
  r.projected = (kit.PiTau * v).squaredNorm() / nA;
  return r;
}

QTRatios QT_ratio_infimum(const GaugeKit& kit) {
  const Lattice& lat = kit.lat;
  double w = lat.weight(kit.k + 1) / lat.weight(kit.k);
  QTRatios r;
  MatR A = kit.QT.transpose() * kit.QT;
  r.plain = Eigen::SelfAdjointEigenSolver<MatR>(A, Eigen::EigenvaluesOnly).eigenvalues()[0] / w;
  MatR B = kit.QT.transpose() * kit.PiTau * kit.QT;
  B = 0.5 * (B + B.transpose());
  r.projected = Eigen::SelfAdjointEigenSolver<MatR>(B, Eigen::EigenvaluesOnly).eigenvalues()[0] / w;
  return r;
}

MatR qsurface(const GaugeKit& kit) {
  const Lattice& lat = kit.lat;
  int k = kit.k, L = lat.L, h = (L - 1) / 2, nc = lat.nsites(k + 1);
  MatR Qs = MatR::Zero(3 * nc, kit.nunit_bonds());
  for (int c = 0; c < nc; ++c)
    for (auto [x, off] : lat.block(k, c))
      for (int mu = 0; mu < 3; ++mu)
        if (off[mu] == h) Qs(lat.bond(k + 1, c, mu), lat.bond(k, x, mu)) += 1.0 / (L * L);
  return Qs;
}

ConditioningSplit conditioning_split(const MatR& T, const std::vector<int>& lam, const QuadPoly& F) {
  int n = T.rows(), m = lam.size();
  std::vector<char> inl(n, 0);
  for (int i : lam) inl[i] = 1;
  std::vector<int> lc;
  for (int i = 0; i < n; ++i)
    if (!inl[i]) lc.push_back(i);
  int mc = lc.size();
  auto sub = [&](const MatR& X, const std::vector<int>& r, const std::vector<int>& c) {
    MatR S(r.size(), c.size());
    for (size_t i = 0; i < r.size(); ++i)
      for (size_t j = 0; j < c.size(); ++j) S(i, j) = X(r[i], c[j]);
    return S;
  };
  auto expect = [&](const MatR& cov) { return F.c + (F.Hq * cov).trace(); };
  MatR Tinv = sym_inverse(T);
  MatR TL = sub(T, lam, lam), TLc = sub(T, lam, lc);
  Eigen::LLT<MatR> lltL(TL);
  if (lltL.info() != Eigen::Success) throw DomainError("conditioning_split: T_Lambda singular");
  MatR TLinv = lltL.solve(MatR::Identity(m, m));

  ConditioningSplit r;
  r.direct = expect(sub(Tinv, lam, lam));

  MatR K = TLinv * TLc;
  r.form1 = expect(TLinv + K * sub(Tinv, lc, lc) * K.transpose());

  // joint Gaussian over (A', A_Lambda)
  MatR S = TLc.transpose() * TLinv * TLc;
  MatR J = MatR::Zero(n + m, n + m);
  J.topLeftCorner(n, n) = T;
  for (int i = 0; i < mc; ++i)
    for (int j = 0; j < mc; ++j) J(lc[i], lc[j]) += S(i, j);
  for (int i = 0; i < mc; ++i)
    for (int j = 0; j < m; ++j) {
      J(lc[i], n + j) += TLc(j, i);
      J(n + j, lc[i]) += TLc(j, i);
    }
  J.bottomRightCorner(m, m) = TL;
  Eigen::LLT<MatR> lltJ(J);
  if (lltJ.info() != Eigen::Success) throw DomainError("conditioning_split: joint form not positive");
  auto logdet = [](const Eigen::LLT<MatR>& l) {
    return 2.0 * l.matrixLLT().diagonal().array().log().sum();
  };
  Eigen::LLT<MatR> lltT(T);
  double norm = std::exp(0.5 * (logdet(lltT) + logdet(lltL) - logdet(lltJ)));
  MatR Jinv = lltJ.solve(MatR::Identity(n + m, n + m));
  r.form2 = norm * expect(Jinv.bottomRightCorner(m, m));
  return r;
}

std::vector<Coord> site_positions(const Lattice& lat, int j) {
  std::vector<Coord> out(lat.nsites(j));
  for (int x = 0; x < lat.nsites(j); ++x) out[x] = lat.coord(j, x);
  return out;
}

std::vector<Coord> bond_positions(const Lattice& lat, int j) {
  std::vector<Coord> out(lat.nbonds(j));
  for (int x = 0; x < lat.nsites(j); ++x)
    for (int mu = 0; mu < 3; ++mu) out[lat.bond(j, x, mu)] = lat.coord(j, x);
  return out;
}

DecayFit decay_fit(const MatR& K, const std::vector<Coord>& rows, const std::vector<Coord>& cols,
                   const Lattice& lat, int unit_stride) {
  DecayFit f;
  for (Eigen::Index i = 0; i < K.rows(); ++i)
    for (Eigen::Index j = 0; j < K.cols(); ++j) {
      int r = lat.fine_dist(rows[i], cols[j]) / unit_stride;
      if (r >= int(f.profile.size())) f.profile.resize(r + 1, 0.0);
      f.profile[r] = std::max(f.profile[r], std::abs(K(i, j)));
    }
  // least squares slope of log profile
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (size_t r = 0; r < f.profile.size(); ++r) {
    if (f.profile[r] <= 0) continue;
    double y = std::log(f.profile[r]);
    sx += r;
    sy += y;
    sxx += double(r) * r;
    sxy += r * y;
    ++cnt;
  }
  if (cnt >= 2) f.gamma = -(cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  return f;
}

}  // namespace rgqed3
