#include "rgqed3/suites.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <json.hpp>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "rgqed3/flow.hpp"
#include "rgqed3/gauge.hpp"
#include "rgqed3/polymer.hpp"
#include "rgqed3/rgstep.hpp"
#include "rgqed3/walk.hpp"

namespace rgqed3 {

void RunConfig::validate() const {
  if (L < 3 || L % 2 == 0) throw ConfigError("L must be odd and at least 3, got " + std::to_string(L));
  if (N < 1) throw ConfigError("N must be at least 1, got " + std::to_string(N));
  if (k < 0 || k > N) throw ConfigError("k must lie in [0, N], got " + std::to_string(k));
  if (M < 1 || ipow(L, N) % M != 0) throw ConfigError("M must divide L^N, got " + std::to_string(M));
  if (!(b > 0)) throw ConfigError("b must be positive");
  if (!(e > 0)) throw ConfigError("e must be positive");
  if (mbar < 0) throw ConfigError("mbar must be non-negative");
  if (!(tol_scale > 0)) throw ConfigError("tol_scale must be positive");
  if (draws < 1) throw ConfigError("draws must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  for (const auto& s : suites)
    if (!is_suite(s)) throw ConfigError("unknown suite '" + s + "'");
}

RunConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& ex) {
    throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    const auto& v = it.value();
    try {
      if (key == "L") c.L = v.get<int>();
      else if (key == "N") c.N = v.get<int>();
      else if (key == "k") c.k = v.get<int>();
      else if (key == "M") c.M = v.get<int>();
      else if (key == "b") c.b = v.get<double>();
      else if (key == "e") c.e = v.get<double>();
      else if (key == "mbar") c.mbar = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "tol_scale") c.tol_scale = v.get<double>();
      else if (key == "draws") c.draws = v.get<int>();
      else if (key == "timing") c.timing = v.get<bool>();
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "suites") c.suites = v.get<std::vector<std::string>>();
      else if (key == "out") c.out = v.get<std::string>();
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& ex) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + ex.what());
    }
  }
  return c;
}

bool SuiteResult::pass() const {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

namespace {

struct SuiteDef {
  std::string name;
  int criterion;
  std::function<void(SuiteResult&, const RunConfig&)> run;
};

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

void check(SuiteResult& r, const RunConfig& c, const std::string& name, const std::string& anchor, double residual,
           double tol) {
  Check k{name, anchor, residual, tol * c.tol_scale, "<=", false};
  k.pass = std::isfinite(residual) && residual <= k.tolerance;
  r.checks.push_back(k);
}

// inequality from a bound, not a numerical tolerance; tol_scale does not apply
void bound(SuiteResult& r, const std::string& name, const std::string& anchor, double value, double limit) {
  Check k{name, anchor, value, limit, "<=", false};
  k.pass = std::isfinite(value) && value <= limit;
  r.checks.push_back(k);
}

void check_ge(SuiteResult& r, const std::string& name, const std::string& anchor, double value, double bound) {
  Check k{name, anchor, value, bound, ">=", false};
  k.pass = std::isfinite(value) && value >= bound;
  r.checks.push_back(k);
}

void timing(SuiteResult& r, const RunConfig& c, const std::string& name, double seconds, double limit) {
  if (!c.timing) return;
  Check k{name, "runtime", seconds, limit, "<=", seconds <= limit};
  r.checks.push_back(k);
}

std::uint64_t suite_seed(const RunConfig& c, int criterion) { return c.seed * 1000003ull + std::uint64_t(criterion); }

VecC real_field(Rng& rng, int n, double scale) { return rng.vec(n, scale).cast<cd>(); }

// ---------------------------------------------------------------- 1 to 9

void s_identities(SuiteResult& r, const RunConfig& c) {
  double t0 = now();
  std::uint64_t seed = suite_seed(c, 1);
  for (int N : {1, 2})
    for (int k = 1; k <= std::min(N, 2); ++k) {
      Lattice lat(c.L, N, k);
      AveragingSweep s = averaging_sweep(lat, k, c.draws, seed, c.e);
      std::string tag = "N" + std::to_string(N) + "_k" + std::to_string(k);
      check(r, c, "QQT_identity_" + tag, "averaging/Q(A)QT(-A)=I", s.qqt, 1e-12);
      check(r, c, "P_squared_" + tag, "averaging/P^2=P", s.pp, 1e-12);
      check(r, c, "Qk_composition_" + tag, "averaging/composed Q_k vs tau_k", s.chain, 1e-12);
    }
  // spinor P_k of the kit
  Lattice lat(c.L, 2, 1);
  Rng rng(seed);
  FermionParams p;
  p.e = c.e;
  p.mbar = c.mbar;
  p.b = c.b;
  FermionKit kit(lat, real_field(rng, lat.nbonds(0), 0.7), p, false);
  MatC P = kit.Pk();
  check(r, c, "spinor_Pk_squared", "averaging/P_k^2=P_k", rel_err(P * P, P), 1e-12);
  timing(r, c, "identities_runtime", now() - t0, 60);
}

FermionKit make_kit(const RunConfig& c, Rng& rng, const Lattice& lat, double scale = 0.5, bool prop = true) {
  FermionParams p;
  p.e = c.e;
  p.mbar = c.mbar;
  p.b = c.b;
  return FermionKit(lat, real_field(rng, lat.nbonds(0), scale), p, prop);
}

void s_gamma(SuiteResult& r, const RunConfig& c) {
  check(r, c, "clifford_relations", "gamma/anticommutators", gamma_algebra_residual(), 1e-14);
  Rng rng(suite_seed(c, 2));
  Lattice lat(c.L, 2, 1);
  FermionKit kit = make_kit(c, rng, lat, 0.7);
  check(r, c, "Gamma_k_representation", "propagators/Gamma_k alternate form", rel_err(kit.Gamma_k(), kit.gamma_k_rhs()), 1e-10);
  for (double y : {0.0, 0.1, 1.0, 10.0})
    check(r, c, "Gamma_y_representation_y" + fmt(y), "y-family/Gamma_y representation",
          rel_err(kit.Gamma_y_rep(y, false), kit.Gamma_y_direct(y)), 1e-10);
}

void s_contour(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 3));
  double worst = 0, r0 = 0;
  for (int t = 0; t < 50; ++t) {
    // random unitary frame, eigenvalues of both signs with |lambda| in [0.1, 5]
    Eigen::HouseholderQR<MatC> qr(rng.cmat(20, 20));
    MatC U = qr.householderQ();
    VecR lam(20);
    for (int i = 0; i < 20; ++i) lam[i] = (i % 2 ? -1 : 1) * rng.uniform(0.1, 5.0);
    MatC S = U * lam.cast<cd>().asDiagonal() * U.adjoint();
    S = 0.5 * (S + S.adjoint());
    LogDet a = logdet_selfadjoint(S, 1.0), b = logdet_selfadjoint(S, 7.0);
    cd ld = logdet_lu(S);
    worst = std::max(worst, std::abs(std::exp(a.value - ld) - 1.0));
    r0 = std::max(r0, std::abs(std::exp(a.value - b.value) - 1.0));
  }
  check(r, c, "contour_vs_direct_det", "log det contour formula", worst, 1e-6);
  check(r, c, "contour_R0_independence", "log det contour formula/R0", r0, 1e-8);
}

void s_deltaz(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 4));
  Lattice lat(c.L, 2, 1, 1);
  FermionKit kit = make_kit(c, rng, lat, 0.5);
  DeltaZ dz = delta_z(kit, 1e-10);
  check(r, c, "deltaZ_formula_vs_det", "delta Z_k y-integral", dz.rel, 1e-6);
  FermionParams p = kit.p;
  FermionKit kit0(lat, VecC::Zero(lat.nbonds(0)), p);
  check(r, c, "volume_factor_A0", "delta Z_k volume factor", volume_factor_residual(kit0), 1e-10);
}

void s_bk(SuiteResult& r, const RunConfig& c) {
  auto bs = b_sequence(1.0, 3, 30);
  double w = 0;
  for (int k = 1; k <= 30; ++k) w = std::max(w, std::abs(bs[k - 1] - b_closed(1.0, 3, k)) / std::abs(b_closed(1.0, 3, k)));
  check(r, c, "bk_recursion_vs_closed", "b_k recursion", w, 1e-14);
  check(r, c, "b2_equals_3/4", "b_k recursion/b_2", std::abs(bs[1] - 0.75), 1e-15);
}

void s_compose(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 6));
  Lattice lat(c.L, 2, 1, 1);
  FermionKit kit = make_kit(c, rng, lat, 0.5);
  ComposeResiduals cr = compose_check(kit, rng);
  check(r, c, "one_step_plus_previous", "composition/one step form", cr.one_step, 1e-10);
  check(r, c, "critical_point_split", "composition/critical point", cr.crit_vs_dot, 1e-10);
  check(r, c, "psi0_vs_psik", "composition/psi0", cr.psi0_vs_psik, 1e-10);
  check(r, c, "block_diagonal_cross", "diagonalization/cross terms", cr.cross, 1e-10);
  check(r, c, "W_block", "diagonalization/W block", cr.w_block, 1e-10);
  check(r, c, "S0_block", "diagonalization/S0 block", cr.s0_block, 1e-10);
  MatC TH = kit.Tk() * kit.Hk();
  check(r, c, "left_inverse_TkHk", "propagators/T_k H_k = I", rel_err(TH, MatC::Identity(TH.rows(), TH.cols())), 1e-10);
}

void s_appc(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 7));
  for (auto [N, k] : {std::pair{1, 0}, std::pair{2, 1}}) {
    Lattice lat(c.L, N, k);
    GaugeKit kit(lat);
    double w = 0;
    for (int t = 0; t < 50; ++t) w = std::max(w, verify_conditioning_C(kit, rng.vec(int(kit.Q.rows()))).rel);
    std::string tag = "N" + std::to_string(N) + "_k" + std::to_string(k);
    check(r, c, "conditioning_identity_" + tag, "conditioning identity", w, 1e-9);
    MatR lhs = kit.covariance_lhs();
    check(r, c, "fluctuation_covariance_" + tag, "conditioning/covariance identity", (kit.covariance_rhs() - lhs).norm() / lhs.norm(),
          1e-12);
  }
}

void s_appd(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 8));
  double bound = (1.0 / c.L) * (1 - 1e-12);
  for (auto [N, k] : {std::pair{1, 0}, std::pair{2, 0}}) {
    Lattice lat(c.L, N, k);
    GaugeKit kit(lat);
    double mp = 1e300, mq = 1e300;
    for (int t = 0; t < 1000; ++t) {
      QTRatios q = verify_QT_lower_bound(kit, rng.vec(int(kit.QT.cols())));
      mp = std::min(mp, q.plain);
      mq = std::min(mq, q.projected);
    }
    QTRatios inf = QT_ratio_infimum(kit);
    std::string tag = "N" + std::to_string(N) + "_k" + std::to_string(k);
    check_ge(r, "QT_ratio_sampled_" + tag, "QT lower bound", mp, bound);
    check_ge(r, "QT_ratio_projected_sampled_" + tag, "QT lower bound/projected", mq, bound);
    check_ge(r, "QT_ratio_infimum_" + tag, "QT lower bound", inf.plain, bound);
    check_ge(r, "QT_ratio_projected_infimum_" + tag, "QT lower bound/projected", inf.projected, bound);
  }
}

void s_appe(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 9));
  double w = 0;
  auto run = [&](const MatR& T, const std::vector<int>& lam) {
    int m = int(lam.size());
    for (int t = 0; t < 20; ++t) {
      QuadPoly F;
      F.c = rng.uniform();
      F.g = rng.vec(m);
      MatR H = MatR::Zero(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) H(i, j) = rng.uniform();
      F.Hq = 0.5 * (H + H.transpose());
      ConditioningSplit s = conditioning_split(T, lam, F);
      double sc = std::max(std::abs(s.direct), 1e-300);
      w = std::max({w, std::abs(s.form1 - s.direct) / sc, std::abs(s.form2 - s.direct) / sc});
    }
  };
  for (int t = 0; t < 5; ++t) {
    int n = 12;
    MatR B = MatR::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = rng.uniform();
    run(B * B.transpose() + n * MatR::Identity(n, n), {1, 4, 5, 9});
  }
  // a lattice form: the fluctuation precision C^T Delta C at (N = 1, k = 0)
  Lattice lat(c.L, 1, 0);
  GaugeKit kit(lat);
  MatR T = kit.Cmat.transpose() * kit.Delta * kit.Cmat;
  T = 0.5 * (T + T.transpose());
  std::vector<int> lam;
  for (int i = 0; i < int(T.rows()); i += 5) lam.push_back(i);
  run(T, lam);
  check(r, c, "three_routes_agree", "Gaussian integrals over a subset", w, 1e-10);
}

// ---------------------------------------------------------------- 10

void s_grassmann(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 10));
  double sub = 0, prod = 0, shift = 0, dressed = 0, dressed_oracle = 0, matrix = 0, partial = 0;
  for (int t = 0; t < 500; ++t) {
    double h = rng.uniform(0.3, 2.0), h2 = rng.uniform(0.3, 2.0);
    Kernel a = random_kernel(rng, 8, 4, 0.15), b = random_kernel(rng, 8, 4, 0.15);
    Kernel ab = product(a, b);
    double na = kernel_norm(a, h), nb = kernel_norm(b, h);
    if (na * nb > 0) sub = std::max(sub, kernel_norm(ab, h) / (na * nb) - 1);
    if (t < 100) prod = std::max(prod, kernel_norm(ab - product_bruteforce(a, b), 1.0) / std::max(1.0, kernel_norm(ab, 1.0)));

    // E+(psi, psi') = E(psi + psi'), ||E+||_{h,h'} <= ||E||_{h+h'}
    Kernel s = random_kernel(rng, 4, 4, 0.5);
    double lhs = kernel_norm(shift_split(s), std::vector<double>{h, h2}), rhs = kernel_norm(s, h + h2);
    if (rhs > 0) shift = std::max(shift, lhs / rhs - 1);

    // dressed fields with two species
    std::vector<int> sp = {0, 0, 0, 1, 1, 1};
    Kernel d = random_kernel(rng, 6, 4, 0.4, sp);
    MatC H1 = rng.cmat(3, 4), H2 = rng.cmat(3, 4);
    Kernel dd = compose_dressed(d, H1, H2);
    double bd = kernel_norm(d, std::vector<double>{norm_1inf(H1) * h, norm_1inf(H2) * h});
    if (bd > 0) dressed = std::max(dressed, kernel_norm(dd, h) / bd - 1);
    if (t < 100) {
      MatC K(6, 4);
      K << H1, H2;
      Kernel o = substitute_bruteforce(d, K, std::vector<int>(4, 0));
      dressed_oracle = std::max(dressed_oracle, kernel_norm(dd - o, 1.0) / std::max(1.0, kernel_norm(o, 1.0)));
    }

    // 2 x 2 operator blocks between two species
    MatC K = rng.cmat(6, 6);
    std::vector<int> tsp = {0, 0, 0, 1, 1, 1};
    std::vector<double> hh = {h, h2};
    std::vector<double> hp(2, 0.0);
    for (int g = 0; g < 6; ++g) {
      double rs = 0;
      for (int q = 0; q < 6; ++q) rs += std::abs(K(g, q)) * hh[tsp[q]];
      hp[sp[g]] = std::max(hp[sp[g]], rs);
    }
    Kernel m = substitute(d, K, tsp);
    double bm = kernel_norm(d, hp);
    if (bm > 0) matrix = std::max(matrix, kernel_norm(m, hh) / bm - 1);

    // partial integral over the (Psi, Psibar) block, weight 1 on the block
    std::vector<int> ps = {0, 0, 1, 1, 1, 1};
    Kernel pe = random_kernel(rng, 6, 6, 0.4, ps);
    Kernel pi = partial_integral(pe, PairBlock{2, 2});
    double bp = kernel_norm(pe, std::vector<double>{h, 1.0});
    if (bp > 0) partial = std::max(partial, kernel_norm(pi, std::vector<double>{h, 1.0}) / bp - 1);
  }
  check(r, c, "submultiplicativity", "kernel product norm bound", std::max(0.0, sub), 1e-12);
  check(r, c, "product_vs_bruteforce", "kernel product", prod, 1e-12);
  check(r, c, "shift_bound", "shifted kernel norm bound", std::max(0.0, shift), 1e-12);
  check(r, c, "dressed_composition_bound", "dressed field norm bound", std::max(0.0, dressed), 1e-12);
  check(r, c, "dressed_vs_substitution", "dressed field composition", dressed_oracle, 1e-12);
  check(r, c, "matrix_composition_bound", "operator block norm bound", std::max(0.0, matrix), 1e-12);
  check(r, c, "partial_integral_bound", "partial integral norm bound", std::max(0.0, partial), 1e-12);

  double wick = 0;
  for (int n = 1; n <= 4; ++n) {
    PairBlock b{0, n};
    for (int t = 0; t < 20; ++t) {
      MatC D = rng.cmat(n, n) + 2.0 * MatC::Identity(n, n);
      Kernel e = random_kernel(rng, 2 * n, 2 * n, 0.5);
      cd a = gaussian_integral(e, b, D.inverse()), top = top_form_ratio(e, b, D);
      wick = std::max(wick, std::abs(a - top) / std::max(1.0, std::abs(top)));
    }
  }
  check(r, c, "wick_vs_top_form", "Wick determinant formula", wick, 1e-12);
}

// ---------------------------------------------------------------- 11

Table decay_table(const std::string& name, const DecayFit& f) {
  Table t{name, {"d", "abs_kernel", "gamma"}, {}};
  for (std::size_t d = 0; d < f.profile.size(); ++d) t.rows.push_back({std::to_string(d), fmt(f.profile[d]), fmt(f.gamma)});
  return t;
}

void s_walks(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 11));
  {
    Lattice lat(c.L, 2, 0, 3);
    SpMatC D = dirac_sparse(lat, VecC::Zero(lat.nbonds(0)), 1.0, 1.0);
    WalkExpansion w(lat, D, 4, 2);
    VecC f = rng.cvec(int(D.rows()));
    ResidualStudy rs = walk_residuals(w, f, 8);
    Table t{"walk_residuals", {"n", "residual", "ratio"}, {}};
    for (std::size_t n = 0; n < rs.residual.size(); ++n)
      t.rows.push_back({std::to_string(n), fmt(rs.residual[n]), n < rs.ratio.size() ? fmt(rs.ratio[n]) : ""});
    r.tables.push_back(t);
    bound(r, "walk_residual_ratio_below_1", "random walk convergence", rs.max_ratio, 1.0 - 1e-9);
    check(r, c, "walk_parametrix", "random walk parametrix", w.parametrix_residual(f), 1e-12);
  }
  {
    // locality of the pieces S(X) f: bonds outside X do not move them
    Lattice lat(c.L, 3, 0, 3);
    VecC A = VecC::Zero(lat.nbonds(0));
    WalkExpansion w(lat, scalar_sparse(lat, A, 1.0, 1.0), 1, 2);
    int ns = lat.nsites(0);
    VecC f = VecC::Zero(ns);
    f[lat.index(0, {4, 4, 4})] = cd(1.0, 0.5);
    auto P = w.pieces(f, 2);
    const Polymer* big = nullptr;
    for (const auto& [X, v] : P)
      if (!big || X.size() > big->size()) big = &X;
    std::vector<char> inX(lat.ncubes(), 0);
    for (int q : *big) inX[q] = 1;
    VecC A2 = A;
    std::set<int> touched;
    for (int x = 0; x < ns; ++x) {
      int cx = lat.cube_of(lat.coord(0, x));
      if (inX[cx]) continue;
      for (int mu = 0; mu < 3; ++mu) {
        int y = lat.shift(0, x, mu, 1);
        int cy = lat.cube_of(lat.coord(0, y));
        if (inX[cy]) continue;
        A2[lat.bond(0, x, mu)] = rng.uniform();
        touched.insert(cx);
        touched.insert(cy);
      }
    }
    WalkExpansion w2(lat, scalar_sparse(lat, A2, 1.0, 1.0), 1, 2);
    auto P2 = w2.pieces(f, 2);
    double change = 0;
    int tested = 0;
    for (const auto& [X, v] : P) {
      bool meets = false;
      for (int q : X) meets = meets || touched.count(q);
      if (meets) continue;
      ++tested;
      change = std::max(change, (P2.at(X) - v).norm() / std::max(v.norm(), 1e-300));
    }
    check(r, c, "piece_locality", "random walk pieces/locality", change, 1e-12);
    check_ge(r, "pieces_tested_for_locality", "random walk pieces/locality", tested, 1);
    PieceDecay pd = piece_decay(lat, P, f.cwiseAbs().maxCoeff());
    Table t{"piece_decay", {"tree_distance", "size"}, {}};
    for (std::size_t i = 0; i < pd.dist.size(); ++i) t.rows.push_back({fmt(pd.dist[i]), fmt(pd.size[i])});
    r.tables.push_back(t);
  }
  {
    Lattice lat(c.L, 2, 1);
    FermionKit kit = make_kit(c, rng, lat, 0.5);
    MatC S = kit.Sk();
    int ns = lat.nsites(0);
    MatR B(ns, ns);
    for (int x = 0; x < ns; ++x)
      for (int y = 0; y < ns; ++y) B(x, y) = S.block<4, 4>(4 * x, 4 * y).norm();
    auto pos = site_positions(lat, 0);
    DecayFit fs = decay_fit(B, pos, pos, lat, lat.stride(1));
    r.tables.push_back(decay_table("decay_Sk", fs));
    check_ge(r, "decay_gamma_Sk", "propagator decay", fs.gamma, 1e-12);

    GaugeKit gk(lat);
    auto bp = bond_positions(lat, 0);
    DecayFit fg = decay_fit(gk.Gk, bp, bp, lat, lat.stride(1));
    r.tables.push_back(decay_table("decay_Gk", fg));
    check_ge(r, "decay_gamma_Gk", "gauge Green's function decay", fg.gamma, 1e-12);
  }
}

// ---------------------------------------------------------------- 12 to 15

Polymer square_polymer(const Lattice& lat) {
  for (const auto& Y : polymers_containing(lat, 0, 4)) {
    if (Y.size() != 4) continue;
    std::set<int> a0, a1, a2;
    for (int q : Y) {
      auto cc = lat.cube_center(q);
      a0.insert(cc[0]);
      a1.insert(cc[1]);
      a2.insert(cc[2]);
    }
    if (a0.size() == 2 && a1.size() == 2 && a2.size() == 1) return Y;
  }
  throw DomainError("no square polymer");
}

void s_extraction(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 12));
  Lattice lat(c.L, 2, 0, 1);
  ToyParams tp;
  tp.large_line = 5;
  tp.e = 0.3;
  PolymerFunction E = toy_family(lat, tp);
  ExtractionResult ex = extract(E);
  VecC A = real_field(rng, lat.nbonds(0), 1.0);
  check(r, c, "decomposition_global", "normalization/global decomposition", decomposition_residual(E, ex, A), 1e-12);
  std::vector<char> lam(lat.ncubes(), 0);
  for (int q = 0; q < lat.ncubes(); ++q) lam[q] = lat.cube_center(q)[0] < 4;
  RestrictedCheck rc = restricted_decomposition_check(E, ex, lam, A);
  check(r, c, "decomposition_restricted", "normalization/restricted decomposition", rc.residual, 1e-12);
  bound(r, "boundary_terms_only_on_crossing", "normalization/restricted decomposition", rc.nonzero_outside_cross, 0);
  check(r, c, "m_scalar", "normalization/m scalar", ex.m_nonscalar, 1e-12);
  check(r, c, "eps_m_real", "normalization/real coefficients", ex.m_imag, 1e-12);
  ExtractionResult ex2 = extract(ex.RE);
  check(r, c, "reextract_eps_zero", "normalization/RE normalized", std::abs(ex2.eps_c), 1e-12);
  check(r, c, "reextract_m_zero", "normalization/RE normalized", ex2.mmat.norm(), 1e-12);

  PolymerFunction En = adjust_natural(ex.RE, 0.5);
  Polymer X = square_polymer(lat);
  check(r, c, "adjustment_identity", "adjustment rewrite", adjust_identity_residual(ex.RE, En, X, A, 0.5), 1e-10);
  // E^nat_20(X, 0) vanishes on the small polymers that extraction normalized
  double nat0 = 0;
  const Polymer* Y = nullptr;
  for (const auto& Z : E.support) {
    if (!is_small(lat, Z)) continue;
    if (!Y || Z.size() > Y->size()) Y = &Z;
    nat0 = std::max(nat0, adjust_bounds(ex.RE, En, Z, A, c.L).nat20_at_zero);
  }
  check(r, c, "adjusted_E20_vanishes_at_0", "adjustment rewrite", nat0, 1e-12);
  check(r, c, "adjustment_identity_support", "adjustment rewrite", adjust_identity_residual(ex.RE, En, *Y, A, 0.5), 1e-10);
  AdjustBounds ab = adjust_bounds(ex.RE, En, *Y, A, c.L);
  Table t{"adjust_bounds", {"c20", "c11", "c02"}, {{fmt(ab.c20), fmt(ab.c11), fmt(ab.c02)}}};
  r.tables.push_back(t);

  VecR lambda = rng.vec(lat.nsites(0));
  VecC f = real_field(rng, lat.nbonds(0), 1.0);
  WardCheck w = ward_check(E, X, A, lambda, f);
  check(r, c, "ward_finite_difference", "Ward identity", w.derivative, 1e-8 * w.scale);
  ChargeCheck cc = charge_check(E, X, A, f);
  check(r, c, "charge_even", "charge conjugation of E00", cc.even, 1e-12);
  check(r, c, "norm_gauge_invariance", "gauge invariant norms", norm_gauge_residual(En, X, A, lambda), 1e-12);
  check(r, c, "polymer_locality", "polymer locality", locality_residual(E, X, A, rng), 1e-12);
}

void s_scaling(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 13));
  Lattice lat(c.L, 2, 0, 1), next(c.L, 2, 1, 1);
  ToyParams tp;
  tp.e = 0.1;
  tp.cap = 2;
  tp.decay = 2.0;
  PolymerFunction E = toy_family(lat, tp);
  ExtractionResult ex = extract(E);
  PolymerFunction En = adjust_natural(ex.RE, 0.5);
  PolymerFunction LE = reblock_scale(En, next, 0.5);
  PolymerFunction LEraw = reblock_scale(E, next, 0.5);
  NormParams p0;
  p0.ek = 0.1;
  p0.samples = 2;
  p0.kappa = 1.0;
  p0.seed = c.seed;
  NormParams p1 = p0;
  p1.ek = 0.1 * std::sqrt(double(c.L));
  double n0 = polymer_norm(En, p0).value, n1 = polymer_norm(LE, p1).value;
  double m0 = polymer_norm(E, p0).value, m1 = polymer_norm(LEraw, p1).value;
  double L = c.L, target = std::pow(L, -0.25 + 2 * 0.01);
  double improved = n1 / n0, crude = m1 / m0;
  Table t{"scaling", {"norm_nat", "norm_L_nat", "improved_ratio", "L^(-1/4+2eps)", "constant", "crude_ratio", "crude/L^3"},
          {{fmt(n0), fmt(n1), fmt(improved), fmt(target), fmt(improved / target), fmt(crude), fmt(crude / (L * L * L))}}};
  r.tables.push_back(t);
  bound(r, "improved_contraction_constant", "improved scaling bound", improved / target, 2.0);
  bound(r, "crude_bound_constant", "crude scaling bound", crude / (L * L * L), 1.0);
  VecC A = real_field(rng, lat.nbonds(0), 0.5);
  double sp = 0;
  for (std::size_t i = 0; i < En.support.size(); i += std::max<std::size_t>(1, En.support.size() / 8))
    sp = std::max(sp, kernel_scaling_residual(En, En.support[i], A, 0.5, c.L));
  check(r, c, "kernel_scaling_identity", "kernel scaling identity", sp, 1e-12);
}

void s_interpolation(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 14));
  double worst = 0, quad = 0;
  std::vector<Polymer> base = {{0}, {1, 2}, {2, 3, 4}};
  InterpFamily fam = random_linear_family(5, base, rng, 0.3);
  for (int t = 0; t < 5; ++t) {
    if (t) fam = random_linear_family(5, base, rng, 0.3);
    auto loc = localize_by_interpolation(fam);
    cd s = 0;
    for (const auto& [Y, v] : loc) s += v;
    cd tot = interpolation_total(fam);
    worst = std::max(worst, std::abs(s - tot) / std::abs(tot));
    auto q = localize_by_quadrature(fam, 0.5, 4, 4);
    for (const auto& [Y, v] : loc) quad = std::max(quad, std::abs(v - q[Y]) / std::abs(tot));
  }
  check(r, c, "sum_of_localized_pieces", "interpolation localization", worst, 1e-12);
  check(r, c, "quadrature_vs_exact", "interpolation localization/quadrature", quad, 1e-10);
  CauchyBound cb = cauchy_bound(fam, 0, {1, 3}, 0.8);
  bound(r, "cauchy_derivative_bound", "Cauchy bound", cb.derivative, cb.bound);
}

void s_mayer(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 15));
  Lattice lat(c.L, 2, 0, 1);
  auto cub = [&](int a, int b, int d) { return lat.cube_of({a, b, d}); };
  std::vector<Polymer> P = {{cub(3, 3, 3), cub(4, 3, 3)}, {cub(4, 3, 3), cub(4, 4, 3)}, {cub(5, 3, 3)},
                            {cub(3, 4, 3), cub(3, 5, 3)}};
  for (auto& X : P) std::sort(X.begin(), X.end());
  std::vector<cd> w;
  for (int i = 0; i < 4; ++i) w.push_back(0.01 * rng.cnormal());
  MayerResult mn = mayer_cluster(lat, P, w, 8);
  check(r, c, "numeric_weights_exp_vs_sum", "cluster expansion", mn.rel, 1e-10);
  GrassmannWeights gw = fluctuation_weights(P, 0.01, rng);
  MayerResult mg = mayer_cluster(lat, P, gw, 8);
  check(r, c, "grassmann_4_exp_vs_bruteforce", "cluster expansion", mg.rel, 1e-10);
  check(r, c, "grassmann_4_factorization", "cluster expansion/factorization", mg.factorization, 1e-12);
  check(r, c, "grassmann_4_ursell_vs_mobius", "cluster expansion/E# two routes", mg.ursell_vs_mobius, 1e-10);
  P.push_back({cub(7, 7, 7)});
  P.push_back({cub(6, 5, 3), cub(6, 4, 3)});
  for (auto& X : P) std::sort(X.begin(), X.end());
  GrassmannWeights gw6 = fluctuation_weights(P, 0.01, rng);
  MayerResult m6 = mayer_cluster(lat, P, gw6, 7);
  check(r, c, "grassmann_6_exp_vs_bruteforce", "cluster expansion", m6.rel, 1e-10);
  Table t{"mayer_orders", {"order", "size"}, {}};
  for (std::size_t n = 1; n < mg.order_size.size(); ++n) t.rows.push_back({std::to_string(n), fmt(mg.order_size[n])});
  r.tables.push_back(t);
}

// ---------------------------------------------------------------- 16 to 18

double termwise(const Kernel& a, const Kernel& b) {
  double s = 0, n = 0;
  Kernel d = a - b;
  for (const auto& [m, v] : d.c) s = std::max(s, std::abs(v));
  for (const auto& [m, v] : b.c) n = std::max(n, std::abs(v));
  return s / std::max(n, 1e-300);
}

void s_tinystep(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 16));
  Lattice lat(c.L, 1, 0, 1);
  FermionParams p;
  p.e = 1.0;
  p.mbar = c.mbar;
  p.b = c.b;
  TinyStep ts(lat, real_field(rng, lat.nbonds(0), 0.5), p);
  int ng = 2 * ts.n0;
  PairBlock b0 = ts.blk0();
  Kernel one = Kernel::constant(ng, 1.0);
  Kernel mi = mass_insertion(b0, ng);
  Kernel q = quartic_two_sites(b0, ng, 0, 5, 1, 2);
  check(r, c, "closed_vs_brute_F0_1", "exact averaging step", termwise(ts.closed_form(one), ts.brute_force(one)), 1e-10);
  check(r, c, "closed_vs_brute_mass", "exact averaging step", termwise(ts.closed_form(mi), ts.brute_force(mi)), 1e-10);
  check(r, c, "closed_vs_brute_quartic", "exact averaging step", termwise(ts.closed_form(q), ts.brute_force(q)), 1e-10);
  check(r, c, "normalization", "exact averaging step/normalization", ts.normalization_residual(mi), 1e-10);
  check(r, c, "delta_G_normalization", "exact averaging step/delta_G", delta_g_normalization_residual(3, 9.0, rng), 1e-12);
}

Table flow_table(const std::string& name, const FlowParams& p, const FlowSolution& s) {
  Table t{name, {"k", "e_k", "m_k", "eps_k", "norm_E_k", "ratio"}, {}};
  for (int k = 0; k <= p.K(); ++k)
    t.rows.push_back({std::to_string(k), fmt(flow_e(p, k)), fmt(s.xi.m[k]), fmt(s.energy.eps[k]), fmt(std::abs(s.xi.E[k])),
                      fmt(s.max_ratio)});
  return t;
}

void s_flow(SuiteResult& r, const RunConfig& c) {
  FlowParams p;
  p.L = c.L;
  p.N = 2;
  p.e = 0.1;
  p.tol = 1e-12;
  p.max_iter = 50;
  check(r, c, "schedule_e_k", "coupling schedule", schedule_residual(p), 1e-15);
  check(r, c, "energy_geometric_sum", "backward energy recursion", energy_geometric_residual(p, 0.3), 1e-14);

  StepMaps f = affine_maps(p, 0.01, c.seed);
  FlowSolution s = solve_flow(p, f, zero_state(p));
  Rng rng(suite_seed(c, 17));
  FlowSolution s2 = solve_flow(p, f, random_state(p, rng, 0.5));
  bound(r, "synthetic_converged", "contraction", s.converged() ? 0 : 1, 0);
  bound(r, "synthetic_iterations", "contraction", s.iterations, 50);
  bound(r, "synthetic_ratio", "contraction", s.max_ratio, 0.5);
  check(r, c, "synthetic_boundary", "boundary conditions", s.boundary, 1e-12);
  check(r, c, "two_initializations", "contraction/uniqueness", flow_distance(p, s.xi, s2.xi), 2 * p.tol);
  check(r, c, "synthetic_vs_closed_form", "contraction/fixed point", flow_distance(p, s.xi, affine_fixed_point(p, f)), 1e-12);
  r.tables.push_back(flow_table("flow_synthetic", p, s));

  FlowParams q = p;
  q.N = 50;
  FlowSolution ss = solve_flow(q, surrogate_maps(q, SurrogateParams{}), zero_state(q));
  bound(r, "surrogate_K50_converged", "contraction", ss.converged() ? 0 : 1, 0);
  bound(r, "surrogate_in_B1", "B1 bounds", ss.max_norm, 1 - 1e-12);
  bound(r, "surrogate_energy_bound", "energy bound", ss.energy.bound_ratio, 1.0);
  r.tables.push_back(flow_table("flow_surrogate", q, ss));

  double t0 = now();
  ToyFlowParams tp;
  tp.fp = p;
  tp.fp.e = 0.05;
  tp.seed = c.seed;
  ToyFlowResult toy = toy_flow(tp, std::vector<double>(p.K() + 1, 0.0));
  bound(r, "toy_converged", "contraction/toy", toy.sol.converged() ? 0 : 1, 0);
  bound(r, "toy_in_B1", "B1 bounds/toy", toy.sol.max_norm, 1 - 1e-12);
  check(r, c, "toy_boundary", "boundary conditions/toy", toy.sol.boundary, 1e-12);
  bound(r, "toy_energy_bound", "energy bound/toy", toy.sol.energy.bound_ratio, 1.0);
  timing(r, c, "toy_runtime", now() - t0, 300);
  r.tables.push_back(flow_table("flow_toy", tp.fp, toy.sol));
  Table it{"flow_toy_iterations", {"iteration", "distance", "ratio", "norm"}, {}};
  for (const auto& h : toy.sol.history) it.rows.push_back({std::to_string(h.it), fmt(h.dist), fmt(h.ratio), fmt(h.norm)});
  r.tables.push_back(it);
}

void s_symmetry(SuiteResult& r, const RunConfig& c) {
  Rng rng(suite_seed(c, 18));
  Lattice lat(c.L, 2, 1);
  FermionParams p;
  p.e = c.e;
  p.mbar = c.mbar;
  p.b = c.b;
  SymmetryReport s = symmetry_suite(lat, rng.vec(lat.nbonds(0), 0.8), rng.vec(lat.nsites(0), 1.0), p, rng);
  check(r, c, "gauge_covariance_D", "gauge covariance", s.gauge_D, 1e-12);
  check(r, c, "gauge_covariance_Qk", "gauge covariance", s.gauge_Q, 1e-12);
  check(r, c, "gauge_covariance_Sk", "gauge covariance", s.gauge_S, 1e-12);
  check(r, c, "gauge_covariance_Dk", "gauge covariance", s.gauge_Dk, 1e-12);
  check(r, c, "charge_conjugation_D", "charge conjugation", s.charge_D, 1e-12);
  check(r, c, "charge_conjugation_Sk", "charge conjugation", s.charge_S, 1e-12);
  check(r, c, "charge_conjugation_Dk", "charge conjugation", s.charge_Dk, 1e-12);
  check(r, c, "rotation_D", "lattice symmetry", s.rot_D, 1e-12);
  check(r, c, "rotation_Sk", "lattice symmetry", s.rot_S, 1e-12);
  check(r, c, "reflection_D", "lattice symmetry", s.refl_D, 1e-12);
  check(r, c, "reflection_Sk", "lattice symmetry", s.refl_S, 1e-12);
  check(r, c, "det_realness", "real determinant", s.det_imag, 1e-12);
}

const std::vector<SuiteDef>& defs() {
  static const std::vector<SuiteDef> d = {
      {"identities", 1, s_identities},   {"gamma", 2, s_gamma},
      {"contour", 3, s_contour},         {"deltaz", 4, s_deltaz},
      {"bk", 5, s_bk},                   {"compose", 6, s_compose},
      {"conditioning", 7, s_appc},       {"qt-bound", 8, s_appd},
      {"gaussian-split", 9, s_appe},     {"grassmann", 10, s_grassmann},
      {"walks", 11, s_walks},            {"extraction", 12, s_extraction},
      {"scaling", 13, s_scaling},        {"interpolation", 14, s_interpolation},
      {"mayer", 15, s_mayer},            {"tiny-step", 16, s_tinystep},
      {"flow", 17, s_flow},              {"symmetry", 18, s_symmetry},
  };
  return d;
}

}  // namespace

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> n = [] {
    std::vector<std::string> v;
    for (const auto& d : defs()) v.push_back(d.name);
    return v;
  }();
  return n;
}

bool is_suite(const std::string& name) {
  for (const auto& d : defs())
    if (d.name == name) return true;
  return false;
}

int suite_criterion(const std::string& name) {
  for (const auto& d : defs())
    if (d.name == name) return d.criterion;
  return 0;
}

SuiteResult run_suite(const std::string& name, const RunConfig& cfg) {
  for (const auto& d : defs()) {
    if (d.name != name) continue;
    SuiteResult r;
    r.suite = name;
    r.criterion = d.criterion;
    try {
      d.run(r, cfg);
    } catch (const std::exception& ex) {
      r.checks.push_back({"exception: " + std::string(ex.what()), "", 1, 0, "<=", false});
    }
    return r;
  }
  throw ConfigError("unknown suite '" + name + "'");
}

std::vector<SuiteResult> run_suites(const RunConfig& cfg) {
  cfg.validate();
  std::vector<SuiteResult> out(cfg.suites.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.suites.size(); i = next++) out[i] = run_suite(cfg.suites[i], cfg);
  };
  int nt = std::min<int>(cfg.threads, int(cfg.suites.size()));
  if (nt <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

std::string report_json(const std::vector<SuiteResult>& results) {
  nlohmann::ordered_json j;
  bool all = true;
  j["suites"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json s;
    s["suite"] = r.suite;
    s["criterion"] = r.criterion;
    s["pass"] = r.pass();
    s["checks"] = nlohmann::ordered_json::array();
    for (const auto& c : r.checks) {
      nlohmann::ordered_json k;
      k["name"] = c.name;
      k["anchor"] = c.anchor;
      k["residual"] = c.residual;
      k["tolerance"] = c.tolerance;
      k["relation"] = c.relation;
      k["pass"] = c.pass;
      s["checks"].push_back(k);
    }
    all = all && r.pass();
    j["suites"].push_back(s);
  }
  j["pass"] = all;
  return j.dump(2) + "\n";
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) o += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return o + "\"";
}

}  // namespace

std::string checks_csv(const SuiteResult& r) {
  std::ostringstream o;
  o << "name,anchor,residual,tolerance,relation,pass\n";
  for (const auto& c : r.checks)
    o << csv_field(c.name) << ',' << csv_field(c.anchor) << ',' << fmt(c.residual) << ',' << fmt(c.tolerance) << ','
      << c.relation << ',' << (c.pass ? "true" : "false") << '\n';
  return o.str();
}

std::string table_csv(const Table& t) {
  std::ostringstream o;
  for (std::size_t i = 0; i < t.header.size(); ++i) o << (i ? "," : "") << csv_field(t.header[i]);
  o << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) o << (i ? "," : "") << csv_field(row[i]);
    o << '\n';
  }
  return o.str();
}

std::vector<std::string> write_tables(const std::vector<SuiteResult>& results, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  auto put = [&](const std::string& name, const std::string& text) {
    std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    paths.push_back(path);
  };
  if (results.empty()) put("checks.csv", "suite,name,anchor,residual,tolerance,relation,pass\n");
  for (const auto& r : results) {
    put(r.suite + ".csv", checks_csv(r));
    for (const auto& t : r.tables) put(r.suite + "_" + t.name + ".csv", table_csv(t));
  }
  return paths;
}

}  // namespace rgqed3
