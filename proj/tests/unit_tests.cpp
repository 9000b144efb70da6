#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "rgqed3/flow.hpp"
#include "rgqed3/gauge.hpp"
#include "rgqed3/polymer.hpp"
#include "rgqed3/rgstep.hpp"
#include "rgqed3/suites.hpp"

using namespace rgqed3;

TEST_CASE("lattice counts") {
  Lattice a(3, 1, 0), b(3, 1, 1), c(3, 2, 0);
  CHECK(a.nsites(0) == 27);
  CHECK(a.nbonds(0) == 81);
  CHECK(b.nsites(0) == 27);
  CHECK(b.spacing(0) == doctest::Approx(1.0 / 3));
  CHECK(c.nsites(0) == 729);
  CHECK(c.nsites(1) == 27);
}

TEST_CASE("standard paths of a diagonal displacement") {
  Lattice lat(3, 2, 0);
  auto paths = lat.standard_paths(0, {0, 0, 0}, {1, 1, 0});
  REQUIRE(paths.size() == 6);
  std::set<std::vector<std::pair<int, int>>> distinct(paths.begin(), paths.end());
  CHECK(distinct.size() == 2);
  auto one = lat.standard_paths(0, {0, 0, 0}, {1, 0, 0});
  for (const auto& p : one) CHECK(p.size() == 1);
}

TEST_CASE("tree distance") {
  Lattice lat(3, 2, 0, 1);
  int a = lat.cube_of({0, 0, 0}), b = lat.cube_of({1, 0, 0}), c = lat.cube_of({1, 1, 0});
  Polymer one{a}, two{a, b}, ell{a, b, c};
  std::sort(two.begin(), two.end());
  std::sort(ell.begin(), ell.end());
  CHECK(tree_distance(lat, one) == 0);
  CHECK(tree_distance(lat, two) == 1);
  CHECK(tree_distance(lat, ell) == 2);
}

TEST_CASE("b_k sequence") {
  auto bs = b_sequence(1.0, 3, 30);
  CHECK(bs[0] == 1.0);
  CHECK(std::abs(bs[1] - 0.75) < 1e-15);
  CHECK(std::abs(bs[29] - 2.0 / 3) < 1e-14);
  for (int k = 1; k <= 30; ++k) CHECK(std::abs(bs[k - 1] - b_closed(1.0, 3, k)) <= 1e-14 * b_closed(1.0, 3, k));
}

TEST_CASE("contour log det on a diagonal matrix") {
  MatC T = MatC::Zero(2, 2);
  T(0, 0) = 2;
  T(1, 1) = -3;
  cd v = logdet_selfadjoint(T, 1.0).value;
  CHECK(std::abs(std::exp(v) - cd(-6.0)) < 1e-8 * 6);
  CHECK(std::abs(logdet_selfadjoint(MatC::Identity(5, 5), 1.0).value) < 1e-12);
  CHECK_THROWS_AS(logdet_selfadjoint(MatC::Zero(2, 2), 1.0), DomainError);
}

TEST_CASE("grassmann basics") {
  Kernel g = Kernel::generator(3, 1, 1.0);
  CHECK(kernel_norm(g, 0.7) == doctest::Approx(0.7));
  CHECK(kernel_norm(Kernel::constant(3, cd(0, 2)), 0.7) == doctest::Approx(2.0));
  CHECK(product(g, g).c.empty());
  Kernel h = Kernel::generator(3, 2, 1.0);
  Kernel s = product(g, h) + product(h, g);
  s.prune();
  CHECK(s.c.empty());
  // <Psi(0) Psibar(1)> = Gamma(0, 1)
  PairBlock b{0, 2};
  MatC G(2, 2);
  G << 0.3, cd(0.1, 0.2), -0.4, 1.1;
  Kernel e = product(Kernel::generator(4, b.psi(0)), Kernel::generator(4, b.psibar(1)));
  CHECK(std::abs(gaussian_integral(e, b, G) - G(0, 1)) < 1e-15);
  // identity covariance picks I = Ibar only
  Kernel f = product(Kernel::generator(4, b.psi(0)), Kernel::generator(4, b.psibar(0)));
  CHECK(std::abs(gaussian_integral(f, b, MatC::Identity(2, 2)) - 1.0) < 1e-15);
  CHECK(std::abs(gaussian_integral(e, b, MatC::Identity(2, 2))) < 1e-15);
}

TEST_CASE("gaussian second moment") {
  Rng rng(3);
  int n = 12;
  MatR B(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) B(i, j) = rng.uniform();
  MatR T = B * B.transpose() + n * MatR::Identity(n, n);
  std::vector<int> lam = {1, 4, 5, 9};
  QuadPoly F;
  F.c = 1;
  F.g = VecR::Zero(4);
  F.Hq = MatR::Zero(4, 4);
  auto one = conditioning_split(T, lam, F);
  CHECK(std::abs(one.direct - 1) < 1e-12);
  CHECK(std::abs(one.form1 - 1) < 1e-12);
  CHECK(std::abs(one.form2 - 1) < 1e-12);
  F.c = 0;
  F.Hq(0, 2) = 1;
  auto two = conditioning_split(T, lam, F);
  double exact = T.inverse()(1, 5);
  CHECK(std::abs(two.direct - exact) < 1e-12);
  CHECK(std::abs(two.form1 - exact) < 1e-12);
  CHECK(std::abs(two.form2 - exact) < 1e-12);
}

TEST_CASE("QT lower bound infimum at N = 1") {
  Lattice lat(3, 1, 0);
  GaugeKit kit(lat);
  QTRatios q = QT_ratio_infimum(kit);
  CHECK(q.plain == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(q.projected == doctest::Approx(0.679).epsilon(1e-3));
  CHECK(q.projected >= 1.0 / 3);
}

TEST_CASE("extraction of a constant family") {
  Lattice lat(3, 2, 0, 1);
  auto C = constant_family(lat, 3, 0.7);
  auto ex = extract(C);
  // 1 + 6 / 2 + 45 / 3 polymers of at most three cubes through a cube
  CHECK(std::abs(ex.eps + 19 * 0.7) < 1e-12);
  VecC zero = VecC::Zero(lat.nbonds(0));
  double re = 0;
  for (const auto& X : C.support)
    for (const auto& [m, v] : ex.RE.eval(X, zero).c) re = std::max(re, std::abs(v));
  CHECK(re < 1e-14);
}

TEST_CASE("norm of a mass insertion") {
  Lattice lat(3, 2, 0, 1);
  auto MI = mass_insertion_family(lat, 5, 0.3);
  NormParams np;
  np.ek = 0.1;
  np.kappa = 2;
  auto h = h_pair(0.1, 0.01);
  CHECK(polymer_norm(MI, np).value == doctest::Approx(4 * 0.3 * h.first * h.first).epsilon(1e-12));
}

TEST_CASE("averaging sweep: OpenMP and serial agree") {
  Lattice lat(3, 1, 1);
  AveragingSweep a = averaging_sweep(lat, 1, 6, 5, 1.0, true), b = averaging_sweep(lat, 1, 6, 5, 1.0, false);
  CHECK(a.qqt == b.qqt);
  CHECK(a.pp == b.pp);
  CHECK(a.chain == b.chain);
  CHECK(a.max() < 1e-12);
}

TEST_CASE("flow: zero forcing and affine forcing") {
  FlowParams p;
  p.N = 4;
  StepMaps z;
  z.name = "zero";
  z.eps_of = z.m_of = z.LR = [](int, double) { return 0.0; };
  z.Edet = z.eps0 = [](int) { return 0.0; };
  z.Esharp = [](int, double, double) { return 0.0; };
  FlowSolution s = solve_flow(p, z, zero_state(p));
  CHECK(s.converged());
  CHECK(s.iterations == 1);
  for (double e : s.energy.eps) CHECK(e == 0.0);
  CHECK(s.energy.bare_eps == 0.0);
  CHECK(s.energy.bare_m == 0.0);

  CHECK(schedule_residual(p) < 1e-15);
  CHECK(energy_geometric_residual(p, 0.3) < 1e-14);

  // the L^{-1} m shift alone contracts by L^{-1} (e_k / e_{k+1})^{-3/4+8eps}
  double shift = std::pow(double(p.L), -1 + 0.5 * (0.75 - 8 * p.eps));
  StepMaps f = affine_maps(p, 0.25, 3);
  FlowSolution a = solve_flow(p, f, zero_state(p));
  CHECK(a.converged());
  CHECK(a.max_ratio <= shift + 0.25);
  CHECK(a.boundary <= 1e-12);
  CHECK(flow_distance(p, a.xi, affine_fixed_point(p, f)) < 1e-11);
}

TEST_CASE("config validation") {
  RunConfig c = config_from_json(R"({"L": 3, "N": 2, "suites": ["bk"], "seed": 9})");
  CHECK(c.seed == 9);
  CHECK_NOTHROW(c.validate());
  CHECK_THROWS_AS(config_from_json(R"({"Q": 1})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"L": "three"})"), ConfigError);
  RunConfig bad;
  bad.L = 4;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("L must be odd"), ConfigError);
  RunConfig unk;
  unk.suites = {"nope"};
  CHECK_THROWS_WITH_AS(unk.validate(), doctest::Contains("unknown suite 'nope'"), ConfigError);
}

TEST_CASE("reports and tables") {
  RunConfig c;
  c.suites = {};
  auto empty = run_suites(c);
  CHECK(empty.empty());
  std::string j = report_json(empty);
  CHECK(j.find("\"suites\": []") != std::string::npos);
  CHECK(j.find("\"pass\": true") != std::string::npos);
  Table t{"x", {"d", "abs_kernel", "gamma"}, {}};
  CHECK(table_csv(t) == "d,abs_kernel,gamma\n");
  SuiteResult r;
  r.suite = "s";
  CHECK(checks_csv(r) == "name,anchor,residual,tolerance,relation,pass\n");
}

TEST_CASE("suite reports are deterministic") {
  RunConfig c;
  c.suites = {"grassmann", "interpolation", "bk"};
  c.threads = 2;
  std::string a = report_json(run_suites(c)), b = report_json(run_suites(c));
  CHECK(a == b);
  c.seed = 2;
  CHECK(report_json(run_suites(c)) != a);
}
