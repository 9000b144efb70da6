#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "rgqed3/flow.hpp"
#include "rgqed3/gauge.hpp"
#include "rgqed3/polymer.hpp"
#include "rgqed3/rgstep.hpp"
#include "rgqed3/suites.hpp"
#include "rgqed3/walk.hpp"

using namespace rgqed3;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void add(SuiteResult& r, const std::string& name, double residual, double tol, const std::string& rel = "<=") {
  bool pass = rel == "<=" ? residual <= tol : residual >= tol;
  r.checks.push_back({name, r.suite, residual, tol, rel, std::isfinite(residual) && pass});
}

int emit(const SuiteResult& r, const std::string& out) {
  std::cout << report_json({r});
  if (!out.empty()) {
    write_tables({r}, out);
    std::ofstream(std::filesystem::path(out) / (r.suite + ".json")) << report_json({r});
  }
  return r.pass() ? 0 : 1;
}

FermionParams fparams(double e, double mbar, double b) {
  FermionParams p;
  p.e = e;
  p.mbar = mbar;
  p.b = b;
  return p;
}

struct Common {
  int L = 3, N = 2, k = 1, M = 3;
  std::uint64_t seed = 1;
  std::string out;
};

void common_flags(CLI::App* app, Common& c) {
  app->add_option("--L", c.L, "block side");
  app->add_option("--N", c.N, "number of levels");
  app->add_option("--k", c.k, "level");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output directory");
}

int fermion_verify(const Common& c, int draws, double tol) {
  SuiteResult r;
  r.suite = "fermion_verify";
  Lattice lat(c.L, c.N, c.k);
  if (c.k >= 1) {
    AveragingSweep s = averaging_sweep(lat, c.k, draws, c.seed, 1.0);
    add(r, "QQT_identity", s.qqt, tol);
    add(r, "P_squared", s.pp, tol);
    add(r, "Qk_composition", s.chain, tol);
  }
  if (c.k >= 1 && c.k < c.N) {
    Rng rng(c.seed);
    FermionKit kit(lat, rng.vec(lat.nbonds(0), 0.5).cast<cd>(), fparams(1.0, 0.2, 1.0));
    MatC P = kit.Pk();
    add(r, "Pk_squared", rel_err(P * P, P), tol);
    add(r, "Gamma_k_representation", rel_err(kit.Gamma_k(), kit.gamma_k_rhs()), std::max(tol, 1e-10));
  }
  add(r, "clifford_relations", gamma_algebra_residual(), tol);
  return emit(r, c.out);
}

int rgstep_verify(const Common& c, const std::string& which) {
  SuiteResult r;
  r.suite = "rgstep_" + which;
  Rng rng(c.seed);
  if (which == "bseq") {
    auto bs = b_sequence(1.0, c.L, 30);
    Table t{"bseq", {"k", "b_k", "closed"}, {}};
    double w = 0;
    for (int k = 1; k <= 30; ++k) {
      double cl = b_closed(1.0, c.L, k);
      w = std::max(w, std::abs(bs[k - 1] - cl) / cl);
      std::ostringstream a, b;
      a.precision(17);
      b.precision(17);
      a << bs[k - 1];
      b << cl;
      t.rows.push_back({std::to_string(k), a.str(), b.str()});
    }
    add(r, "recursion_vs_closed", w, 1e-14);
    r.tables.push_back(t);
  } else if (which == "logdet") {
    RunConfig cfg;
    cfg.seed = c.seed;
    cfg.L = c.L;
    SuiteResult s = run_suite("contour", cfg);
    s.suite = r.suite;
    return emit(s, c.out);
  } else if (which == "exact") {
    Lattice lat(c.L, 1, 0, 1);
    TinyStep ts(lat, rng.vec(lat.nbonds(0), 0.5).cast<cd>(), fparams(1.0, 0.2, 1.0));
    Kernel mi = mass_insertion(ts.blk0(), 2 * ts.n0);
    Kernel d = ts.closed_form(mi) - ts.brute_force(mi);
    double s = 0;
    for (const auto& [m, v] : d.c) s = std::max(s, std::abs(v));
    add(r, "closed_vs_brute_mass", s, 1e-10);
    add(r, "normalization", ts.normalization_residual(mi), 1e-10);
  } else {
    Lattice lat(c.L, c.N, c.k, 1);
    FermionKit kit(lat, rng.vec(lat.nbonds(0), 0.5).cast<cd>(), fparams(1.0, 0.2, 1.0));
    if (which == "compose") {
      add(r, "composition_max", compose_check(kit, rng).max(), 1e-10);
    } else if (which == "deltaz") {
      add(r, "deltaZ_formula_vs_det", delta_z(kit, 1e-10).rel, 1e-6);
      add(r, "volume_factor", volume_factor_residual(kit), 1e-10);
    } else {
      throw CLI::ValidationError("--which", "unknown check '" + which + "'");
    }
  }
  return emit(r, c.out);
}

int polymer_cmd(const std::string& what, const Common& c) {
  RunConfig cfg;
  cfg.seed = c.seed;
  cfg.L = c.L;
  std::string suite = what == "walk" ? "walks" : what == "extract" ? "extraction" : what == "scale" ? "scaling" : "mayer";
  SuiteResult r = run_suite(suite, cfg);
  r.suite = "polymer_" + what;
  if (what == "extract" && !c.out.empty()) {
    Lattice lat(c.L, 2, 0, 1);
    ToyParams tp;
    tp.e = 0.3;
    PolymerFunction E = toy_family(lat, tp);
    ExtractionResult ex = extract(E);
    VecC A = VecC::Zero(lat.nbonds(0));
    dump_polymer_function(E, A, (std::filesystem::path(c.out) / "E").string());
    dump_polymer_function(ex.RE, A, (std::filesystem::path(c.out) / "RE").string());
  }
  return emit(r, c.out);
}

int flow_solve(const Common& c, double e, const std::string& mode, double tol) {
  FlowParams p;
  p.L = c.L;
  p.N = c.N;
  p.e = e;
  p.tol = tol;
  SuiteResult r;
  r.suite = "flow_" + mode;
  FlowSolution s;
  if (mode == "surrogate") {
    s = solve_flow(p, surrogate_maps(p, SurrogateParams{}), zero_state(p));
  } else if (mode == "toy") {
    ToyFlowParams tp;
    tp.fp = p;
    tp.seed = c.seed;
    s = toy_flow(tp, std::vector<double>(p.K() + 1, 0.0)).sol;
  } else {
    throw CLI::ValidationError("--mode", "unknown mode '" + mode + "'");
  }
  add(r, "converged", s.converged() ? 0 : 1, 0);
  add(r, "max_ratio", s.max_ratio, 1.0);
  add(r, "in_B1", s.max_norm, 1.0);
  add(r, "boundary", s.boundary, 1e-12);
  Table t{"flow", {"k", "e_k", "m_k", "eps_k", "norm_E_k", "ratio"}, {}};
  for (int k = 0; k <= p.K(); ++k) {
    std::ostringstream row[5];
    double vals[5] = {flow_e(p, k), s.xi.m[k], s.energy.eps[k], std::abs(s.xi.E[k]), s.max_ratio};
    std::vector<std::string> cells{std::to_string(k)};
    for (int i = 0; i < 5; ++i) {
      row[i].precision(12);
      row[i] << vals[i];
      cells.push_back(row[i].str());
    }
    t.rows.push_back(cells);
  }
  r.tables.push_back(t);
  return emit(r, c.out);
}

void dump_operators(const RunConfig& cfg, const std::string& dir) {
  Lattice lat(cfg.L, cfg.N, cfg.k, 1);
  GaugeKit(lat).dump((std::filesystem::path(dir) / "gauge").string());
  if (cfg.k < 1 || cfg.k >= cfg.N) return;
  std::string fdir = (std::filesystem::path(dir) / "fermion").string();
  std::filesystem::create_directories(fdir);
  Rng rng(cfg.seed);
  VecC A = rng.vec(lat.nbonds(0), 0.5).cast<cd>();
  FermionKit kit(lat, A, fparams(cfg.e, cfg.mbar, cfg.b));
  nlohmann::json man;
  man["lattice"] = nlohmann::json::parse(lat.descriptor_json());
  man["format"] = "row-major little-endian complex128 pairs";
  auto put = [&](const std::string& name, const MatC& M) {
    write_matrix_bin(fdir + "/" + name + ".bin", M);
    man["operators"].push_back({{"name", name}, {"rows", M.rows()}, {"cols", M.cols()}, {"file", name + ".bin"}});
  };
  put("A", A);
  put("Dm", kit.Dm);
  put("Qk", kit.Qk);
  put("QkT_minus", kit.QkT_m);
  put("Sk", kit.Sk());
  put("Dk", kit.Dk());
  std::ofstream(fdir + "/manifest.json") << man.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lattice QED3 renormalization group verification suites"};
  app.require_subcommand(0, 1);

  std::string config_file, suites, out = "out";
  std::uint64_t seed = 1;
  double tol_scale = 1.0;
  std::string dump_dir;
  bool timing = false, list = false;
  auto* o_config = app.add_option("--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
  auto* o_suite = app.add_option("--suite", suites, "comma separated suite names");
  auto* o_seed = app.add_option("--seed", seed, "random seed");
  auto* o_out = app.add_option("--out", out, "output directory");
  auto* o_tol = app.add_option("--tol-scale", tol_scale, "multiplies every tolerance");
  app.add_flag("--timing", timing, "add runtime checks");
  app.add_flag("--list", list, "list suite names");
  app.add_option("--dump-operators", dump_dir, "write gauge and fermion operators to DIR");
  (void)o_config;

  Common fc;
  int draws = 100;
  double ftol = 1e-12;
  auto* fermion = app.add_subcommand("fermion", "fermion operator checks");
  auto* fverify = fermion->add_subcommand("verify", "averaging identities")->fallthrough(false);
  fermion->require_subcommand(1);
  common_flags(fverify, fc);
  fverify->add_option("--draws", draws, "random fields");
  fverify->add_option("--tol", ftol, "tolerance");

  Common rc;
  std::string which;
  auto* rgstep = app.add_subcommand("rgstep", "single step checks");
  auto* rverify = rgstep->add_subcommand("verify", "one named check");
  rgstep->require_subcommand(1);
  common_flags(rverify, rc);
  rverify->add_option("--which", which, "bseq, compose, logdet, deltaz or exact")
      ->required()
      ->check(CLI::IsMember({"bseq", "compose", "logdet", "deltaz", "exact"}));

  Common pc;
  auto* polymer = app.add_subcommand("polymer", "polymer function checks");
  polymer->require_subcommand(1);
  std::vector<std::pair<std::string, CLI::App*>> pcmds;
  for (std::string w : {"walk", "extract", "scale", "cluster"}) {
    auto* s = polymer->add_subcommand(w, w + " checks");
    common_flags(s, pc);
    pcmds.push_back({w, s});
  }

  Common flc;
  double fe = 0.1, fltol = 1e-12;
  std::string mode = "surrogate";
  auto* flow = app.add_subcommand("flow", "flow of the running couplings");
  auto* fsolve = flow->add_subcommand("solve", "solve the boundary value problem");
  flow->require_subcommand(1);
  common_flags(fsolve, flc);
  fsolve->add_option("--e", fe, "coupling at the last level");
  fsolve->add_option("--mode", mode, "toy or surrogate")->check(CLI::IsMember({"toy", "surrogate"}));
  fsolve->add_option("--tol", fltol, "fixed point tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*fverify) return fermion_verify(fc, draws, ftol);
    if (*rverify) return rgstep_verify(rc, which);
    for (auto& [w, s] : pcmds)
      if (*s) return polymer_cmd(w, pc);
    if (*fsolve) return flow_solve(flc, fe, mode, fltol);

    if (list) {
      for (const auto& s : suite_names()) std::cout << s << "\n";
      return 0;
    }

    RunConfig cfg;
    bool have_suites = false;
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      std::stringstream ss;
      ss << f.rdbuf();
      cfg = config_from_json(ss.str());
      have_suites = ss.str().find("\"suites\"") != std::string::npos;
    }
    if (*o_suite) {
      cfg.suites = split_list(suites);
      have_suites = true;
    }
    if (!have_suites) cfg.suites = suite_names();
    if (*o_seed) cfg.seed = seed;
    if (*o_out) cfg.out = out;
    if (*o_tol) cfg.tol_scale = tol_scale;
    if (timing) cfg.timing = true;
    if (const char* t = std::getenv("RGQED3_THREADS")) {
      try {
        cfg.threads = std::stoi(t);
      } catch (const std::exception&) {
        throw ConfigError(std::string("RGQED3_THREADS is not an integer: ") + t);
      }
    }
    cfg.validate();

    if (!dump_dir.empty()) {
      dump_operators(cfg, dump_dir);
      if (!*o_suite && (config_file.empty() || !have_suites)) return 0;
    }

    std::vector<SuiteResult> results = run_suites(cfg);
    std::string report = report_json(results);
    std::filesystem::create_directories(cfg.out);
    std::ofstream(std::filesystem::path(cfg.out) / "report.json") << report;
    write_tables(results, cfg.out);
    bool all = true;
    for (const auto& r : results) {
      for (const auto& c : r.checks)
        std::cerr << (c.pass ? "pass " : "FAIL ") << r.suite << "/" << c.name << " " << c.residual << " " << c.relation
                  << " " << c.tolerance << "\n";
      all = all && r.pass();
    }
    std::cout << report;
    return all ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
