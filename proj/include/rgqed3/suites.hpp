#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rgqed3 {

struct RunConfig {
  int L = 3;
  int N = 2;
  int k = 1;
  int M = 3;
  double b = 1.0;
  double e = 0.8;
  double mbar = 0.2;
  std::uint64_t seed = 1;
  double tol_scale = 1.0;
  int draws = 100;          // random fields for the averaging identities
  bool timing = false;      // add wall-clock checks (breaks byte-identical reports)
  int threads = 1;
  std::vector<std::string> suites;
  std::string out = "out";

  // throws ConfigError with the offending field
  void validate() const;
};

// fields missing from the JSON keep their defaults; unknown keys are rejected
RunConfig config_from_json(const std::string& text);

struct Check {
  std::string name;
  std::string anchor;
  double residual = 0;
  double tolerance = 0;
  std::string relation = "<=";  // residual <= tolerance, or >= for lower bounds
  bool pass = false;
};

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct SuiteResult {
  std::string suite;
  int criterion = 0;
  std::vector<Check> checks;
  std::vector<Table> tables;
  bool pass() const;
};

const std::vector<std::string>& suite_names();
bool is_suite(const std::string& name);
int suite_criterion(const std::string& name);

SuiteResult run_suite(const std::string& name, const RunConfig& cfg);
// runs cfg.suites on cfg.threads workers, results in the order requested
std::vector<SuiteResult> run_suites(const RunConfig& cfg);

std::string report_json(const std::vector<SuiteResult>& results);
// one CSV of checks per suite plus one per extra table; returns the paths written
std::vector<std::string> write_tables(const std::vector<SuiteResult>& results, const std::string& dir);
std::string checks_csv(const SuiteResult& r);
std::string table_csv(const Table& t);

}  // namespace rgqed3
