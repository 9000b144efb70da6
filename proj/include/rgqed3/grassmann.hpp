#pragma once

#include <map>
#include <string>
#include <vector>

#include "rgqed3/types.hpp"

namespace rgqed3 {

using Mono = std::vector<int>;  // strictly increasing generator indices

// Element of a finite Grassmann algebra. Coefficients are algebra coefficients,
// i.e. E(I) mu(I) in the weighted form; the norm is then sum h^|I| |c(I)|.
// Each generator carries a species label used to pick its weight h.
class Kernel {
 public:
  Kernel() = default;
  explicit Kernel(int ngen, std::vector<int> species = {});

  int ngen = 0;
  std::vector<int> species;
  std::map<Mono, cd> c;

  static Kernel constant(int ngen, cd v, std::vector<int> species = {});
  static Kernel generator(int ngen, int g, cd v = 1.0, std::vector<int> species = {});

  cd coef(const Mono& m) const;
  void add(const Mono& m, cd v);
  int max_degree() const;
  bool is_even() const;
  void prune(double tol = 0.0);

  Kernel operator+(const Kernel& o) const;
  Kernel operator-(const Kernel& o) const;
  Kernel operator*(cd s) const;
  Kernel& operator+=(const Kernel& o);
  Kernel& operator*=(cd s);

  std::string dump_json() const;
};

bool same_universe(const Kernel& a, const Kernel& b);

// sign of the permutation sorting the concatenation (a, b); 0 if they overlap
int merge_sign(const Mono& a, const Mono& b, Mono* out = nullptr);

// sorts seq in place, returns the permutation sign (0 on a repeated entry)
int permutation_sign(std::vector<int>& seq);

Kernel product(const Kernel& a, const Kernel& b, int cap = 1 << 20);
Kernel product_bruteforce(const Kernel& a, const Kernel& b);
// exp of an even element, series truncated by nilpotency
Kernel exp_even(const Kernel& a);

double kernel_norm(const Kernel& e, const std::vector<double>& h_per_species);
double kernel_norm(const Kernel& e, double h);
double kernel_norm_bruteforce(const Kernel& e, const std::vector<double>& h_per_species);

// E'(chi) = E(K chi): generator g of e becomes sum_t K(g, t) chi_t
Kernel substitute(const Kernel& e, const MatC& K, const std::vector<int>& target_species);
// E(H1 Psi, H2 Psi) where generators of species 0 go through H1 and species 1 through H2
Kernel compose_dressed(const Kernel& e, const MatC& H1, const MatC& H2);
// term-by-term expansion oracle
Kernel substitute_bruteforce(const Kernel& e, const MatC& K, const std::vector<int>& target_species);
// ||H||_{1,inf} = sup_t sum_s |H(t,s)|
double norm_1inf(const MatC& H);

// E+(psi, psi') = E(psi + psi'), psi' generators appended after psi
Kernel shift_split(const Kernel& e);

// Psi(s) = off + s, Psibar(s) = off + 2n - 1 - s
struct PairBlock {
  int off = 0;
  int n = 0;
  int psi(int s) const { return off + s; }
  int psibar(int s) const { return off + 2 * n - 1 - s; }
  bool contains(int g) const { return g >= off && g < off + 2 * n; }
};

// integrate out the generators of blk with covariance Gamma (n x n); the result
// keeps the universe, the block generators just no longer occur
Kernel integrate_block(const Kernel& e, const PairBlock& blk, const MatC& Gamma);
cd gaussian_integral(const Kernel& e, const PairBlock& blk, const MatC& Gamma);
Kernel partial_integral(const Kernel& e, const PairBlock& blk);

// Berezin top-form ratio int E e^{-<Psibar, D Psi>} / int e^{-<Psibar, D Psi>}
cd top_form_ratio(const Kernel& e, const PairBlock& blk, const MatC& D);
Kernel quadratic_action(int ngen, const PairBlock& blk, const MatC& D, std::vector<int> species = {});

// a linear functional of one block's fields: either Psi-type (sum u_s Psi(s))
// or Psibar-type (sum v_t Psibar(t))
struct LinearField {
  bool bar = false;
  VecC w;
};
// <phi_1 ... phi_m>_Gamma for an ordered product of linear functionals
cd wick_linear(const std::vector<LinearField>& seq, const MatC& Gamma);

Kernel random_kernel(Rng& rng, int ngen, int maxdeg, double density, std::vector<int> species = {});

}  // namespace rgqed3
