#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace rgqed3 {

using cd = std::complex<double>;
using MatC = Eigen::MatrixXcd;
using MatR = Eigen::MatrixXd;
using VecC = Eigen::VectorXcd;
using VecR = Eigen::VectorXd;

constexpr cd I1{0.0, 1.0};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// single seeded generator, all random draws go through it
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  double uniform(double a = -1.0, double b = 1.0) {
    return std::uniform_real_distribution<double>(a, b)(g_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(g_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g_); }
  cd cnormal() { return {normal(), normal()}; }
  VecR vec(int n, double scale = 1.0) {
    VecR v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * uniform();
    return v;
  }
  VecC cvec(int n, double scale = 1.0) {
    VecC v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * cd(uniform(), uniform());
    return v;
  }
  MatC cmat(int r, int c, double scale = 1.0) {
    MatC m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = scale * cd(uniform(), uniform());
    return m;
  }
  std::mt19937_64& engine() { return g_; }

 private:
  std::mt19937_64 g_;
};

inline int ipow(int b, int e) {
  int r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// kron(A, I4)
inline MatC spin_lift(const MatC& a) {
  MatC r = MatC::Zero(4 * a.rows(), 4 * a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      cd v = a(i, j);
      if (v == cd(0)) continue;
      for (int s = 0; s < 4; ++s) r(4 * i + s, 4 * j + s) = v;
    }
  return r;
}

inline double rel_err(const MatC& a, const MatC& b) {
  double nb = b.norm();
  return (a - b).norm() / (nb > 0 ? nb : 1.0);
}

// solve A^T x = b from the LU of A (PA = LU)
inline MatC lu_solve_transpose(const Eigen::PartialPivLU<MatC>& lu, const MatC& b) {
  const MatC& LU = lu.matrixLU();
  MatC z = LU.triangularView<Eigen::Upper>().transpose().solve(b);
  z = LU.triangularView<Eigen::UnitLower>().transpose().solve(z);
  return lu.permutationP().transpose() * z;
}

}  // namespace rgqed3
