#ifndef MIIS_TESTS_NAIVE_MMPP_HPP
#define MIIS_TESTS_NAIVE_MMPP_HPP

// Extended-precision reference for the MMPP likelihood.

#include <algorithm>
#include <cmath>
#include <vector>

#include "miis/models/mmpp.hpp"

namespace miis::testing {

using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

// Taylor series with scaling and squaring, all in long double.
inline LMat expm_naive(const LMat& A) {
  long double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (norm > 0.25L) {
    norm /= 2.0L;
    ++s;
  }
  const LMat X = A / std::ldexp(1.0L, s);
  LMat term = LMat::Identity(A.rows(), A.cols());
  LMat sum = term;
  for (int k = 1; k < 40; ++k) {
    term = term * X / static_cast<long double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) {
    sum = sum * sum;
  }
  return sum;
}

// Unnormalized forward product nu' e^{(Q-Psi)t_1} Psi ... e^{(Q-Psi)t_{n+1}} 1.
inline long double naive_loglik(const mmpp::Params& p, const std::vector<double>& times, double window) {
  const auto d = p.psi.size();
  LMat A = p.Q.cast<long double>();
  for (Eigen::Index i = 0; i < d; ++i) {
    A(i, i) -= p.psi[i];
  }
  const Eigen::VectorXd nu = mmpp::stationary(p.Q);
  Eigen::Matrix<long double, 1, Eigen::Dynamic> row = nu.transpose().cast<long double>();
  long double prev = 0.0L;
  for (double t : times) {
    row = row * expm_naive(A * (static_cast<long double>(t) - prev));
    for (Eigen::Index i = 0; i < d; ++i) {
      row[i] *= p.psi[i];
    }
    prev = t;
  }
  row = row * expm_naive(A * (static_cast<long double>(window) - prev));
  return std::log(row.sum());
}

inline std::vector<double> uniform_times(std::size_t n, double window, RngStream& rng) {
  std::vector<double> t(n);
  for (auto& v : t) {
    v = window * rng.uniform();
  }
  std::sort(t.begin(), t.end());
  return t;
}

}  // namespace miis::testing

#endif  // MIIS_TESTS_NAIVE_MMPP_HPP
