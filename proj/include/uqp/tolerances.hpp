#pragma once

#include <cstddef>

// Numerical thresholds shared by the kernels and their tests.
namespace uqp::tol {

inline constexpr double symmetry = 1e-12;          // |a_ij - a_ji| <= symmetry * max(1, |a_ij|)
inline constexpr double cholesky_pivot = 1e-13;    // pivot <= cholesky_pivot * max diagonal fails
inline constexpr double inverse_identity = 1e-10;  // a * inv(a) vs identity, entrywise
inline constexpr double jacobi_offdiag = 1e-14;    // stop sweeping when off(A) <= this * ||A||_F
inline constexpr int jacobi_max_sweeps = 100;
inline constexpr double jacobi_residual = 1e-9;    // reconstruction residual, relative to ||A||_F
inline constexpr double spectral_rel = 1e-9;        // target accuracy of the estimate
inline constexpr double spectral_step = 1e-12;      // stop when successive estimates differ by less
inline constexpr int spectral_restarts = 5;
inline constexpr int spectral_iter_factor = 10;
inline constexpr int spectral_iter_floor = 1000;
inline constexpr double direct_residual = 1e-9;    // ||P x_opt - q|| <= direct_residual * ||q||
inline constexpr double dldr_routes = 1e-10;
inline constexpr double gradient_drift = 1e-8;     // maintained vs recomputed gradient, times (1 + ||q||_inf)
inline constexpr double ridge = 1e-9;              // gen_random_spd adds n * ridge * I

inline constexpr std::ptrdiff_t direct_cap = 8192;    // largest n for in-memory Cholesky solves
inline constexpr std::ptrdiff_t eigen_cap = 1024;     // largest n for full Jacobi eigensolves
inline constexpr std::ptrdiff_t quadratic_cap = 4096; // largest n for O(n^2)-per-iteration methods

} // namespace uqp::tol
