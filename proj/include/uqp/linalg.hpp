#pragma once

#include <Eigen/Core>
#include <Eigen/Jacobi>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

#include <uqp/errors.hpp>
#include <uqp/tolerances.hpp>

namespace uqp {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Derived>
using plain_matrix_t = MatrixX<typename Derived::Scalar>;

template <class Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& a)
{
    using std::abs;
    if (a.rows() != a.cols()) return false;
    for (Index j = 0; j < a.cols(); ++j) {
        for (Index i = j + 1; i < a.rows(); ++i) {
            const auto aij = a(i, j);
            const auto bound = tol::symmetry * std::max<decltype(abs(aij))>(1, abs(aij));
            if (abs(aij - a(j, i)) > bound) return false;
        }
    }
    return true;
}

template <class Derived>
void require_symmetric(const Eigen::MatrixBase<Derived>& a, const char* what = "matrix")
{
    if (a.rows() != a.cols()) {
        throw Error(ErrorKind::DimensionMismatch, std::string(what) + " is not square");
    }
    if (!is_symmetric(a)) {
        throw Error(ErrorKind::NotSymmetric, std::string(what) + " is not symmetric");
    }
}

template <class Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& a)
{
    return a.allFinite();
}

/*
 * Lower Cholesky factor L with L * L^T = a. Only the lower triangle of a is
 * read. A pivot at or below 1e-13 * max diagonal is treated as loss of
 * definiteness.
 */
template <class Derived>
plain_matrix_t<Derived> cholesky(const Eigen::MatrixBase<Derived>& a)
{
    using Scalar = typename Derived::Scalar;
    require_symmetric(a, "cholesky input");
    const Index n = a.rows();
    if (n < 1) throw Error(ErrorKind::InvalidShape, "cholesky of an empty matrix");

    const Scalar max_diag = a.diagonal().maxCoeff();
    if (!(max_diag > 0)) {
        throw Error(ErrorKind::NotPositiveDefinite, "non-positive diagonal");
    }
    const Scalar floor = tol::cholesky_pivot * max_diag;

    plain_matrix_t<Derived> l = plain_matrix_t<Derived>::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
        Scalar pivot = a(j, j) - l.row(j).head(j).squaredNorm();
        if (!(pivot > floor)) {
            throw Error(ErrorKind::NotPositiveDefinite,
                        "pivot " + std::to_string(static_cast<double>(pivot)) + " at column " +
                            std::to_string(j));
        }
        const Scalar ljj = std::sqrt(pivot);
        l(j, j) = ljj;
        const Index rest = n - j - 1;
        if (rest > 0) {
            l.col(j).tail(rest) =
                (a.col(j).tail(rest) - l.bottomLeftCorner(rest, j) * l.row(j).head(j).transpose()) /
                ljj;
        }
    }
    return l;
}

template <class Derived>
plain_matrix_t<Derived> spd_invert(const Eigen::MatrixBase<Derived>& a)
{
    const auto l = cholesky(a);
    const Index n = l.rows();
    plain_matrix_t<Derived> linv = plain_matrix_t<Derived>::Identity(n, n);
    l.template triangularView<Eigen::Lower>().solveInPlace(linv);
    plain_matrix_t<Derived> inv = linv.transpose() * linv;
    // Exact symmetry keeps quadratic forms built on the inverse consistent.
    inv = (0.5 * (inv + inv.transpose())).eval();
    return inv;
}

/// x^T P x.
template <class DerivedX, class DerivedP>
typename DerivedP::Scalar p_norm_sq(const Eigen::MatrixBase<DerivedX>& x,
                                    const Eigen::MatrixBase<DerivedP>& p)
{
    if (p.rows() != p.cols() || p.cols() != x.size()) {
        throw Error(ErrorKind::DimensionMismatch, "p_norm_sq: vector/matrix sizes differ");
    }
    return x.dot(p * x);
}

/*
 * Cyclic Jacobi eigenvalue sweep on a symmetric matrix. Eigenvalues are
 * returned sorted ascending.
 */
template <class Derived>
VectorX<typename Derived::Scalar> sym_eigvals(const Eigen::MatrixBase<Derived>& a_in)
{
    using Scalar = typename Derived::Scalar;
    require_symmetric(a_in, "sym_eigvals input");
    const Index n = a_in.rows();
    plain_matrix_t<Derived> a = a_in;
    const Scalar fro = a.norm();
    if (n <= 1 || fro == 0) {
        VectorX<Scalar> ev = a.diagonal();
        std::sort(ev.data(), ev.data() + ev.size());
        return ev;
    }

    auto off_norm = [&] {
        Scalar s = 0;
        for (Index j = 0; j < n; ++j)
            for (Index i = j + 1; i < n; ++i) s += a(i, j) * a(i, j);
        return std::sqrt(2 * s);
    };

    Eigen::JacobiRotation<Scalar> rot;
    Scalar off_prev = std::numeric_limits<Scalar>::infinity();
    for (int sweep = 0; sweep < tol::jacobi_max_sweeps; ++sweep) {
        const Scalar off = off_norm();
        // Stagnation at rounding level also ends the sweeps.
        if (off <= tol::jacobi_offdiag * fro || off >= off_prev) break;
        off_prev = off;
        for (Index p = 0; p < n - 1; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                if (a(p, q) == Scalar(0)) continue;
                if (rot.makeJacobi(a, p, q)) {
                    a.applyOnTheLeft(p, q, rot.adjoint());
                    a.applyOnTheRight(p, q, rot);
                }
            }
        }
    }
    VectorX<Scalar> ev = a.diagonal();
    std::sort(ev.data(), ev.data() + ev.size());
    return ev;
}

/*
 * Largest singular value by power iteration on A^T A. Restarts are seeded
 * deterministically; the maximum over restarts is returned.
 */
template <class Derived>
typename Derived::Scalar spectral_norm(const Eigen::MatrixBase<Derived>& a,
                                       std::uint64_t seed = 0x5eedULL)
{
    using Scalar = typename Derived::Scalar;
    if (a.size() == 0) return 0;
    if (!a.allFinite()) throw Error(ErrorKind::NonFinite, "spectral_norm of non-finite matrix");
    const plain_matrix_t<Derived> m = a;
    if (m.cwiseAbs().maxCoeff() == Scalar(0)) return 0;

    const Index dim = m.cols();
    const int cap = std::max<int>(tol::spectral_iter_factor * static_cast<int>(dim),
                                  tol::spectral_iter_floor);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;

    Scalar best = 0;
    for (int restart = 0; restart < tol::spectral_restarts; ++restart) {
        VectorX<Scalar> v(dim);
        for (Index i = 0; i < dim; ++i) v(i) = static_cast<Scalar>(normal(rng));
        v.normalize();
        Scalar sigma_prev = 0;
        for (int it = 0; it < cap; ++it) {
            VectorX<Scalar> w = m.transpose() * (m * v);
            const Scalar lam = v.dot(w);
            const Scalar wn = w.norm();
            if (wn == Scalar(0)) break;
            v = w / wn;
            const Scalar sigma = std::sqrt(std::max<Scalar>(lam, 0));
            if (it > 0 && std::abs(sigma - sigma_prev) <= tol::spectral_step * sigma) {
                sigma_prev = sigma;
                break;
            }
            sigma_prev = sigma;
        }
        best = std::max(best, static_cast<Scalar>((m * v).norm()));
    }
    return best;
}

template <class Scalar>
struct ConditionNumbers
{
    Scalar kappa;       // lambda_max / lambda_min
    Scalar kappa_tilde; // ||P||_F / lambda_min
};

template <class Derived>
ConditionNumbers<typename Derived::Scalar> condition_numbers(const Eigen::MatrixBase<Derived>& p)
{
    (void)cholesky(p);
    const auto ev = sym_eigvals(p);
    const auto lmin = ev(0);
    const auto lmax = ev(ev.size() - 1);
    if (!(lmin > 0)) throw Error(ErrorKind::NotPositiveDefinite, "lambda_min <= 0");
    return {lmax / lmin, p.norm() / lmin};
}

} // namespace uqp
