#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>

#include <uqp/linalg.hpp>
#include <uqp/rng.hpp>

using namespace uqp;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows)
{
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
    Index i = 0;
    for (const auto& r : rows) {
        Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix random_spd(Index n, std::uint64_t seed)
{
    Rng rng = make_rng(seed, 1);
    const Matrix v = standard_normal(n + 4, n, rng);
    Matrix a = v.transpose() * v;
    a.diagonal().array() += 0.1;
    return 0.5 * (a + a.transpose());
}

Matrix random_symmetric(Index n, std::uint64_t seed)
{
    Rng rng = make_rng(seed, 2);
    const Matrix v = standard_normal(n, n, rng);
    return 0.5 * (v + v.transpose());
}

template <class ErrFn>
void expect_kind(ErrorKind kind, ErrFn&& fn)
{
    try {
        fn();
        FAIL() << "expected " << to_string(kind);
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), kind) << e.what();
    }
}

} // namespace

TEST(Cholesky, DiagonalCase)
{
    const Matrix l = cholesky(mat({{4, 0}, {0, 9}}));
    EXPECT_TRUE(l.isApprox(mat({{2, 0}, {0, 3}})));
}

TEST(Cholesky, TwoByTwoByHand)
{
    const Matrix l = cholesky(mat({{4, 2}, {2, 2}}));
    EXPECT_DOUBLE_EQ(l(0, 0), 2);
    EXPECT_DOUBLE_EQ(l(1, 0), 1);
    EXPECT_DOUBLE_EQ(l(1, 1), 1);
    EXPECT_DOUBLE_EQ(l(0, 1), 0);
}

TEST(Cholesky, IndefiniteRejected)
{
    expect_kind(ErrorKind::NotPositiveDefinite, [] { cholesky(mat({{1, 2}, {2, 1}})); });
}

TEST(Cholesky, AsymmetricRejected)
{
    expect_kind(ErrorKind::NotSymmetric, [] { cholesky(mat({{2, 1}, {0, 2}})); });
}

TEST(Cholesky, TinyPivotRejected)
{
    // Second pivot is 1e-15 * 1, below 1e-13 of the max diagonal.
    expect_kind(ErrorKind::NotPositiveDefinite, [] { cholesky(mat({{1, 1}, {1, 1 + 1e-15}})); });
}

TEST(Cholesky, MatchesEigenLltOnRandomSpd)
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix a = random_spd(1 + static_cast<Index>(seed) * 6, seed);
        const Matrix l = cholesky(a);
        const Matrix ref = Eigen::LLT<Matrix>(a).matrixL();
        EXPECT_LE((l - ref).cwiseAbs().maxCoeff(), 1e-10 * a.cwiseAbs().maxCoeff());
        EXPECT_LE((l * l.transpose() - a).norm(), 1e-12 * a.norm());
        EXPECT_TRUE((l.diagonal().array() > 0).all());
    }
}

TEST(Cholesky, WorksInFloat)
{
    Eigen::MatrixXf a(2, 2);
    a << 4, 2, 2, 2;
    const Eigen::MatrixXf l = cholesky(a);
    EXPECT_FLOAT_EQ(l(1, 1), 1.0f);
}

TEST(SpdInvert, Identity)
{
    EXPECT_TRUE(spd_invert(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3)));
}

TEST(SpdInvert, DiagonalReciprocals)
{
    const Matrix inv = spd_invert(mat({{2, 0}, {0, 4}}));
    EXPECT_DOUBLE_EQ(inv(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(inv(1, 1), 0.25);
    EXPECT_DOUBLE_EQ(inv(0, 1), 0);
}

TEST(SpdInvert, TwoByTwoFormula)
{
    const Matrix inv = spd_invert(mat({{4, 2}, {2, 2}}));
    EXPECT_LE((inv - mat({{0.5, -0.5}, {-0.5, 1}})).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(SpdInvert, PropagatesNotPositiveDefinite)
{
    expect_kind(ErrorKind::NotPositiveDefinite, [] { spd_invert(mat({{1, 2}, {2, 1}})); });
}

TEST(SpdInvert, RandomProductIsIdentity)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Index n = 1 + static_cast<Index>(seed * 3 % 64);
        const Matrix a = random_spd(n, seed);
        const Matrix inv = spd_invert(a);
        EXPECT_LE((inv * a - Matrix::Identity(n, n)).cwiseAbs().maxCoeff(), tol::inverse_identity)
            << "n=" << n;
        EXPECT_EQ(inv, inv.transpose());
    }
}

TEST(PNormSq, Examples)
{
    const Matrix p = mat({{2, 0}, {0, 4}});
    EXPECT_EQ(p_norm_sq(Vector::Zero(2), p), 0);
    EXPECT_DOUBLE_EQ(p_norm_sq(Vector::Unit(2, 0), p), 2);
    EXPECT_DOUBLE_EQ(p_norm_sq(Vector::Ones(2), p), 6);
}

TEST(PNormSq, DimensionMismatch)
{
    expect_kind(ErrorKind::DimensionMismatch, [] { p_norm_sq(Vector::Ones(3), Matrix::Identity(2, 2)); });
}

TEST(PNormSq, PositiveOnNonzeroVectors)
{
    const Matrix p = random_spd(12, 3);
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng = make_rng(s, 9);
        const Vector x = standard_normal(12, 1, rng);
        EXPECT_GT(p_norm_sq(x, p), 0);
    }
}

TEST(SymEigvals, Examples)
{
    Matrix d = Matrix::Zero(3, 3);
    d.diagonal() << 3, 1, 2;
    const Vector ev = sym_eigvals(d);
    EXPECT_EQ(ev, Eigen::Vector3d(1, 2, 3));

    const Vector swap = sym_eigvals(mat({{0, 1}, {1, 0}}));
    EXPECT_NEAR(swap(0), -1, 1e-14);
    EXPECT_NEAR(swap(1), 1, 1e-14);

    const Vector two = sym_eigvals(mat({{2, 1}, {1, 2}}));
    EXPECT_NEAR(two(0), 1, 1e-14);
    EXPECT_NEAR(two(1), 3, 1e-14);
}

TEST(SymEigvals, RejectsAsymmetric)
{
    expect_kind(ErrorKind::NotSymmetric, [] { sym_eigvals(mat({{1, 2}, {3, 1}})); });
}

TEST(SymEigvals, AgreesWithEigenSolverAndIsSorted)
{
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const Index n = 2 + static_cast<Index>(seed) * 7;
        const Matrix a = random_symmetric(n, seed);
        const Vector ev = sym_eigvals(a);
        const Vector ref = Eigen::SelfAdjointEigenSolver<Matrix>(a, Eigen::EigenvaluesOnly).eigenvalues();
        EXPECT_TRUE(std::is_sorted(ev.data(), ev.data() + ev.size()));
        EXPECT_LE((ev - ref).cwiseAbs().maxCoeff(), tol::jacobi_residual * a.norm()) << "n=" << n;
        // Trace and Frobenius norm are preserved by the similarity.
        EXPECT_NEAR(ev.sum(), a.trace(), 1e-10 * (1 + a.norm()));
        EXPECT_NEAR(ev.norm(), a.norm(), 1e-10 * a.norm());
    }
}

TEST(SpectralNorm, Examples)
{
    EXPECT_EQ(spectral_norm(Matrix::Zero(3, 3)), 0);
    EXPECT_NEAR(spectral_norm(mat({{1, 0}, {0, -5}})), 5, 5e-9);
    EXPECT_NEAR(spectral_norm(mat({{0, 2}, {0, 0}})), 2, 2e-9);
}

TEST(SpectralNorm, MatchesSvdOnRectangular)
{
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng = make_rng(seed, 4);
        const Matrix a = standard_normal(5 + static_cast<Index>(seed), 3 + static_cast<Index>(seed) * 2, rng);
        const double ref = Eigen::JacobiSVD<Matrix>(a).singularValues()(0);
        EXPECT_NEAR(spectral_norm(a), ref, 1e-8 * ref);
    }
}

TEST(SpectralNorm, EqualsMaxAbsEigenvalueForSymmetric)
{
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const Matrix a = random_symmetric(10 + static_cast<Index>(seed) * 4, seed + 50);
        const Vector ev = sym_eigvals(a);
        const double ref = std::max(std::abs(ev(0)), std::abs(ev(ev.size() - 1)));
        EXPECT_NEAR(spectral_norm(a), ref, 1e-8 * ref);
    }
}

TEST(SpectralNorm, DeterministicForFixedSeed)
{
    const Matrix a = random_symmetric(20, 7);
    EXPECT_EQ(spectral_norm(a, 11), spectral_norm(a, 11));
}

TEST(SpectralNorm, NonFiniteRejected)
{
    Matrix a = Matrix::Identity(2, 2);
    a(0, 1) = std::nan("");
    expect_kind(ErrorKind::NonFinite, [&] { spectral_norm(a); });
}

TEST(ConditionNumbers, Examples)
{
    const auto id = condition_numbers(Matrix::Identity(4, 4));
    EXPECT_NEAR(id.kappa, 1, 1e-15);
    EXPECT_NEAR(id.kappa_tilde, 2, 1e-15);

    const auto d14 = condition_numbers(mat({{1, 0}, {0, 4}}));
    EXPECT_NEAR(d14.kappa, 4, 1e-15);
    EXPECT_NEAR(d14.kappa_tilde, std::sqrt(17.0), 1e-14);

    const auto d22 = condition_numbers(mat({{2, 0}, {0, 2}}));
    EXPECT_NEAR(d22.kappa, 1, 1e-15);
    EXPECT_NEAR(d22.kappa_tilde, std::sqrt(8.0) / 2, 1e-14);
}

TEST(ConditionNumbers, RejectsIndefinite)
{
    expect_kind(ErrorKind::NotPositiveDefinite, [] { condition_numbers(mat({{1, 2}, {2, 1}})); });
}

TEST(ConditionNumbers, KappaAtLeastOne)
{
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto c = condition_numbers(random_spd(9, seed));
        EXPECT_GE(c.kappa, 1);
        // ||P||_F >= lambda_max, so kappa_tilde >= kappa.
        EXPECT_GE(c.kappa_tilde, c.kappa * (1 - 1e-12));
    }
}
