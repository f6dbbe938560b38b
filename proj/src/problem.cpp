#include <uqp/problem.hpp>

#include <algorithm>
#include <numeric>

#include <uqp/blockstore.hpp>
#include <uqp/rng.hpp>

namespace uqp {

namespace {

void check_shapes(const Matrix& p, const Vector& q)
{
    if (p.rows() != p.cols() || p.rows() != q.size()) {
        throw Error(ErrorKind::DimensionMismatch, "P must be n x n with q of length n");
    }
}

/// Lower triangle of A^T A, mirrored so the result is exactly symmetric.
Matrix gram_of(const Matrix& v)
{
    const Index n = v.cols();
    Matrix p = Matrix::Zero(n, n);
    p.selfadjointView<Eigen::Lower>().rankUpdate(v.transpose());
    p.triangularView<Eigen::StrictlyUpper>() = p.transpose();
    return p;
}

UqpProblem with_solution(Matrix p, std::uint64_t seed)
{
    const Index n = p.rows();
    auto rng = make_rng(seed, stream_solution);
    const Vector x = standard_normal(n, 1, rng);
    Vector q = p * x;
    return UqpProblem::from_matrix_unchecked(std::move(p), std::move(q));
}

} // namespace

UqpProblem UqpProblem::from_matrix(Matrix p, Vector q, double r)
{
    check_shapes(p, q);
    if (!p.allFinite() || !q.allFinite() || !std::isfinite(r)) {
        throw Error(ErrorKind::NonFinite, "problem data must be finite");
    }
    (void)cholesky(p);
    return from_matrix_unchecked(std::move(p), std::move(q), r);
}

UqpProblem UqpProblem::from_matrix_unchecked(Matrix p, Vector q, double r)
{
    check_shapes(p, q);
    UqpProblem prob;
    prob.p = std::make_shared<const Matrix>(std::move(p));
    prob.q = std::move(q);
    prob.r = r;
    return prob;
}

UqpProblem UqpProblem::from_store(std::shared_ptr<BlockStore> store, double r)
{
    if (!store) throw Error(ErrorKind::IoError, "null store");
    UqpProblem prob;
    prob.q = store->q();
    prob.p = std::move(store);
    prob.r = r;
    return prob;
}

const Matrix& UqpProblem::matrix() const
{
    if (!in_memory()) throw Error(ErrorKind::InvalidShape, "problem is store-backed");
    return *std::get<std::shared_ptr<const Matrix>>(p);
}

std::shared_ptr<const Matrix> UqpProblem::matrix_ptr() const
{
    if (!in_memory()) return nullptr;
    return std::get<std::shared_ptr<const Matrix>>(p);
}

std::shared_ptr<BlockStore> UqpProblem::store() const
{
    if (in_memory()) return nullptr;
    return std::get<std::shared_ptr<BlockStore>>(p);
}

namespace {

Vector product(const UqpProblem& prob, const Vector& x)
{
    if (x.size() != prob.n()) {
        throw Error(ErrorKind::DimensionMismatch,
                    "x has length " + std::to_string(x.size()) + ", expected " +
                        std::to_string(prob.n()));
    }
    if (prob.in_memory()) return prob.matrix() * x;
    return stream_product(*prob.store(), x);
}

} // namespace

double eval_f(const UqpProblem& prob, const Vector& x)
{
    const Vector px = product(prob, x);
    return 0.5 * x.dot(px) - x.dot(prob.q) + prob.r;
}

Vector eval_grad(const UqpProblem& prob, const Vector& x)
{
    return product(prob, x) - prob.q;
}

Matrix materialize(const UqpProblem& prob, Index cap)
{
    if (prob.n() > cap) {
        throw Error(ErrorKind::TooLargeForDirect,
                    "n = " + std::to_string(prob.n()) + " exceeds cap " + std::to_string(cap));
    }
    if (prob.in_memory()) return prob.matrix();
    auto& store = *prob.store();
    const auto& part = store.partition();
    Matrix p(prob.n(), prob.n());
    for (Index i = 0; i < part.size(); ++i) {
        const auto blk = store.fetch_block(i);
        p(part.block(i), Eigen::all) = blk.rows();
    }
    return p;
}

Oracle solve_direct(const UqpProblem& prob, Index cap)
{
    if (prob.n() > cap) {
        throw Error(ErrorKind::TooLargeForDirect,
                    "n = " + std::to_string(prob.n()) + " exceeds cap " + std::to_string(cap));
    }
    Matrix owned;
    if (!prob.in_memory()) owned = materialize(prob, cap);
    const Matrix& p = prob.in_memory() ? prob.matrix() : owned;
    const Matrix l = cholesky(p);
    Vector x = l.triangularView<Eigen::Lower>().solve(prob.q);
    l.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    Oracle oracle;
    oracle.f_opt = prob.r - 0.5 * prob.q.dot(x);
    oracle.x_opt = std::move(x);
    return oracle;
}

UqpProblem gen_block_dominant(Index n, Index block, double diag_scale, double off_scale,
                              std::uint64_t seed)
{
    if (n < 1 || block < 1 || n % block != 0) {
        throw Error(ErrorKind::InvalidShape, "block size must divide n");
    }
    if (!(diag_scale > off_scale && off_scale > 0)) {
        throw Error(ErrorKind::InvalidShape, "need diag_scale > off_scale > 0");
    }
    const Index tiles = n / block;
    Matrix v(n, n);
    for (Index i = 0; i < tiles; ++i) {
        for (Index j = 0; j < tiles; ++j) {
            auto rng = make_rng(seed, static_cast<std::uint64_t>(i * tiles + j));
            const double scale = (i == j) ? diag_scale : off_scale;
            v.block(i * block, j * block, block, block) = scale * standard_normal(block, block, rng);
        }
    }
    return with_solution(gram_of(v), seed);
}

ScaledRows gen_scaled_rows(Index n, Index heavy_count, double factor, std::uint64_t seed)
{
    if (n < 1 || heavy_count < 0 || heavy_count >= n) {
        throw Error(ErrorKind::InvalidShape, "need 0 <= heavy_count < n");
    }
    if (!(factor >= 1)) throw Error(ErrorKind::InvalidShape, "factor must be >= 1");

    auto rng = make_rng(seed, 0);
    const Matrix v = standard_normal(n, n, rng);
    Matrix p = gram_of(v);

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    auto subset_rng = make_rng(seed, stream_subset);
    std::shuffle(order.begin(), order.end(), subset_rng);
    std::vector<Index> heavy(order.begin(), order.begin() + heavy_count);
    std::sort(heavy.begin(), heavy.end());

    // Symmetric congruence D P D keeps P definite.
    Vector d = Vector::Ones(n);
    for (const Index i : heavy) d(i) = factor;
    p = d.asDiagonal() * p * d.asDiagonal();

    return {with_solution(std::move(p), seed), std::move(heavy)};
}

UqpProblem gen_random_spd(Index n, std::uint64_t seed)
{
    if (n < 1) throw Error(ErrorKind::InvalidShape, "n must be >= 1");
    auto rng = make_rng(seed, 0);
    const Matrix v = standard_normal(n, n, rng);
    Matrix p = gram_of(v);
    p.diagonal().array() += static_cast<double>(n) * tol::ridge;
    return with_solution(std::move(p), seed);
}

} // namespace uqp
