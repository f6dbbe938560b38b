#pragma once

#include <cstdint>
#include <memory>
#include <variant>
#include <vector>

#include <uqp/linalg.hpp>

namespace uqp {

class BlockStore;

/// min_x 1/2 x^T P x - x^T q + r with P symmetric positive definite.
struct UqpProblem
{
    using MatrixSource = std::variant<std::shared_ptr<const Matrix>, std::shared_ptr<BlockStore>>;

    MatrixSource p;
    Vector q;
    double r = 0;

    /// Validates symmetry, definiteness and finiteness.
    static UqpProblem from_matrix(Matrix p, Vector q, double r = 0);
    /// Trusts the generator; only checks shapes.
    static UqpProblem from_matrix_unchecked(Matrix p, Vector q, double r = 0);
    /// q is read from the store's block files.
    static UqpProblem from_store(std::shared_ptr<BlockStore> store, double r = 0);

    Index n() const { return q.size(); }
    bool in_memory() const { return std::holds_alternative<std::shared_ptr<const Matrix>>(p); }
    const Matrix& matrix() const;
    std::shared_ptr<const Matrix> matrix_ptr() const;
    std::shared_ptr<BlockStore> store() const;
};

struct Oracle
{
    Vector x_opt;
    double f_opt = 0;
};

double eval_f(const UqpProblem& prob, const Vector& x);
Vector eval_grad(const UqpProblem& prob, const Vector& x);

/// Dense P; store-backed problems are assembled block by block (n <= cap).
Matrix materialize(const UqpProblem& prob, Index cap = tol::direct_cap);

Oracle solve_direct(const UqpProblem& prob, Index cap = tol::direct_cap);

/*
 * Experiment-1 instance: V is tiled with b x b standard-normal tiles, scaled
 * by diag_scale on the block diagonal and off_scale elsewhere; P = V^T V,
 * q = P x with x standard normal. Tile (i, j) draws from stream i * (n/b) + j.
 */
UqpProblem gen_block_dominant(Index n, Index block, double diag_scale, double off_scale,
                              std::uint64_t seed);

struct ScaledRows
{
    UqpProblem problem;
    std::vector<Index> heavy; ///< sorted ascending
};

/// P = D (V^T V) D with D = factor on a random index set of size heavy_count, 1 elsewhere.
ScaledRows gen_scaled_rows(Index n, Index heavy_count, double factor, std::uint64_t seed);

/// P = V^T V + n * 1e-9 * I.
UqpProblem gen_random_spd(Index n, std::uint64_t seed);

} // namespace uqp
