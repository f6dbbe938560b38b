#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <uqp/linalg.hpp>

namespace uqp {

struct UqpProblem;

/// Ordered disjoint cover {pi_1, ..., pi_m} of the row indices [0, n).
class Partition
{
public:
    Partition() = default;
    Partition(Index n, std::vector<std::vector<Index>> blocks);

    static Partition singletons(Index n);

    Index n() const { return n_; }
    Index size() const { return static_cast<Index>(blocks_.size()); }
    Index max_block_size() const { return max_block_; }
    std::span<const Index> block(Index i) const;
    const std::vector<std::vector<Index>>& blocks() const { return blocks_; }

    /// Block holding each row index.
    const std::vector<Index>& owner() const { return owner_; }

    /// One line per block, comma-separated zero-based indices.
    std::string to_text() const;
    static Partition from_text(std::string_view text);

    friend bool operator==(const Partition& a, const Partition& b)
    {
        return a.n_ == b.n_ && a.blocks_ == b.blocks_;
    }

private:
    Index n_ = 0;
    Index max_block_ = 0;
    std::vector<std::vector<Index>> blocks_;
    std::vector<Index> owner_;
};

Partition contiguous_partition(Index n, Index d);
Partition random_partition(Index n, Index d, std::uint64_t seed);

/*
 * The heavy set becomes the first block; the remaining indices are shuffled
 * with `seed` and sliced into blocks of at most d. With `pad` the heavy block
 * is topped up to d rows from the front of the shuffle. An empty heavy set
 * reproduces random_partition(n, d, seed).
 */
Partition dominant_partition(Index n, Index d, std::span<const Index> heavy, std::uint64_t seed,
                             bool pad = false);
Partition dominant_partition(const UqpProblem& prob, Index d, std::span<const Index> heavy,
                             std::uint64_t seed, bool pad = false);

/// Heuristic heavy-row detector: the `count` rows with largest |P_ii|, ascending.
std::vector<Index> detect_heavy_rows(const Matrix& p, Index count);

enum class MethodFamily { BK, BCD, GBCD };

struct HdcLimits
{
    Index rho = 1; ///< max rows of P resident in main memory
};

/// Block-size cap: min{rho, sqrt n} (BK, GBCD) or min{rho, n^(2/3)} (BCD).
double hdc_cap(Index n, const HdcLimits& limits, MethodFamily family);
bool hdc_admissible(const Partition& part, const HdcLimits& limits, MethodFamily family);

struct RateReport
{
    Index m = 0;
    double lambda_min_pb = 0;   ///< lambda_min(P_Pi B_Pi^{-1})
    double bound_exact = 0;     ///< 1 - lambda_min_pb / m
    double bound_simple = 0;    ///< 1 - (1 - dominance_gap) / m
    double dominance_gap = 0;   ///< ||P_Pi - B_Pi||_2 / lambda_min(B_Pi)
    double lambda_min_b = 0;
    double offdiag_norm = 0;    ///< ||P_Pi - B_Pi||_2
};

/// I_Pi P I_Pi^T: rows and columns reordered block by block.
Matrix permuted_matrix(const Matrix& p, const Partition& part);

/// Block-diagonal part of an already permuted matrix.
Matrix block_diagonal(const Matrix& p_perm, const Partition& part);

RateReport rate_bound(const Matrix& p, const Partition& part, Index cap = tol::eigen_cap);
RateReport rate_bound(const UqpProblem& prob, const Partition& part, Index cap = tol::eigen_cap);

/// Minimum number of GBCD iterations guaranteeing E_k < eps from the exact bound.
Index iteration_bound(double bound_exact, double eps);

} // namespace uqp
