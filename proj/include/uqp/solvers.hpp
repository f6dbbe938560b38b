#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>

#include <uqp/blockstore.hpp>
#include <uqp/partition.hpp>
#include <uqp/problem.hpp>
#include <uqp/rng.hpp>

namespace uqp {

// ---------------------------------------------------------------------------
// State and per-step reports
// ---------------------------------------------------------------------------

struct SolverState
{
    Vector x;
    Vector grad;                 ///< maintained gradient P x - q (when grad_maintained)
    bool grad_maintained = false;
    Index k = 0;
    Rng rng;
    Index cursor = 0;            ///< round-robin position
    Vector cg_dir;               ///< conjugate gradient search direction
    double cg_rr = 0;            ///< squared residual norm for CG

    /// x = 0 and grad = -q.
    static SolverState at_origin(const Vector& q, std::uint64_t seed);
};

struct BlockScore
{
    Index block = 0;
    double beta = 0;
};

struct StepReport
{
    Index block = -1;            ///< chosen block, -1 for full-gradient methods
    double beta = 0;             ///< score of the chosen block (greedy methods)
    double delta_pnormsq = std::numeric_limits<double>::quiet_NaN();
    Index blocks_fetched = 0;
    Index rows_touched = 0;
    bool contiguous = true;      ///< false when rows came from scattered locations
    bool dense_update = false;   ///< x changed in (generically) every coordinate
    std::vector<Index> updated;  ///< changed coordinates when !dense_update
};

// ---------------------------------------------------------------------------
// Greedy scores
// ---------------------------------------------------------------------------

Vector partial_grad(const Vector& grad, std::span<const Index> pi);

/// beta_i = g_i^T P_{pi_i pi_i}^{-1} g_i with g_i the pi_i part of grad.
std::vector<BlockScore> score_blocks(const Vector& grad, const Partition& part,
                                     const BlockInverses& inverses);

/// Same values as score_blocks; blocks are split across n_workers threads.
std::vector<BlockScore> parallel_score_blocks(const Vector& grad, const Partition& part,
                                              const BlockInverses& inverses, unsigned n_workers);

/// Largest beta; ties go to the lowest block index.
Index argmax_block(std::span<const BlockScore> scores);

// ---------------------------------------------------------------------------
// Steppers
// ---------------------------------------------------------------------------

/// Greedy block coordinate descent with incremental gradient maintenance.
StepReport gbcd_step(SolverState& state, BlockSource& source, const BlockInverses& inverses,
                     unsigned n_workers = 1);

enum class BcdRule { RoundRobin, RandEigWeighted, RandDiagSingleRow };

struct BcdStrategy
{
    BcdRule rule = BcdRule::RoundRobin;
    std::vector<double> weights;
    std::discrete_distribution<Index> sampler;
};

/*
 * RandEigWeighted samples block i with probability proportional to
 * lambda_max(P_ii) (= 1 / lambda_min of the stored inverse);
 * RandDiagSingleRow needs a singleton partition and samples row i with
 * probability proportional to P_ii.
 */
BcdStrategy make_bcd_strategy(BcdRule rule, const Partition& part, const BlockInverses& inverses);

StepReport bcd_step(SolverState& state, BlockSource& source, const BlockInverses& inverses,
                    BcdStrategy& strategy);

enum class BkRule { RoundRobin, RandRowNormSq, Greedy };

struct BkStrategy
{
    BkRule rule = BkRule::RoundRobin;
    std::vector<double> weights;
    std::discrete_distribution<Index> sampler;
    std::vector<Eigen::LLT<Matrix>> grams; ///< Greedy only: factored P_pi P_pi^T
};

/// Greedy mode costs O(n^2) per step; refused above quadratic_cap unless allowed.
BkStrategy make_bk_strategy(BkRule rule, BlockSource& source, bool allow_quadratic = false);

/// Block Kaczmarz projection; leaves state.grad untouched.
StepReport bk_step(SolverState& state, BlockSource& source, BkStrategy& strategy);

/// Top-r coordinates by (grad_i)^2 / P_ii, then an exact update on that set.
StepReport gbcd_bs_step(SolverState& state, BlockSource& source, const Vector& diag, Index r);

StepReport steepest_descent_step(SolverState& state, BlockSource& source);
StepReport conjugate_gradient_step(SolverState& state, BlockSource& source);

enum class DldrObjective { TwoNorm, PNorm };

/*
 * Minimizer of ||x - x_opt||^2 (TwoNorm) or ||x - x_opt||_P^2 (PNorm) over
 * x + col(m). PNorm evaluates both the oracle route and the oracle-free
 * route through q and throws RouteMismatch if they disagree.
 */
Vector dldr_step(const Vector& x, const Matrix& m, DldrObjective objective, const Matrix& p,
                 const Vector& q, const Oracle& oracle);

// ---------------------------------------------------------------------------
// Method configuration and driver
// ---------------------------------------------------------------------------

enum class Method { Gbcd, Bcd, Bk, GbcdBs, SteepestDescent, ConjugateGradient };
enum class Strategy { Auto, Greedy, RoundRobin, RandEigWeighted, RandDiagSingleRow, RandRowNormSq };

std::string_view to_string(Method method);
std::string_view to_string(Strategy strategy);
std::optional<Method> parse_method(std::string_view text);
std::optional<Strategy> parse_strategy(std::string_view text);

struct MethodConfig
{
    Method method = Method::Gbcd;
    Strategy strategy = Strategy::Auto;
    Index bs_rows = 1;                ///< GBCD-BS row count r
    std::uint64_t seed = 0;
    unsigned n_workers = 1;
    std::optional<HdcLimits> limits;  ///< enforce block-size caps when set
    bool allow_quadratic = false;
};

/// Throws InvalidStrategyConfig for combinations the method does not support.
Strategy resolve_strategy(Method method, Strategy strategy);

bool maintains_gradient(Method method);
bool is_quadratic(Method method, Strategy strategy);

/*
 * Owns the iteration state for one method over one BlockSource. The source
 * must outlive the solver. Preprocessing (inverses, sampling weights) runs
 * in the constructor and its fetches are counted on the source.
 */
class Solver
{
public:
    Solver(BlockSource& source, MethodConfig config, std::optional<Vector> x0 = std::nullopt,
           std::optional<BlockInverses> inverses = std::nullopt);

    StepReport step();

    const SolverState& state() const { return state_; }
    const MethodConfig& config() const { return config_; }
    BlockSource& source() { return source_; }
    const BlockInverses& inverses() const { return inverses_; }

    /// ||grad - (P x - q)||_inf by a full streaming pass (audit only).
    double gradient_drift();

    /// Residual ||P x - q||_2 by a full streaming pass.
    double residual_norm();

private:
    BlockSource& source_;
    MethodConfig config_;
    SolverState state_;
    BlockInverses inverses_;
    BcdStrategy bcd_;
    BkStrategy bk_;
    Vector diag_;
};

struct StopRule
{
    Index max_iters = 1000;
    double grad_tol = 0;       ///< ||grad||_2 <= grad_tol * ||q||_2 (gradient-maintaining methods)
    double eps = 0;            ///< E_k < eps (needs an oracle)
    Index residual_period = 0; ///< streamed residual check period for BK; 0 = m
};

enum class StopReason { MaxIterations, GradientTolerance, OracleTolerance, ResidualTolerance };

std::string_view to_string(StopReason reason);

struct TraceRecord
{
    Index k = 0;
    std::int64_t wall_nanos = 0;
    double e_pnorm = std::numeric_limits<double>::quiet_NaN();
    double e_2norm = std::numeric_limits<double>::quiet_NaN();
    double f_gap = std::numeric_limits<double>::quiet_NaN();
    Index block = -1;
    double beta = 0;
    Index blocks_fetched = 0;
    Index rows_touched = 0;
};

using Trace = std::vector<TraceRecord>;
using TraceSink = std::function<void(const TraceRecord&)>;

/*
 * Oracle-backed error metrics against an in-memory copy of P. The tracker
 * keeps P e itself (e = x - x_opt): block updates cost O(n d), dense updates
 * O(n^2), with a full resync every `resync` updates. Solver state is only
 * read.
 */
class ErrorTracker
{
public:
    ErrorTracker(std::shared_ptr<const Matrix> p, const Oracle& oracle, const Vector& x0,
                 bool exact = false, Index resync = 64);

    void update(const Vector& x, const StepReport& report);

    double pnorm_sq() const { return e_.dot(pe_); }
    double e_pnorm() const;
    double e_2norm() const;
    double f_gap() const { return 0.5 * pnorm_sq(); }
    double initial_pnorm_sq() const { return e0_p_sq_; }

private:
    void resync();

    std::shared_ptr<const Matrix> p_;
    Vector x_opt_;
    Vector e_;
    Vector pe_;
    double e0_p_sq_ = 0;
    double e0_2_ = 0;
    bool exact_;
    Index resync_every_;
    Index since_sync_ = 0;
};

struct MetricContext
{
    std::shared_ptr<const Matrix> p;
    const Oracle* oracle = nullptr;
    bool exact = false;
};

struct SolveResult
{
    Vector x;
    Index iterations = 0;
    StopReason reason = StopReason::MaxIterations;
    bool converged = false;
    double e_pnorm = std::numeric_limits<double>::quiet_NaN();
    double e_2norm = std::numeric_limits<double>::quiet_NaN();
    double grad_norm = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t blocks_fetched = 0; ///< during the iterations only
    std::vector<Index> chosen_blocks;
};

/// Steps until a stop rule fires; emits one TraceRecord per iterate, k = 0 first.
SolveResult run(Solver& solver, const StopRule& stop, const MetricContext* metrics = nullptr,
                const TraceSink& sink = {});

/// In-memory convenience wrapper: builds the block source and solver.
SolveResult solve(const UqpProblem& prob, const Partition& part, const MethodConfig& config,
                  const StopRule& stop, const Oracle* oracle = nullptr, const TraceSink& sink = {});

} // namespace uqp
