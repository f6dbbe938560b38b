#include <uqp/solvers.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace uqp {

namespace {

bool is_singleton(const Partition& part) { return part.max_block_size() == 1; }

void check_finite(const Vector& x)
{
    if (!x.allFinite()) throw Error(ErrorKind::NonFinite, "iterate left the finite range");
}

/// Block update shared by GBCD, BCD: x_pi += alpha, grad += P_pi^T alpha.
void apply_block_update(SolverState& state, const ResidentRows& blk, std::span<const Index> pi,
                        const Vector& alpha)
{
    for (std::size_t j = 0; j < pi.size(); ++j) state.x(pi[j]) += alpha(static_cast<Index>(j));
    if (state.grad_maintained) state.grad.noalias() += blk.rows().transpose() * alpha;
}

StepReport coordinate_step(SolverState& state, BlockSource& source, Index block, const Matrix& inverse)
{
    const auto pi = source.partition().block(block);
    const auto blk = source.fetch_block(block);
    const Vector residual = blk.q() - blk.rows() * state.x;
    const Vector alpha = inverse * residual;

    StepReport rep;
    rep.block = block;
    rep.beta = residual.dot(alpha);
    rep.blocks_fetched = 1;
    rep.rows_touched = blk.count();
    rep.updated.assign(pi.begin(), pi.end());
    apply_block_update(state, blk, pi, alpha);
    return rep;
}

double block_beta(const Vector& grad, std::span<const Index> pi, const Matrix& inverse)
{
    const Vector g = grad(pi);
    return g.dot(inverse * g);
}

} // namespace

SolverState SolverState::at_origin(const Vector& q, std::uint64_t seed)
{
    SolverState s;
    s.x = Vector::Zero(q.size());
    s.grad = -q;
    s.grad_maintained = true;
    s.rng = make_rng(seed, 0);
    return s;
}

Vector partial_grad(const Vector& grad, std::span<const Index> pi)
{
    for (const Index i : pi) {
        if (i < 0 || i >= grad.size()) throw Error(ErrorKind::IndexOutOfRange, "index " + std::to_string(i));
    }
    return grad(pi);
}

std::vector<BlockScore> score_blocks(const Vector& grad, const Partition& part,
                                     const BlockInverses& inverses)
{
    std::vector<BlockScore> scores(static_cast<std::size_t>(part.size()));
    for (Index i = 0; i < part.size(); ++i) {
        scores[static_cast<std::size_t>(i)] = {i, block_beta(grad, part.block(i), inverses[static_cast<std::size_t>(i)])};
    }
    return scores;
}

std::vector<BlockScore> parallel_score_blocks(const Vector& grad, const Partition& part,
                                              const BlockInverses& inverses, unsigned n_workers)
{
    const Index m = part.size();
    const unsigned workers = std::max(1u, std::min<unsigned>(n_workers, static_cast<unsigned>(m)));
    if (workers == 1) return score_blocks(grad, part, inverses);

    std::vector<BlockScore> scores(static_cast<std::size_t>(m));
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (Index i = m * w / workers; i < m * (w + 1) / workers; ++i) {
                    scores[static_cast<std::size_t>(i)] = {
                        i, block_beta(grad, part.block(i), inverses[static_cast<std::size_t>(i)])};
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return scores;
}

Index argmax_block(std::span<const BlockScore> scores)
{
    if (scores.empty()) throw Error(ErrorKind::InvalidShape, "no blocks to score");
    Index best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i].beta > scores[static_cast<std::size_t>(best)].beta) best = static_cast<Index>(i);
    }
    return scores[static_cast<std::size_t>(best)].block;
}

StepReport gbcd_step(SolverState& state, BlockSource& source, const BlockInverses& inverses,
                     unsigned n_workers)
{
    const auto scores = parallel_score_blocks(state.grad, source.partition(), inverses, n_workers);
    const Index best = argmax_block(scores);
    auto rep = coordinate_step(state, source, best, inverses[static_cast<std::size_t>(best)]);
    // Report the score that drove the choice.
    rep.beta = scores[static_cast<std::size_t>(best)].beta;
    return rep;
}

BcdStrategy make_bcd_strategy(BcdRule rule, const Partition& part, const BlockInverses& inverses)
{
    BcdStrategy s;
    s.rule = rule;
    if (rule == BcdRule::RoundRobin) return s;
    if (static_cast<Index>(inverses.size()) != part.size()) {
        throw Error(ErrorKind::InvalidStrategyConfig, "one inverse per block required");
    }
    if (rule == BcdRule::RandDiagSingleRow && !is_singleton(part)) {
        throw Error(ErrorKind::InvalidStrategyConfig, "rand-diag needs a singleton partition");
    }
    for (const auto& inv : inverses) {
        if (rule == BcdRule::RandEigWeighted) {
            s.weights.push_back(1.0 / sym_eigvals(inv)(0));
        } else {
            s.weights.push_back(1.0 / inv(0, 0));
        }
    }
    s.sampler = std::discrete_distribution<Index>(s.weights.begin(), s.weights.end());
    return s;
}

StepReport bcd_step(SolverState& state, BlockSource& source, const BlockInverses& inverses,
                    BcdStrategy& strategy)
{
    const auto& part = source.partition();
    Index block = 0;
    if (strategy.rule == BcdRule::RoundRobin) {
        block = state.cursor;
        state.cursor = (state.cursor + 1) % part.size();
    } else {
        block = strategy.sampler(state.rng);
    }
    return coordinate_step(state, source, block, inverses[static_cast<std::size_t>(block)]);
}

BkStrategy make_bk_strategy(BkRule rule, BlockSource& source, bool allow_quadratic)
{
    if (rule == BkRule::Greedy && source.dim() > tol::quadratic_cap && !allow_quadratic) {
        throw Error(ErrorKind::NotHdcAdmissible,
                    "greedy block Kaczmarz is O(n^2) per step; n = " + std::to_string(source.dim()));
    }
    BkStrategy s;
    s.rule = rule;
    const Index m = source.block_count();
    for (Index i = 0; i < m; ++i) {
        const auto blk = source.fetch_block(i);
        const Matrix gram = blk.rows() * blk.rows().transpose();
        Eigen::LLT<Matrix> llt(gram);
        const double floor = tol::cholesky_pivot * gram.diagonal().maxCoeff();
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array().square() > floor).all()) {
            throw Error(ErrorKind::SingularBlockGram, "P_pi P_pi^T singular for block " + std::to_string(i));
        }
        s.grams.push_back(std::move(llt));
        s.weights.push_back(blk.rows().squaredNorm());
    }
    if (rule == BkRule::RandRowNormSq) {
        s.sampler = std::discrete_distribution<Index>(s.weights.begin(), s.weights.end());
    }
    return s;
}

StepReport bk_step(SolverState& state, BlockSource& source, BkStrategy& strategy)
{
    const auto& part = source.partition();
    StepReport rep;
    ResidentRows chosen;
    Vector residual;

    if (strategy.rule == BkRule::Greedy) {
        // Scores need every block's residual: one full pass, O(n^2).
        double best = -1;
        for (Index i = 0; i < part.size(); ++i) {
            auto blk = source.fetch_block(i);
            Vector res = blk.q() - blk.rows() * state.x;
            const double score = res.dot(strategy.grams[static_cast<std::size_t>(i)].solve(res));
            if (score > best) {
                best = score;
                rep.block = i;
                residual = std::move(res);
                chosen = std::move(blk);
            }
        }
        rep.blocks_fetched = part.size();
        rep.rows_touched = part.n();
    } else {
        if (strategy.rule == BkRule::RoundRobin) {
            rep.block = state.cursor;
            state.cursor = (state.cursor + 1) % part.size();
        } else {
            rep.block = strategy.sampler(state.rng);
        }
        chosen = source.fetch_block(rep.block);
        residual = chosen.q() - chosen.rows() * state.x;
        rep.blocks_fetched = 1;
        rep.rows_touched = chosen.count();
    }

    const Vector y = strategy.grams[static_cast<std::size_t>(rep.block)].solve(residual);
    rep.beta = residual.dot(y);
    state.x.noalias() += chosen.rows().transpose() * y;
    rep.dense_update = true;
    return rep;
}

StepReport gbcd_bs_step(SolverState& state, BlockSource& source, const Vector& diag, Index r)
{
    const Index n = state.x.size();
    if (r < 1 || r >= n) throw Error(ErrorKind::InvalidShape, "need 1 <= r < n");

    Vector score(n);
    for (Index i = 0; i < n; ++i) score(i) = state.grad(i) * state.grad(i) / diag(i);
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + r, order.end(), [&](Index a, Index b) {
        return score(a) > score(b) || (score(a) == score(b) && a < b);
    });
    std::vector<Index> sigma(order.begin(), order.begin() + r);

    const auto blk = source.fetch_rows(sigma);
    const Matrix pss = blk.rows()(Eigen::all, sigma);
    const Matrix l = cholesky(pss);
    const Vector residual = blk.q() - blk.rows() * state.x;
    Vector alpha = l.triangularView<Eigen::Lower>().solve(residual);
    l.transpose().triangularView<Eigen::Upper>().solveInPlace(alpha);

    StepReport rep;
    rep.block = sigma.front();
    rep.beta = residual.dot(alpha);
    std::vector<Index> touched;
    for (const Index i : sigma) touched.push_back(source.partition().owner()[static_cast<std::size_t>(i)]);
    std::sort(touched.begin(), touched.end());
    rep.blocks_fetched = static_cast<Index>(std::unique(touched.begin(), touched.end()) - touched.begin());
    rep.rows_touched = r;
    rep.contiguous = false;
    rep.updated = sigma;
    apply_block_update(state, blk, sigma, alpha);
    return rep;
}

StepReport steepest_descent_step(SolverState& state, BlockSource& source)
{
    StepReport rep;
    rep.blocks_fetched = source.block_count();
    rep.rows_touched = source.dim();
    rep.dense_update = true;
    const Vector pg = stream_product(source, state.grad);
    const double gg = state.grad.squaredNorm();
    const double gpg = state.grad.dot(pg);
    if (gg == 0 || !(gpg > 0)) return rep;
    const double t = gg / gpg;
    rep.beta = gg * t;
    state.x.noalias() -= t * state.grad;
    state.grad.noalias() -= t * pg;
    return rep;
}

StepReport conjugate_gradient_step(SolverState& state, BlockSource& source)
{
    StepReport rep;
    rep.blocks_fetched = source.block_count();
    rep.rows_touched = source.dim();
    rep.dense_update = true;
    if (state.cg_dir.size() != state.x.size()) {
        state.cg_dir = -state.grad;
        state.cg_rr = state.grad.squaredNorm();
    }
    const Vector pd = stream_product(source, state.cg_dir);
    const double dpd = state.cg_dir.dot(pd);
    if (state.cg_rr == 0 || !(dpd > 0)) return rep;
    const double a = state.cg_rr / dpd;
    rep.beta = a * state.cg_rr;
    state.x.noalias() += a * state.cg_dir;
    state.grad.noalias() += a * pd;
    const double rr = state.grad.squaredNorm();
    state.cg_dir = -state.grad + (rr / state.cg_rr) * state.cg_dir;
    state.cg_rr = rr;
    return rep;
}

Vector dldr_step(const Vector& x, const Matrix& m, DldrObjective objective, const Matrix& p,
                 const Vector& q, const Oracle& oracle)
{
    const Index n = x.size();
    if (m.rows() != n || m.cols() < 1 || m.cols() > n || oracle.x_opt.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "dldr_step: shapes");
    }
    auto factor = [](const Matrix& g) {
        try {
            return cholesky(g);
        } catch (const Error&) {
            throw Error(ErrorKind::RankDeficient, "M does not have full column rank");
        }
    };
    auto solve = [](const Matrix& l, Vector b) {
        l.triangularView<Eigen::Lower>().solveInPlace(b);
        l.transpose().triangularView<Eigen::Upper>().solveInPlace(b);
        return b;
    };
    const Vector diff = oracle.x_opt - x;

    if (objective == DldrObjective::TwoNorm) {
        const Matrix l = factor(m.transpose() * m);
        return x + m * solve(l, m.transpose() * diff);
    }
    if (p.rows() != n || p.cols() != n || q.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "dldr_step: P or q shape");
    }
    const Matrix pm = p * m;
    const Matrix l = factor(m.transpose() * pm);
    const Vector with_oracle = m * solve(l, pm.transpose() * diff);
    const Vector oracle_free = m * solve(l, m.transpose() * q - pm.transpose() * x);
    const double gap = (with_oracle - oracle_free).lpNorm<Eigen::Infinity>();
    if (gap > tol::dldr_routes * (1.0 + oracle_free.lpNorm<Eigen::Infinity>())) {
        throw Error(ErrorKind::RouteMismatch,
                    "oracle and oracle-free P-norm steps differ by " + std::to_string(gap));
    }
    return x + oracle_free;
}

std::string_view to_string(Method method)
{
    switch (method) {
        case Method::Gbcd: return "gbcd";
        case Method::Bcd: return "bcd";
        case Method::Bk: return "bk";
        case Method::GbcdBs: return "gbcd-bs";
        case Method::SteepestDescent: return "sd";
        case Method::ConjugateGradient: return "cg";
    }
    return "?";
}

std::string_view to_string(Strategy strategy)
{
    switch (strategy) {
        case Strategy::Auto: return "auto";
        case Strategy::Greedy: return "greedy";
        case Strategy::RoundRobin: return "round-robin";
        case Strategy::RandEigWeighted: return "rand-eig";
        case Strategy::RandDiagSingleRow: return "rand-diag";
        case Strategy::RandRowNormSq: return "rand-row-norm";
    }
    return "?";
}

std::optional<Method> parse_method(std::string_view text)
{
    for (const auto m : {Method::Gbcd, Method::Bcd, Method::Bk, Method::GbcdBs, Method::SteepestDescent,
                         Method::ConjugateGradient}) {
        if (text == to_string(m)) return m;
    }
    return std::nullopt;
}

std::optional<Strategy> parse_strategy(std::string_view text)
{
    for (const auto s : {Strategy::Auto, Strategy::Greedy, Strategy::RoundRobin, Strategy::RandEigWeighted,
                         Strategy::RandDiagSingleRow, Strategy::RandRowNormSq}) {
        if (text == to_string(s)) return s;
    }
    return std::nullopt;
}

Strategy resolve_strategy(Method method, Strategy strategy)
{
    auto bad = [&] {
        return Error(ErrorKind::InvalidStrategyConfig, "strategy '" + std::string(to_string(strategy)) +
                                                           "' is not available for method '" +
                                                           std::string(to_string(method)) + "'");
    };
    switch (method) {
        case Method::Gbcd:
        case Method::GbcdBs:
            if (strategy == Strategy::Auto || strategy == Strategy::Greedy) return Strategy::Greedy;
            throw bad();
        case Method::Bcd:
            if (strategy == Strategy::Auto) return Strategy::RoundRobin;
            if (strategy == Strategy::RoundRobin || strategy == Strategy::RandEigWeighted ||
                strategy == Strategy::RandDiagSingleRow)
                return strategy;
            throw bad();
        case Method::Bk:
            if (strategy == Strategy::Auto) return Strategy::RoundRobin;
            if (strategy == Strategy::RoundRobin || strategy == Strategy::RandRowNormSq ||
                strategy == Strategy::Greedy)
                return strategy;
            throw bad();
        case Method::SteepestDescent:
        case Method::ConjugateGradient:
            if (strategy == Strategy::Auto) return Strategy::Auto;
            throw bad();
    }
    throw bad();
}

bool maintains_gradient(Method method) { return method != Method::Bk; }

bool is_quadratic(Method method, Strategy strategy)
{
    return method == Method::SteepestDescent || method == Method::ConjugateGradient ||
           (method == Method::Bk && strategy == Strategy::Greedy);
}

Solver::Solver(BlockSource& source, MethodConfig config, std::optional<Vector> x0,
               std::optional<BlockInverses> inverses)
    : source_(source), config_(config)
{
    config_.strategy = resolve_strategy(config_.method, config_.strategy);
    const auto& part = source_.partition();
    const Index n = part.n();

    if (is_quadratic(config_.method, config_.strategy) && n > tol::quadratic_cap &&
        !config_.allow_quadratic) {
        throw Error(ErrorKind::NotHdcAdmissible,
                    std::string(to_string(config_.method)) + " costs O(n^2) per iteration at n = " +
                        std::to_string(n) + "; pass allow_quadratic to run it anyway");
    }
    if (config_.method == Method::GbcdBs && (config_.bs_rows < 1 || config_.bs_rows >= n)) {
        throw Error(ErrorKind::InvalidShape, "gbcd-bs needs 1 <= r < n");
    }
    if (config_.limits) {
        const auto& lim = *config_.limits;
        const bool ok = [&] {
            switch (config_.method) {
                case Method::Gbcd: return hdc_admissible(part, lim, MethodFamily::GBCD);
                case Method::Bcd: return hdc_admissible(part, lim, MethodFamily::BCD);
                case Method::Bk: return hdc_admissible(part, lim, MethodFamily::BK);
                case Method::GbcdBs:
                    return static_cast<double>(config_.bs_rows) < hdc_cap(n, lim, MethodFamily::GBCD);
                default: return true;
            }
        }();
        if (!ok) {
            throw Error(ErrorKind::NotHdcAdmissible,
                        "block size " + std::to_string(part.max_block_size()) +
                            " exceeds the high-dimension cap for " + std::string(to_string(config_.method)));
        }
    }

    state_ = SolverState::at_origin(source_.q(), config_.seed);
    state_.grad_maintained = maintains_gradient(config_.method);
    if (x0) {
        if (x0->size() != n) throw Error(ErrorKind::DimensionMismatch, "x0 length");
        state_.x = *x0;
        if (state_.grad_maintained) state_.grad = stream_product(source_, state_.x) - source_.q();
    }

    const bool needs_inverses = config_.method == Method::Gbcd || config_.method == Method::Bcd;
    if (needs_inverses) {
        inverses_ = inverses ? std::move(*inverses) : compute_inverses(source_, config_.n_workers);
        if (static_cast<Index>(inverses_.size()) != part.size()) {
            throw Error(ErrorKind::DimensionMismatch, "one inverse per block required");
        }
    }
    if (config_.method == Method::Bcd) {
        const BcdRule rule = config_.strategy == Strategy::RoundRobin        ? BcdRule::RoundRobin
                             : config_.strategy == Strategy::RandEigWeighted ? BcdRule::RandEigWeighted
                                                                             : BcdRule::RandDiagSingleRow;
        bcd_ = make_bcd_strategy(rule, part, inverses_);
    }
    if (config_.method == Method::Bk) {
        const BkRule rule = config_.strategy == Strategy::RoundRobin      ? BkRule::RoundRobin
                            : config_.strategy == Strategy::RandRowNormSq ? BkRule::RandRowNormSq
                                                                          : BkRule::Greedy;
        bk_ = make_bk_strategy(rule, source_, config_.allow_quadratic);
    }
    if (config_.method == Method::GbcdBs) {
        diag_.resize(n);
        for (Index i = 0; i < part.size(); ++i) {
            const auto pi = part.block(i);
            const auto blk = source_.fetch_block(i);
            for (std::size_t j = 0; j < pi.size(); ++j) diag_(pi[j]) = blk.rows()(static_cast<Index>(j), pi[j]);
        }
    }
}

StepReport Solver::step()
{
    StepReport rep;
    switch (config_.method) {
        case Method::Gbcd: rep = gbcd_step(state_, source_, inverses_, config_.n_workers); break;
        case Method::Bcd: rep = bcd_step(state_, source_, inverses_, bcd_); break;
        case Method::Bk: rep = bk_step(state_, source_, bk_); break;
        case Method::GbcdBs: rep = gbcd_bs_step(state_, source_, diag_, config_.bs_rows); break;
        case Method::SteepestDescent: rep = steepest_descent_step(state_, source_); break;
        case Method::ConjugateGradient: rep = conjugate_gradient_step(state_, source_); break;
    }
    if (rep.dense_update) {
        check_finite(state_.x);
    } else {
        for (const Index i : rep.updated)
            if (!std::isfinite(state_.x(i))) throw Error(ErrorKind::NonFinite, "iterate left the finite range");
    }
    ++state_.k;
    return rep;
}

double Solver::gradient_drift()
{
    const Vector g = stream_product(source_, state_.x) - source_.q();
    return (g - state_.grad).lpNorm<Eigen::Infinity>();
}

double Solver::residual_norm() { return (stream_product(source_, state_.x) - source_.q()).norm(); }

std::string_view to_string(StopReason reason)
{
    switch (reason) {
        case StopReason::MaxIterations: return "max-iterations";
        case StopReason::GradientTolerance: return "gradient-tolerance";
        case StopReason::OracleTolerance: return "oracle-tolerance";
        case StopReason::ResidualTolerance: return "residual-tolerance";
    }
    return "?";
}

ErrorTracker::ErrorTracker(std::shared_ptr<const Matrix> p, const Oracle& oracle, const Vector& x0,
                           bool exact, Index resync)
    : p_(std::move(p)), x_opt_(oracle.x_opt), exact_(exact), resync_every_(std::max<Index>(resync, 1))
{
    if (!p_ || p_->rows() != x0.size() || x_opt_.size() != x0.size()) {
        throw Error(ErrorKind::DimensionMismatch, "ErrorTracker: shapes");
    }
    e_ = x0 - x_opt_;
    pe_ = *p_ * e_;
    e0_p_sq_ = e_.dot(pe_);
    e0_2_ = e_.norm();
}

void ErrorTracker::resync()
{
    pe_.noalias() = *p_ * e_;
    since_sync_ = 0;
}

void ErrorTracker::update(const Vector& x, const StepReport& report)
{
    if (exact_ || report.dense_update) {
        e_ = x - x_opt_;
        resync();
        return;
    }
    for (const Index j : report.updated) {
        const double delta = (x(j) - x_opt_(j)) - e_(j);
        if (delta == 0) continue;
        e_(j) += delta;
        pe_.noalias() += delta * p_->col(j);
    }
    if (++since_sync_ >= resync_every_) resync();
}

double ErrorTracker::e_pnorm() const
{
    if (e0_p_sq_ == 0) return 0;
    return std::sqrt(std::max(pnorm_sq(), 0.0) / e0_p_sq_);
}

double ErrorTracker::e_2norm() const
{
    if (e0_2_ == 0) return 0;
    return e_.norm() / e0_2_;
}

SolveResult run(Solver& solver, const StopRule& stop, const MetricContext* metrics, const TraceSink& sink)
{
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto& source = solver.source();
    const auto fetched0 = source.counters().blocks_fetched;
    const Vector& q = solver.source().q();
    const double q_norm = q.norm();
    const bool grad_rule = stop.grad_tol > 0 && solver.state().grad_maintained;
    const bool residual_rule = stop.grad_tol > 0 && !solver.state().grad_maintained;
    const Index residual_period = stop.residual_period > 0 ? stop.residual_period : source.block_count();

    std::optional<ErrorTracker> tracker;
    if (metrics && metrics->oracle && metrics->p) {
        tracker.emplace(metrics->p, *metrics->oracle, solver.state().x, metrics->exact);
    }
    const bool oracle_rule = tracker && stop.eps > 0;

    auto emit = [&](Index k, const StepReport* rep) {
        if (!sink) return;
        TraceRecord rec;
        rec.k = k;
        rec.wall_nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
        if (tracker) {
            rec.e_pnorm = tracker->e_pnorm();
            rec.e_2norm = tracker->e_2norm();
            rec.f_gap = tracker->f_gap();
        }
        if (rep) {
            rec.block = rep->block;
            rec.beta = rep->beta;
            rec.blocks_fetched = rep->blocks_fetched;
            rec.rows_touched = rep->rows_touched;
        }
        sink(rec);
    };

    SolveResult res;
    emit(0, nullptr);
    for (;;) {
        const Index k = solver.state().k;
        if (oracle_rule && tracker->e_pnorm() < stop.eps) {
            res.reason = StopReason::OracleTolerance;
            res.converged = true;
            break;
        }
        if (grad_rule && solver.state().grad.norm() <= stop.grad_tol * q_norm) {
            res.reason = StopReason::GradientTolerance;
            res.converged = true;
            break;
        }
        if (residual_rule && k > 0 && k % residual_period == 0 &&
            solver.residual_norm() <= stop.grad_tol * q_norm) {
            res.reason = StopReason::ResidualTolerance;
            res.converged = true;
            break;
        }
        if (k >= stop.max_iters) {
            res.reason = StopReason::MaxIterations;
            res.converged = !oracle_rule && !(stop.grad_tol > 0);
            break;
        }
        StepReport rep = solver.step();
        if (tracker) {
            const double before = tracker->pnorm_sq();
            tracker->update(solver.state().x, rep);
            rep.delta_pnormsq = before - tracker->pnorm_sq();
        }
        res.chosen_blocks.push_back(rep.block);
        emit(solver.state().k, &rep);
    }

    const auto& st = solver.state();
    res.x = st.x;
    res.iterations = st.k;
    if (tracker) {
        res.e_pnorm = tracker->e_pnorm();
        res.e_2norm = tracker->e_2norm();
    }
    if (st.grad_maintained) res.grad_norm = st.grad.norm();
    res.blocks_fetched = source.counters().blocks_fetched - fetched0;
    return res;
}

SolveResult solve(const UqpProblem& prob, const Partition& part, const MethodConfig& config,
                  const StopRule& stop, const Oracle* oracle, const TraceSink& sink)
{
    MetricContext metrics;
    metrics.oracle = oracle;
    if (prob.in_memory()) {
        MemoryBlocks source(prob.matrix_ptr(), prob.q, part);
        Solver solver(source, config);
        metrics.p = prob.matrix_ptr();
        return run(solver, stop, &metrics, sink);
    }
    auto store = prob.store();
    if (!(store->partition() == part)) {
        throw Error(ErrorKind::InvalidPartition, "store was written with a different partition");
    }
    std::optional<BlockInverses> inverses;
    if (config.method == Method::Gbcd || config.method == Method::Bcd) {
        inverses = ensure_inverses(*store, config.n_workers);
    }
    Solver solver(*store, config, std::nullopt, std::move(inverses));
    if (oracle) metrics.p = std::make_shared<const Matrix>(materialize(prob));
    return run(solver, stop, &metrics, sink);
}

} // namespace uqp
