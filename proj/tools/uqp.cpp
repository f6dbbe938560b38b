#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <uqp/bench.hpp>
#include <uqp/blockstore.hpp>
#include <uqp/partition.hpp>
#include <uqp/problem.hpp>
#include <uqp/solvers.hpp>

namespace {

using namespace uqp;

enum Exit : int { Ok = 0, Failure = 1, Usage = 2, Io = 3, NotConverged = 4, Capability = 5 };

int exit_code(ErrorKind kind)
{
    switch (kind) {
        case ErrorKind::InvalidPartition:
        case ErrorKind::InvalidShape:
        case ErrorKind::InvalidStrategyConfig:
        case ErrorKind::DimensionMismatch:
        case ErrorKind::IndexOutOfRange:
        case ErrorKind::InvalidAssignment: return Usage;
        case ErrorKind::IoError:
        case ErrorKind::ChecksumMismatch: return Io;
        case ErrorKind::TooLargeForDirect:
        case ErrorKind::NotHdcAdmissible: return Capability;
        default: return Failure;
    }
}

struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot create " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

/// Inverse cache location: UQP_CACHE_DIR/<store id> when the variable is set.
void apply_cache_dir(BlockStore& store)
{
    const char* env = std::getenv("UQP_CACHE_DIR");
    if (!env || !*env) return;
    const auto canon = fs::weakly_canonical(store.root()).string();
    const auto id = crc32_of({reinterpret_cast<const unsigned char*>(canon.data()), canon.size()});
    char name[32];
    std::snprintf(name, sizeof name, "store-%08x", id);
    store.set_inverse_dir(fs::path(env) / name);
}

std::shared_ptr<BlockStore> open_store(const fs::path& root)
{
    auto store = BlockStore::open(root, false);
    apply_cache_dir(*store);
    store->verify();
    return store;
}

// ---------------------------------------------------------------------------

struct GenArgs
{
    std::string kind = "block-dominant";
    Index n = 0;
    Index block = 64;
    double diag = 10;
    double off = 0.1;
    Index heavy = 8;
    double factor = 1000;
    std::uint64_t seed = 0;
    fs::path out;
    std::optional<Index> part_size;
    std::string layout = "contiguous";
    fs::path partition;
    unsigned workers = 1;
};

int cmd_gen(const GenArgs& a)
{
    std::printf("gen kind=%s n=%td seed=%" PRIu64 " layout=%s\n", a.kind.c_str(), a.n, a.seed, a.layout.c_str());
    UqpProblem prob;
    std::vector<Index> heavy;
    Index default_part = 1;
    if (a.kind == "block-dominant") {
        std::printf("  block=%td diag=%g off=%g\n", a.block, a.diag, a.off);
        prob = gen_block_dominant(a.n, a.block, a.diag, a.off, a.seed);
        default_part = a.block;
    } else if (a.kind == "scaled-rows") {
        std::printf("  heavy=%td factor=%g\n", a.heavy, a.factor);
        auto inst = gen_scaled_rows(a.n, a.heavy, a.factor, a.seed);
        prob = std::move(inst.problem);
        heavy = std::move(inst.heavy);
    } else if (a.kind == "random-spd") {
        prob = gen_random_spd(a.n, a.seed);
    } else {
        throw UsageError("unknown --kind '" + a.kind + "'");
    }

    Partition part;
    if (!a.partition.empty()) {
        part = Partition::from_text(read_text(a.partition));
    } else {
        const Index d = a.part_size.value_or(default_part);
        if (a.layout == "contiguous") {
            part = contiguous_partition(a.n, d);
        } else if (a.layout == "random") {
            part = random_partition(a.n, d, a.seed);
        } else if (a.layout == "dominant") {
            if (heavy.empty()) throw UsageError("--layout dominant needs --kind scaled-rows");
            part = dominant_partition(a.n, d, heavy, a.seed);
        } else {
            throw UsageError("unknown --layout '" + a.layout + "'");
        }
    }

    auto store = BlockStore::write(prob, part, a.out);
    apply_cache_dir(*store);
    store->precompute_inverses(a.workers);
    write_text(a.out / "partition.txt", part.to_text());
    if (!heavy.empty()) {
        std::string text;
        for (const Index i : heavy) text += std::to_string(i) + "\n";
        write_text(a.out / "heavy.txt", text);
    }
    bool oracle = false;
    if (a.n <= tol::direct_cap) {
        write_oracle(a.out / "oracle.bin", solve_direct(prob), prob.r);
        oracle = true;
    }
    std::printf("store: n=%td m=%td d=%td block_files=%td inverses=%td oracle=%s\n", part.n(), part.size(),
                part.max_block_size(), part.size(), part.size(), oracle ? "yes" : "no");
    return Ok;
}

// ---------------------------------------------------------------------------

struct SolveArgs
{
    fs::path store;
    std::string method = "gbcd";
    std::string strategy = "auto";
    double eps = 0;
    double grad_tol = 0;
    Index max_iters = 1000;
    fs::path trace;
    fs::path oracle;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::optional<Index> rho;
    bool allow_quadratic = false;
    Index bs_rows = 1;
};

int cmd_solve(const SolveArgs& a)
{
    const auto method = parse_method(a.method);
    if (!method) throw UsageError("unknown --method '" + a.method + "'");
    const auto strategy = parse_strategy(a.strategy);
    if (!strategy) throw UsageError("unknown --strategy '" + a.strategy + "'");

    MethodConfig cfg;
    cfg.method = *method;
    cfg.strategy = resolve_strategy(*method, *strategy);
    cfg.seed = a.seed;
    cfg.n_workers = a.workers;
    cfg.allow_quadratic = a.allow_quadratic;
    cfg.bs_rows = a.bs_rows;
    if (a.rho) cfg.limits = HdcLimits{*a.rho};

    auto store = open_store(a.store);
    const Index n = store->dim();
    if (is_quadratic(cfg.method, cfg.strategy)) {
        std::printf("warning: %s/%s is not high-dimension compliant (O(n^2) per iteration)\n",
                    std::string(to_string(cfg.method)).c_str(), std::string(to_string(cfg.strategy)).c_str());
    }

    std::optional<Oracle> oracle;
    const fs::path oracle_path = a.oracle.empty() ? a.store / "oracle.bin" : a.oracle;
    if (fs::exists(oracle_path)) oracle = read_oracle(oracle_path);
    if (a.eps > 0 && !oracle) throw UsageError("--eps needs an oracle sidecar");
    if (oracle && oracle->x_opt.size() != n) throw Error(ErrorKind::DimensionMismatch, "oracle length differs from store");

    std::printf("solve store=%s n=%td m=%td method=%s strategy=%s seed=%" PRIu64
                " eps=%g grad_tol=%g max_iters=%td workers=%u bs_rows=%td rho=%s allow_quadratic=%s oracle=%s\n",
                a.store.filename().empty() ? a.store.parent_path().filename().string().c_str()
                                           : a.store.filename().string().c_str(),
                n, store->block_count(), std::string(to_string(cfg.method)).c_str(),
                std::string(to_string(cfg.strategy)).c_str(), cfg.seed, a.eps, a.grad_tol, a.max_iters, cfg.n_workers,
                cfg.bs_rows, a.rho ? std::to_string(*a.rho).c_str() : "none", cfg.allow_quadratic ? "yes" : "no",
                oracle ? "yes" : "no");

    std::optional<BlockInverses> inverses;
    if (cfg.method == Method::Gbcd || cfg.method == Method::Bcd) inverses = ensure_inverses(*store, cfg.n_workers);
    Solver solver(*store, cfg, std::nullopt, std::move(inverses));

    MetricContext metrics;
    if (oracle) {
        metrics.oracle = &*oracle;
        metrics.p = std::make_shared<const Matrix>(materialize(UqpProblem::from_store(store)));
    }
    StopRule stop;
    stop.max_iters = a.max_iters;
    stop.eps = a.eps;
    stop.grad_tol = a.grad_tol;

    Trace trace;
    TraceSink sink;
    if (!a.trace.empty()) sink = [&](const TraceRecord& r) { trace.push_back(r); };
    const auto res = run(solver, stop, oracle ? &metrics : nullptr, sink);
    if (!a.trace.empty()) write_csv(trace, a.trace);

    std::printf("iterations=%td reason=%s converged=%s\n", res.iterations,
                std::string(to_string(res.reason)).c_str(), res.converged ? "yes" : "no");
    std::printf("e_pnorm=%.17g e_2norm=%.17g grad_norm=%.17g blocks_fetched=%" PRIu64 "\n", res.e_pnorm,
                res.e_2norm, res.grad_norm, res.blocks_fetched);
    return res.converged ? Ok : NotConverged;
}

// ---------------------------------------------------------------------------

int cmd_bound(const fs::path& store_path, const fs::path& partition_path)
{
    auto store = open_store(store_path);
    const Partition part =
        partition_path.empty() ? store->partition() : Partition::from_text(read_text(partition_path));
    if (part.n() != store->dim()) throw Error(ErrorKind::InvalidPartition, "partition size differs from the store");
    const Matrix p = materialize(UqpProblem::from_store(store), tol::eigen_cap);
    const auto rep = rate_bound(p, part);
    std::printf("bound n=%td partition=%s\n", part.n(), partition_path.empty() ? "store" : "file");
    std::printf("m=%td\n", rep.m);
    std::printf("lambda_min_pb=%.17g\n", rep.lambda_min_pb);
    std::printf("bound_exact=%.17g\n", rep.bound_exact);
    std::printf("bound_simple=%.17g\n", rep.bound_simple);
    std::printf("dominance_gap=%.17g\n", rep.dominance_gap);
    if (rep.bound_exact > 0) {
        std::printf("iterations_for_eps_1e-3<=%td\n", iteration_bound(rep.bound_exact, 1e-3));
    }
    const auto cond = condition_numbers(p);
    std::printf("kappa=%.17g kappa_tilde=%.17g (informational)\n", cond.kappa, cond.kappa_tilde);
    return Ok;
}

// ---------------------------------------------------------------------------

struct BenchArgs
{
    int experiment = 0;
    fs::path out;
    Index seeds = 1;
    std::optional<Index> n;
    std::optional<Index> block;
    std::optional<Index> heavy;
    std::optional<double> factor;
    std::optional<Index> budget;
    std::optional<Index> runs;
    std::optional<Index> max_iters;
    bool full_scale = false;
};

std::vector<std::uint64_t> seed_list(Index count)
{
    if (count < 1) throw UsageError("--seeds must be >= 1");
    std::vector<std::uint64_t> s;
    for (Index i = 1; i <= count; ++i) s.push_back(static_cast<std::uint64_t>(i));
    return s;
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

int cmd_bench(const BenchArgs& a)
{
    if (a.experiment < 1 || a.experiment > 3) throw UsageError("--experiment must be 1, 2 or 3");
    if (a.n && *a.n > tol::quadratic_cap && !a.full_scale) {
        throw UsageError("n above " + std::to_string(tol::quadratic_cap) + " needs --full-scale");
    }
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + a.out.string());

    std::string table;
    if (a.experiment == 1) {
        Experiment1Config c;
        c.seeds = seed_list(a.seeds);
        if (a.n) c.n = *a.n;
        if (a.block) c.block = c.bs_rows = *a.block;
        if (a.runs) c.rand_runs = *a.runs;
        if (a.max_iters) c.max_iters = *a.max_iters;
        c.work_dir = a.out / "exp1_store";
        const auto res = experiment1(c);
        std::map<std::string, int> counter;
        for (const auto& r : res.runs) {
            std::string name = "exp1_" + r.label + "_" + seed_tag(r.instance_seed);
            if (r.label == "RBCD") name += "_run" + std::to_string(counter[name]++);
            write_csv(r.trace, a.out / (name + ".csv"));
        }
        table = summary_table(res);
    } else if (a.experiment == 2) {
        Experiment2Config c;
        c.seeds = seed_list(a.seeds);
        if (a.n) c.n = *a.n;
        if (a.heavy) c.heavy = *a.heavy;
        if (a.factor) c.factor = *a.factor;
        if (a.budget) c.budget = *a.budget;
        if (a.runs) c.rand_runs = *a.runs;
        const auto res = experiment2(c);
        for (const auto& r : res.rows) {
            write_csv(r.mean_trace, a.out / ("exp2_" + r.label + "_" + seed_tag(r.seed) + ".csv"));
        }
        table = summary_table(res);
    } else {
        Experiment3Config c;
        c.seeds = seed_list(a.seeds);
        if (a.n) c.n = *a.n;
        if (a.block) c.block = *a.block;
        if (a.heavy) c.heavy = *a.heavy;
        if (a.factor) c.factor = *a.factor;
        if (a.max_iters) c.max_iters = *a.max_iters;
        const auto res = experiment3(c);
        for (const auto& r : res.seeds) {
            write_csv(r.random_run.trace, a.out / ("exp3_random_" + seed_tag(r.seed) + ".csv"));
            write_csv(r.dominant_run.trace, a.out / ("exp3_dominant_" + seed_tag(r.seed) + ".csv"));
        }
        table = summary_table(res);
    }
    write_text(a.out / "summary.txt", table);
    std::fputs(table.c_str(), stdout);
    return Ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Out-of-core solvers for unconstrained quadratic programs"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a problem and write it as a block store");
    g->add_option("--kind", gen.kind, "block-dominant | scaled-rows | random-spd")->capture_default_str();
    g->add_option("--n", gen.n, "dimension")->required();
    g->add_option("--block", gen.block, "tile size (block-dominant)")->capture_default_str();
    g->add_option("--diag", gen.diag, "diagonal tile scale")->capture_default_str();
    g->add_option("--off", gen.off, "off-diagonal tile scale")->capture_default_str();
    g->add_option("--heavy", gen.heavy, "heavy row count (scaled-rows)")->capture_default_str();
    g->add_option("--factor", gen.factor, "heavy row scale (scaled-rows)")->capture_default_str();
    g->add_option("--seed", gen.seed)->capture_default_str();
    g->add_option("--out", gen.out, "store directory")->required();
    g->add_option("--part-size", gen.part_size, "partition block size");
    g->add_option("--layout", gen.layout, "contiguous | random | dominant")->capture_default_str();
    g->add_option("--partition", gen.partition, "partition file (overrides --layout)");
    g->add_option("--workers", gen.workers, "threads for inverse precomputation")->capture_default_str();

    SolveArgs solve;
    auto* s = app.add_subcommand("solve", "run an iterative method on a store");
    s->add_option("--store", solve.store)->required();
    s->add_option("--method", solve.method, "gbcd | bcd | bk | sd | cg | gbcd-bs")->capture_default_str();
    s->add_option("--strategy", solve.strategy,
                  "auto | greedy | round-robin | rand-eig | rand-diag | rand-row-norm")
        ->capture_default_str();
    s->add_option("--eps", solve.eps, "stop when E_k < eps (needs the oracle sidecar)");
    s->add_option("--grad-tol", solve.grad_tol, "stop when ||grad|| <= tol * ||q||");
    s->add_option("--max-iters", solve.max_iters)->capture_default_str();
    s->add_option("--trace", solve.trace, "CSV trace output");
    s->add_option("--oracle", solve.oracle, "oracle sidecar (default <store>/oracle.bin)");
    s->add_option("--seed", solve.seed)->capture_default_str();
    s->add_option("--workers", solve.workers)->capture_default_str();
    s->add_option("--rho", solve.rho, "max resident rows; enforces the block-size caps");
    s->add_flag("--allow-quadratic", solve.allow_quadratic, "permit O(n^2)-per-iteration methods at any n");
    s->add_option("--bs-rows", solve.bs_rows, "rows per gbcd-bs iteration")->capture_default_str();

    fs::path bound_store;
    fs::path bound_partition;
    auto* b = app.add_subcommand("bound", "report the convergence-rate bounds of a partition");
    b->add_option("--store", bound_store)->required();
    b->add_option("--partition", bound_partition, "partition file (default: the store's)");

    BenchArgs bench;
    auto* e = app.add_subcommand("bench", "reproduce an experiment at desk scale");
    e->add_option("--experiment", bench.experiment, "1, 2 or 3")->required();
    e->add_option("--out", bench.out)->required();
    e->add_option("--seeds", bench.seeds, "number of instance seeds")->capture_default_str();
    e->add_option("--n", bench.n);
    e->add_option("--block", bench.block);
    e->add_option("--heavy", bench.heavy);
    e->add_option("--factor", bench.factor);
    e->add_option("--budget", bench.budget);
    e->add_option("--runs", bench.runs, "runs per randomized method");
    e->add_option("--max-iters", bench.max_iters);
    e->add_flag("--full-scale", bench.full_scale, "lift the desk-scale dimension limit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return Usage;
    }

    try {
        if (*g) return cmd_gen(gen);
        if (*s) return cmd_solve(solve);
        if (*b) return cmd_bound(bound_store, bound_partition);
        if (*e) return cmd_bench(bench);
    } catch (const UsageError& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return Usage;
    } catch (const Error& err) {
        std::fprintf(stderr, "error (%s): %s\n", std::string(to_string(err.kind())).c_str(), err.what());
        return exit_code(err.kind());
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return Failure;
    }
    return Usage;
}
