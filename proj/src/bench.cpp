#include <uqp/bench.hpp>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <uqp/blockstore.hpp>
#include <uqp/rng.hpp>

namespace uqp {

namespace {

constexpr const char* kCsvHeader = "k,wall_nanos,e_pnorm,e_2norm,f_gap,block,beta,blocks_fetched,rows_touched";

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));

std::string fmt(const char* f, ...)
{
    va_list args;
    va_start(args, f);
    va_list copy;
    va_copy(copy, args);
    const int len = std::vsnprintf(nullptr, 0, f, copy);
    va_end(copy);
    std::string out(static_cast<std::size_t>(len), '\0');
    std::vsnprintf(out.data(), out.size() + 1, f, args);
    va_end(args);
    return out;
}

MethodConfig config_for(Method method, Strategy strategy, std::uint64_t seed, Index bs_rows = 1)
{
    MethodConfig cfg;
    cfg.method = method;
    cfg.strategy = strategy;
    cfg.seed = seed;
    cfg.bs_rows = bs_rows;
    return cfg;
}

std::string fmt_iters(const std::optional<Index>& it)
{
    return it ? std::to_string(*it) : std::string("-");
}

} // namespace

RunRecord run_traced(Solver& solver, const StopRule& stop, std::shared_ptr<const Matrix> p,
                     const Oracle& oracle, std::string label, bool keep_trace)
{
    RunRecord rec;
    rec.label = std::move(label);
    rec.run_seed = solver.config().seed;
    MetricContext metrics{std::move(p), &oracle, false};
    bool first = true;
    const auto sink = [&](const TraceRecord& r) {
        if (r.k == 1 && first) {
            rec.rows_per_iter = r.rows_touched;
            first = false;
        }
        if (!rec.iters_to_eps && stop.eps > 0 && r.e_pnorm < stop.eps) rec.iters_to_eps = r.k;
        if (keep_trace) rec.trace.push_back(r);
    };
    auto res = run(solver, stop, &metrics, sink);
    rec.iterations = res.iterations;
    rec.final_e_pnorm = res.e_pnorm;
    rec.final_e_2norm = res.e_2norm;
    rec.blocks_fetched = res.blocks_fetched;
    rec.chosen_blocks = std::move(res.chosen_blocks);
    return rec;
}

double median(std::vector<double> values)
{
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const auto mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

double median_iters(std::span<const RunRecord> runs, std::string_view label, Index not_reached)
{
    std::vector<double> vals;
    for (const auto& r : runs) {
        if (r.label == label) vals.push_back(static_cast<double>(r.iters_to_eps.value_or(not_reached)));
    }
    return median(std::move(vals));
}

// ---------------------------------------------------------------------------

Experiment1Result experiment1(const Experiment1Config& config)
{
    Experiment1Result out;
    out.config = config;
    const Partition part = contiguous_partition(config.n, config.block);

    for (const auto seed : config.seeds) {
        const UqpProblem prob = gen_block_dominant(config.n, config.block, config.diag_scale, config.off_scale, seed);
        const Oracle oracle = solve_direct(prob);
        const auto p = prob.matrix_ptr();

        std::shared_ptr<BlockStore> store;
        std::unique_ptr<MemoryBlocks> memory;
        BlockSource* source = nullptr;
        BlockInverses inverses;
        if (!config.work_dir.empty()) {
            store = BlockStore::write(prob, part, config.work_dir / ("seed_" + std::to_string(seed)));
            inverses = ensure_inverses(*store);
            source = store.get();
        } else {
            memory = std::make_unique<MemoryBlocks>(p, prob.q, part);
            inverses = compute_inverses(*memory);
            source = memory.get();
        }

        StopRule stop;
        stop.eps = config.eps;
        stop.max_iters = config.max_iters;
        StopRule quad_stop = stop;
        quad_stop.max_iters = config.quadratic_max_iters;

        auto go = [&](const std::string& label, const MethodConfig& cfg, const StopRule& rule) {
            if (std::find(config.methods.begin(), config.methods.end(), label) == config.methods.end()) return;
            std::optional<BlockInverses> inv;
            if (cfg.method == Method::Gbcd || cfg.method == Method::Bcd) inv = inverses;
            Solver solver(*source, cfg, std::nullopt, std::move(inv));
            auto rec = run_traced(solver, rule, p, oracle, label, config.keep_traces);
            rec.instance_seed = seed;
            out.runs.push_back(std::move(rec));
        };

        go("GBCD", config_for(Method::Gbcd, Strategy::Greedy, seed), stop);
        go("BCD-RR", config_for(Method::Bcd, Strategy::RoundRobin, seed), stop);
        for (Index r = 0; r < config.rand_runs; ++r) {
            go("RBCD", config_for(Method::Bcd, Strategy::RandEigWeighted, derive_seed(seed, 100 + static_cast<std::uint64_t>(r))), stop);
        }
        go("GBCD-BS", config_for(Method::GbcdBs, Strategy::Greedy, seed, config.bs_rows), stop);
        go("SD", config_for(Method::SteepestDescent, Strategy::Auto, seed), quad_stop);
        go("CG", config_for(Method::ConjugateGradient, Strategy::Auto, seed), quad_stop);
    }
    return out;
}

std::string summary_table(const Experiment1Result& result)
{
    const auto& c = result.config;
    std::string s = fmt("experiment 1: n=%td block=%td diag=%g off=%g eps=%g seeds=%zu\n", c.n, c.block,
                        c.diag_scale, c.off_scale, c.eps, c.seeds.size());
    s += fmt("%-8s %8s %14s %14s %16s\n", "method", "runs", "median_iters", "rows_per_iter", "median_final_E");
    for (const char* label : {"GBCD", "BCD-RR", "RBCD", "GBCD-BS", "SD", "CG"}) {
        std::vector<double> finals;
        Index rows = 0;
        Index count = 0;
        Index cap = 0;
        for (const auto& r : result.runs) {
            if (r.label != label) continue;
            finals.push_back(r.final_e_pnorm);
            rows = r.rows_per_iter;
            cap = std::max(cap, r.iterations);
            ++count;
        }
        if (!count) continue;
        const double med = median_iters(result.runs, label, cap + 1);
        const bool reached = med <= static_cast<double>(cap);
        s += fmt("%-8s %8td %14s %14td %16.6e\n", label, count,
                 reached ? fmt("%.1f", med).c_str() : ">cap", rows, median(finals));
    }
    return s;
}

// ---------------------------------------------------------------------------

Experiment2Result experiment2(const Experiment2Config& config)
{
    Experiment2Result out;
    out.config = config;
    const Partition part = Partition::singletons(config.n);

    for (const auto seed : config.seeds) {
        const auto inst = gen_scaled_rows(config.n, config.heavy, config.factor, seed);
        const Oracle oracle = solve_direct(inst.problem);
        const auto p = inst.problem.matrix_ptr();
        MemoryBlocks source(p, inst.problem.q, part);
        const BlockInverses inverses = compute_inverses(source);
        std::vector<char> is_heavy(static_cast<std::size_t>(config.n), 0);
        for (const Index i : inst.heavy) is_heavy[static_cast<std::size_t>(i)] = 1;

        StopRule stop;
        stop.max_iters = config.budget;

        auto aggregate = [&](const std::string& label, Method method, Strategy strategy, Index runs) {
            Experiment2Row row;
            row.label = label;
            row.seed = seed;
            row.runs = runs;
            std::uint64_t picks = 0;
            std::uint64_t on_tau = 0;
            for (Index r = 0; r < runs; ++r) {
                const auto run_seed = runs == 1 ? seed : derive_seed(seed, 200 + static_cast<std::uint64_t>(r));
                std::optional<BlockInverses> inv;
                if (method != Method::Bk) inv = inverses;
                Solver solver(source, config_for(method, strategy, run_seed), std::nullopt, std::move(inv));
                const auto rec = run_traced(solver, stop, p, oracle, label);
                row.mean_e_2norm += rec.final_e_2norm / static_cast<double>(runs);
                row.mean_e_pnorm += rec.final_e_pnorm / static_cast<double>(runs);
                for (const Index b : rec.chosen_blocks) {
                    ++picks;
                    on_tau += static_cast<std::uint64_t>(is_heavy[static_cast<std::size_t>(b)]);
                }
                if (row.mean_trace.empty()) {
                    row.mean_trace = rec.trace;
                    for (auto& t : row.mean_trace) {
                        t.e_pnorm = t.e_2norm = t.f_gap = 0;
                        t.wall_nanos = 0;
                        t.beta = 0;
                        if (runs > 1) t.block = -1;
                    }
                }
                const auto w = 1.0 / static_cast<double>(runs);
                for (std::size_t k = 0; k < rec.trace.size() && k < row.mean_trace.size(); ++k) {
                    auto& t = row.mean_trace[k];
                    t.e_pnorm += w * rec.trace[k].e_pnorm;
                    t.e_2norm += w * rec.trace[k].e_2norm;
                    t.f_gap += w * rec.trace[k].f_gap;
                    t.beta += w * rec.trace[k].beta;
                    t.wall_nanos += rec.trace[k].wall_nanos / runs;
                }
            }
            row.tau_mass = picks ? static_cast<double>(on_tau) / static_cast<double>(picks) : 0;
            out.rows.push_back(std::move(row));
        };

        aggregate("GBCD", Method::Gbcd, Strategy::Greedy, 1);
        aggregate("RCD", Method::Bcd, Strategy::RandDiagSingleRow, config.rand_runs);
        aggregate("RK", Method::Bk, Strategy::RandRowNormSq, config.rand_runs);
    }
    return out;
}

std::string summary_table(const Experiment2Result& result)
{
    const auto& c = result.config;
    std::string s = fmt("experiment 2: n=%td heavy=%td factor=%g budget=%td seeds=%zu runs=%td\n", c.n, c.heavy,
                        c.factor, c.budget, c.seeds.size(), c.rand_runs);
    s += fmt("%-6s %6s %16s %16s %10s\n", "method", "seed", "mean_E2", "mean_EP", "tau_mass");
    for (const auto& r : result.rows) {
        s += fmt("%-6s %6" PRIu64 " %16.6e %16.6e %10.4f\n", r.label.c_str(), r.seed, r.mean_e_2norm,
                 r.mean_e_pnorm, r.tau_mass);
    }
    return s;
}

// ---------------------------------------------------------------------------

Experiment3Result experiment3(const Experiment3Config& config)
{
    Experiment3Result out;
    out.config = config;
    for (const auto seed : config.seeds) {
        const auto inst = gen_scaled_rows(config.n, config.heavy, config.factor, seed);
        const Oracle oracle = solve_direct(inst.problem);
        const auto p = inst.problem.matrix_ptr();

        StopRule stop;
        stop.eps = config.eps;
        stop.max_iters = config.max_iters;

        auto go = [&](const Partition& part, const std::string& label) {
            MemoryBlocks source(p, inst.problem.q, part);
            Solver solver(source, config_for(Method::Gbcd, Strategy::Greedy, seed));
            auto rec = run_traced(solver, stop, p, oracle, label, config.keep_traces);
            rec.instance_seed = seed;
            return rec;
        };

        Experiment3Seed row;
        row.seed = seed;
        const Partition random = random_partition(config.n, config.block, seed);
        const Partition dominant = dominant_partition(config.n, config.block, inst.heavy, seed);
        row.random_run = go(random, "random");
        row.dominant_run = go(dominant, "dominant");
        row.random_bound = rate_bound(*p, random);
        row.dominant_bound = rate_bound(*p, dominant);
        out.seeds.push_back(std::move(row));
    }
    return out;
}

std::string summary_table(const Experiment3Result& result)
{
    const auto& c = result.config;
    std::string s = fmt("experiment 3: n=%td heavy=%td factor=%g block=%td eps=%g seeds=%zu\n", c.n, c.heavy,
                        c.factor, c.block, c.eps, c.seeds.size());
    s += fmt("%6s %10s %12s %20s %20s\n", "seed", "partition", "iters", "bound_exact", "bound_simple");
    for (const auto& r : result.seeds) {
        s += fmt("%6" PRIu64 " %10s %12s %20.12f %20.6e\n", r.seed, "random", fmt_iters(r.random_run.iters_to_eps).c_str(),
                 r.random_bound.bound_exact, r.random_bound.bound_simple);
        s += fmt("%6" PRIu64 " %10s %12s %20.12f %20.6e\n", r.seed, "dominant",
                 fmt_iters(r.dominant_run.iters_to_eps).c_str(), r.dominant_bound.bound_exact,
                 r.dominant_bound.bound_simple);
    }
    return s;
}

// ---------------------------------------------------------------------------

DistCostReport simulate_distributed(std::span<const Index> chosen, const Partition& part,
                                    std::span<const Index> assignment, Index n_nodes, Index entry_node)
{
    if (n_nodes < 1) throw Error(ErrorKind::InvalidAssignment, "need at least one node");
    if (static_cast<Index>(assignment.size()) != part.size()) {
        throw Error(ErrorKind::InvalidAssignment, "assignment must list a node for every block");
    }
    for (const Index node : assignment) {
        if (node < 0 || node >= n_nodes) throw Error(ErrorKind::InvalidAssignment, "node id out of range");
    }
    if (entry_node < 0 || entry_node >= n_nodes) throw Error(ErrorKind::InvalidAssignment, "bad entry node");

    const auto n = static_cast<std::uint64_t>(part.n());
    DistCostReport rep;
    rep.n_nodes = n_nodes;
    rep.utilization.assign(static_cast<std::size_t>(n_nodes), 0.0);
    Index at = entry_node;
    for (const Index b : chosen) {
        if (b < 0 || b >= part.size()) throw Error(ErrorKind::InvalidAssignment, "block id out of range");
        const Index node = assignment[static_cast<std::size_t>(b)];
        const std::uint64_t transfer = node == at ? 0 : 2 * n;
        const std::uint64_t compute = n * static_cast<std::uint64_t>(part.block(b).size());
        rep.timeline.push_back(node);
        rep.transfer_units.push_back(transfer);
        rep.compute_units.push_back(compute);
        rep.total_transfer += transfer;
        rep.total_compute += compute;
        rep.utilization[static_cast<std::size_t>(node)] += 1.0;
        at = node;
    }
    if (!chosen.empty()) {
        for (auto& u : rep.utilization) u /= static_cast<double>(chosen.size());
    }
    return rep;
}

// ---------------------------------------------------------------------------

std::string trace_csv(const Trace& trace)
{
    std::string s = kCsvHeader;
    s += '\n';
    for (const auto& r : trace) {
        s += fmt("%td,%" PRId64 ",%.17g,%.17g,%.17g,%td,%.17g,%td,%td\n", r.k, r.wall_nanos, r.e_pnorm, r.e_2norm,
                 r.f_gap, r.block, r.beta, r.blocks_fetched, r.rows_touched);
    }
    return s;
}

void write_csv(const Trace& trace, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot create " + path.string());
    const auto text = trace_csv(trace);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

Trace read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) {
        throw Error(ErrorKind::IoError, path.string() + ": missing trace header");
    }
    Trace trace;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 9) throw Error(ErrorKind::IoError, path.string() + ": malformed row");
        TraceRecord r;
        r.k = std::stoll(f[0]);
        r.wall_nanos = std::stoll(f[1]);
        r.e_pnorm = std::strtod(f[2].c_str(), nullptr);
        r.e_2norm = std::strtod(f[3].c_str(), nullptr);
        r.f_gap = std::strtod(f[4].c_str(), nullptr);
        r.block = std::stoll(f[5]);
        r.beta = std::strtod(f[6].c_str(), nullptr);
        r.blocks_fetched = std::stoll(f[7]);
        r.rows_touched = std::stoll(f[8]);
        trace.push_back(r);
    }
    return trace;
}

} // namespace uqp
