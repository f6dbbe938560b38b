#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <uqp/partition.hpp>
#include <uqp/problem.hpp>
#include <uqp/solvers.hpp>

namespace uqp {

// One method run on one instance, with its trace and headline numbers.
struct RunRecord
{
    std::string label;
    std::uint64_t instance_seed = 0;
    std::uint64_t run_seed = 0;
    Index iterations = 0;
    std::optional<Index> iters_to_eps; // first k with E_k < eps, if reached
    double final_e_pnorm = 0;
    double final_e_2norm = 0;
    Index rows_per_iter = 0;           // rows touched by the first step
    std::uint64_t blocks_fetched = 0;
    std::vector<Index> chosen_blocks;
    Trace trace;
};

/// Runs `solver` under `stop` with oracle metrics against the in-memory P.
RunRecord run_traced(Solver& solver, const StopRule& stop, std::shared_ptr<const Matrix> p,
                     const Oracle& oracle, std::string label, bool keep_trace = true);

/// Median; a missing iteration count sorts above every reached one.
double median(std::vector<double> values);
double median_iters(std::span<const RunRecord> runs, std::string_view label, Index not_reached);

struct Experiment1Config
{
    Index n = 2048;
    Index block = 64;
    double diag_scale = 10;
    double off_scale = 0.1;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double eps = 1e-3;
    Index max_iters = 20000;
    Index quadratic_max_iters = 200;   // SD and CG: each step is a full pass over P
    Index bs_rows = 64;
    Index rand_runs = 1;               // randomized BCD runs per instance
    std::filesystem::path work_dir;    // store root; empty keeps P in memory
    bool keep_traces = true;
    std::vector<std::string> methods{"GBCD", "BCD-RR", "RBCD", "GBCD-BS", "SD", "CG"};
};

struct Experiment1Result
{
    Experiment1Config config;
    std::vector<RunRecord> runs;
};

Experiment1Result experiment1(const Experiment1Config& config);

struct Experiment2Config
{
    Index n = 256;
    Index heavy = 8;
    double factor = 1000;
    Index budget = 2000;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    Index rand_runs = 25;
};

// Per-instance aggregate of one method; randomized methods average rand_runs runs.
struct Experiment2Row
{
    std::string label;
    std::uint64_t seed = 0;
    Index runs = 0;
    double mean_e_2norm = 0;
    double mean_e_pnorm = 0;
    double tau_mass = 0;     // fraction of picks that fell on the heavy set
    Trace mean_trace;
};

struct Experiment2Result
{
    Experiment2Config config;
    std::vector<Experiment2Row> rows;
};

Experiment2Result experiment2(const Experiment2Config& config);

struct Experiment3Config
{
    Index n = 256;
    Index heavy = 8;
    double factor = 1000;
    Index block = 16;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double eps = 1e-3;
    Index max_iters = 2000000;
    bool keep_traces = true;
};

struct Experiment3Seed
{
    std::uint64_t seed = 0;
    RunRecord random_run;
    RunRecord dominant_run;
    RateReport random_bound;
    RateReport dominant_bound;
};

struct Experiment3Result
{
    Experiment3Config config;
    std::vector<Experiment3Seed> seeds;
};

Experiment3Result experiment3(const Experiment3Config& config);

std::string summary_table(const Experiment1Result& result);
std::string summary_table(const Experiment2Result& result);
std::string summary_table(const Experiment3Result& result);

struct DistCostReport
{
    Index n_nodes = 0;
    std::vector<Index> timeline;             // active node per iteration
    std::vector<std::uint64_t> transfer_units;
    std::vector<std::uint64_t> compute_units;
    std::uint64_t total_transfer = 0;
    std::uint64_t total_compute = 0;
    std::vector<double> utilization;         // share of iterations each node was active
};

/*
 * Replays a block-choice sequence against a block -> node assignment. The
 * state starts on entry_node; every iteration whose block lives elsewhere
 * moves x and the gradient (2n units), and every step costs n * d_i.
 */
DistCostReport simulate_distributed(std::span<const Index> chosen, const Partition& part,
                                    std::span<const Index> assignment, Index n_nodes,
                                    Index entry_node = 0);

std::string trace_csv(const Trace& trace);
void write_csv(const Trace& trace, const std::filesystem::path& path);
Trace read_csv(const std::filesystem::path& path);

} // namespace uqp
