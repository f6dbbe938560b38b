#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <uqp/bench.hpp>
#include <uqp/blockstore.hpp>

#include "support.hpp"

using namespace uqp;
namespace fs = std::filesystem;

namespace {

struct Outcome
{
    int code = -1;
    std::string out;
};

Outcome cli(const std::string& args, const fs::path& scratch)
{
    const auto log = scratch / "stdout.txt";
    const std::string cmd = std::string("\"") + UQP_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2> \"" +
                            (scratch / "stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    o.out = ss.str();
    return o;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

} // namespace

TEST(Cli, GenWritesStore)
{
    test::TempDir dir;
    const auto store = dir / "s";
    const auto r = cli("gen --kind block-dominant --n 128 --block 16 --seed 3 --out " + q(store), dir.path());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("m=8"), std::string::npos);
    EXPECT_TRUE(fs::exists(store / "partition.txt"));
    EXPECT_TRUE(fs::exists(store / "oracle.bin"));
    std::size_t blocks = 0;
    for (Index i = 0; i < 8; ++i) blocks += fs::exists(BlockStore::block_path(store, i));
    EXPECT_EQ(blocks, 8u);

    const auto opened = BlockStore::open(store);
    EXPECT_EQ(opened->dim(), 128);
    EXPECT_EQ(opened->partition(), contiguous_partition(128, 16));
    const auto ref = gen_block_dominant(128, 16, 10, 0.1, 3);
    EXPECT_EQ(materialize(UqpProblem::from_store(opened)), ref.matrix());
}

TEST(Cli, UsageErrorsExitTwo)
{
    test::TempDir dir;
    EXPECT_EQ(cli("gen --n 16", dir.path()).code, 2);
    EXPECT_EQ(cli("frobnicate", dir.path()).code, 2);
    EXPECT_EQ(cli("bench --experiment 7 --out " + q(dir / "b"), dir.path()).code, 2);

    const auto store = dir / "s";
    ASSERT_EQ(cli("gen --n 16 --block 4 --out " + q(store), dir.path()).code, 0);
    EXPECT_EQ(cli("solve --store " + q(store) + " --strategy cyclic", dir.path()).code, 2);
    EXPECT_EQ(cli("solve --store " + q(store) + " --method gbcd --strategy round-robin", dir.path()).code, 2);

    {
        std::ofstream(dir / "bad.txt") << "0 1\n1 2\n";
    }
    EXPECT_EQ(cli("bound --store " + q(store) + " --partition " + q(dir / "bad.txt"), dir.path()).code, 2);
    EXPECT_EQ(cli("gen --n 16 --partition " + q(dir / "bad.txt") + " --out " + q(dir / "t"), dir.path()).code, 2);
}

TEST(Cli, MissingStoreExitsThree)
{
    test::TempDir dir;
    EXPECT_EQ(cli("solve --store " + q(dir / "nothing"), dir.path()).code, 3);
}

TEST(Cli, SolveDiagonalToy)
{
    test::TempDir dir;
    Matrix p = Matrix::Zero(2, 2);
    p.diagonal() << 2, 4;
    const auto prob = UqpProblem::from_matrix(p, Eigen::Vector2d(2, 4));
    const auto store = dir / "toy";
    BlockStore::write(prob, Partition::singletons(2), store);
    write_oracle(store / "oracle.bin", solve_direct(prob), prob.r);

    const auto trace = dir / "trace.csv";
    const auto r = cli("solve --store " + q(store) + " --eps 1e-12 --trace " + q(trace), dir.path());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("iterations=2 reason=oracle"), std::string::npos) << r.out;
    const auto t = read_csv(trace);
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t[1].block, 1);
    EXPECT_EQ(t[2].block, 0);
}

TEST(Cli, UnconvergedExitsFour)
{
    test::TempDir dir;
    const auto store = dir / "s";
    ASSERT_EQ(cli("gen --kind random-spd --n 32 --part-size 4 --out " + q(store), dir.path()).code, 0);
    const auto r = cli("solve --store " + q(store) + " --eps 1e-14 --max-iters 2", dir.path());
    EXPECT_EQ(r.code, 4) << r.out;
    EXPECT_NE(r.out.find("converged=no"), std::string::npos);
}

TEST(Cli, HdcViolationExitsFive)
{
    test::TempDir dir;
    const auto store = dir / "s";
    ASSERT_EQ(cli("gen --n 64 --block 8 --out " + q(store), dir.path()).code, 0);
    EXPECT_EQ(cli("solve --store " + q(store) + " --rho 1000", dir.path()).code, 5);
    EXPECT_EQ(cli("solve --store " + q(store) + " --method bcd --rho 1000", dir.path()).code, 0);
}

TEST(Cli, BoundPrintsReport)
{
    test::TempDir dir;
    const auto store = dir / "s";
    ASSERT_EQ(cli("gen --n 64 --block 8 --out " + q(store), dir.path()).code, 0);
    const auto r = cli("bound --store " + q(store), dir.path());
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("m=8\n"), std::string::npos);
    EXPECT_NE(r.out.find("bound_exact="), std::string::npos);
    const auto rep = rate_bound(gen_block_dominant(64, 8, 10, 0.1, 0).matrix(), contiguous_partition(64, 8));
    char line[64];
    std::snprintf(line, sizeof line, "bound_exact=%.17g\n", rep.bound_exact);
    EXPECT_NE(r.out.find(line), std::string::npos) << r.out;
}

TEST(Cli, CacheDirRedirectsInverses)
{
    test::TempDir dir;
    const auto store = dir / "s";
    const auto cache = dir / "cache";
    const std::string env = "UQP_CACHE_DIR=" + q(cache) + " ";
    const std::string cmd = "gen --n 16 --block 4 --out " + q(store);
    // std::system runs through the shell, so the prefix assignment applies to the child only.
    const auto full = env + "\"" + UQP_CLI_PATH + "\" " + cmd + " > /dev/null";
    ASSERT_EQ(std::system(full.c_str()), 0);
    ASSERT_TRUE(fs::exists(cache));
    std::size_t entries = 0;
    for (const auto& e : fs::directory_iterator(cache)) {
        EXPECT_EQ(e.path().filename().string().rfind("store-", 0), 0u);
        ++entries;
    }
    EXPECT_EQ(entries, 1u);
}
