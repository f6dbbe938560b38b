#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <thread>

#include <uqp/blockstore.hpp>
#include <uqp/problem.hpp>

#include "support.hpp"

using namespace uqp;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void flip_byte(const fs::path& path, std::size_t offset)
{
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(offset));
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(static_cast<std::streamoff>(offset));
    f.write(&c, 1);
}

ErrorKind kind_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::RouteMismatch;
}

UqpProblem diag24()
{
    Matrix p = Matrix::Zero(2, 2);
    p.diagonal() << 2, 4;
    return UqpProblem::from_matrix(p, Eigen::Vector2d(2, 4));
}

} // namespace

TEST(BlockStoreWrite, SingletonTwoByTwoLayout)
{
    test::TempDir dir;
    auto store = BlockStore::write(diag24(), Partition::singletons(2), dir.path());
    EXPECT_EQ(store->block_count(), 2);
    for (Index i = 0; i < 2; ++i) {
        const auto path = BlockStore::block_path(dir.path(), i);
        ASSERT_TRUE(fs::exists(path));
        // One row of two reals plus one entry of q.
        EXPECT_EQ(fs::file_size(path), 3u * 8u);
    }
    const auto bytes = slurp(BlockStore::block_path(dir.path(), 1));
    double vals[3];
    std::memcpy(vals, bytes.data(), sizeof vals);
    EXPECT_EQ(vals[0], 0);
    EXPECT_EQ(vals[1], 4);
    EXPECT_EQ(vals[2], 4);
}

TEST(BlockStoreWrite, ManifestHeader)
{
    test::TempDir dir;
    const Partition part(5, {{4, 0}, {1, 2, 3}});
    const auto prob = test::well_conditioned(5, 1);
    BlockStore::write(prob, part, dir.path());
    const auto bytes = slurp(BlockStore::manifest_path(dir.path()));
    ASSERT_GE(bytes.size(), 24u);
    EXPECT_EQ(std::string(bytes.data(), 4), "UQPB");
    std::uint32_t version = 0;
    std::uint64_t n = 0, m = 0, d0 = 0, first = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&n, bytes.data() + 8, 8);
    std::memcpy(&m, bytes.data() + 16, 8);
    std::memcpy(&d0, bytes.data() + 24, 8);
    std::memcpy(&first, bytes.data() + 32, 8);
    EXPECT_EQ(version, 1u);
    EXPECT_EQ(n, 5u);
    EXPECT_EQ(m, 2u);
    EXPECT_EQ(d0, 2u);
    EXPECT_EQ(first, 4u);
}

TEST(BlockStoreWrite, RoundTripIsBitExact)
{
    test::TempDir dir;
    const auto prob = gen_random_spd(37, 5);
    const auto part = random_partition(37, 6, 9);
    BlockStore::write(prob, part, dir.path());
    auto store = BlockStore::open(dir.path());
    EXPECT_EQ(store->partition(), part);
    EXPECT_EQ(store->q(), prob.q);
    EXPECT_EQ(store->block_count(), part.size());
    for (Index i = 0; i < part.size(); ++i) {
        const auto blk = store->fetch_block(i);
        EXPECT_EQ(blk.rows(), Matrix(prob.matrix()(part.block(i), Eigen::all)));
        EXPECT_EQ(blk.q(), Vector(prob.q(part.block(i))));
    }
}

TEST(BlockStoreWrite, ManifestBlockCountMatchesGenerated)
{
    for (const Index d : {1, 3, 8, 16}) {
        test::TempDir dir;
        const auto part = contiguous_partition(16, d);
        BlockStore::write(gen_random_spd(16, 2), part, dir.path());
        EXPECT_EQ(BlockStore::open(dir.path())->block_count(), part.size());
    }
}

TEST(BlockStoreWrite, PartitionSizeMismatch)
{
    test::TempDir dir;
    EXPECT_EQ(kind_of([&] { BlockStore::write(diag24(), Partition::singletons(3), dir.path()); }),
              ErrorKind::InvalidPartition);
}

TEST(BlockStoreWrite, StoreBackedSourceCopies)
{
    test::TempDir dir;
    const auto prob = gen_random_spd(20, 3);
    auto first = BlockStore::write(prob, contiguous_partition(20, 4), dir / "a");
    BlockStore::write(UqpProblem::from_store(first), random_partition(20, 5, 1), dir / "b");
    auto copy = BlockStore::open(dir / "b");
    EXPECT_EQ(materialize(UqpProblem::from_store(copy)), prob.matrix());
}

TEST(BlockStoreOpen, MissingDirectoryIsIoError)
{
    test::TempDir dir;
    EXPECT_EQ(kind_of([&] { BlockStore::open(dir / "nope"); }), ErrorKind::IoError);
}

TEST(BlockStoreOpen, CorruptBlockDetected)
{
    test::TempDir dir;
    BlockStore::write(gen_random_spd(12, 1), contiguous_partition(12, 4), dir.path());
    flip_byte(BlockStore::block_path(dir.path(), 1), 17);
    EXPECT_EQ(kind_of([&] { BlockStore::open(dir.path()); }), ErrorKind::ChecksumMismatch);
}

TEST(BlockStoreOpen, CorruptManifestDetected)
{
    test::TempDir dir;
    BlockStore::write(gen_random_spd(12, 1), contiguous_partition(12, 4), dir.path());
    flip_byte(BlockStore::manifest_path(dir.path()), 10);
    EXPECT_EQ(kind_of([&] { BlockStore::open(dir.path()); }), ErrorKind::ChecksumMismatch);
}

TEST(BlockStoreOpen, TruncatedBlockDetected)
{
    test::TempDir dir;
    BlockStore::write(gen_random_spd(12, 1), contiguous_partition(12, 4), dir.path());
    fs::resize_file(BlockStore::block_path(dir.path(), 0), 8);
    const auto kind = kind_of([&] { BlockStore::open(dir.path()); });
    EXPECT_TRUE(kind == ErrorKind::ChecksumMismatch || kind == ErrorKind::IoError);
}

TEST(BlockStoreOpen, VerifyReadsCatchesLateCorruption)
{
    test::TempDir dir;
    BlockStore::write(gen_random_spd(12, 1), contiguous_partition(12, 4), dir.path());
    auto store = BlockStore::open(dir.path());
    store->set_verify_reads(true);
    flip_byte(BlockStore::block_path(dir.path(), 2), 3);
    EXPECT_EQ(kind_of([&] { store->fetch_block(2); }), ErrorKind::ChecksumMismatch);
}

TEST(FetchBlock, OutOfRange)
{
    test::TempDir dir;
    auto store = BlockStore::write(gen_random_spd(8, 1), contiguous_partition(8, 4), dir.path());
    EXPECT_EQ(kind_of([&] { store->fetch_block(2); }), ErrorKind::IndexOutOfRange);
    EXPECT_EQ(kind_of([&] { store->fetch_block(-1); }), ErrorKind::IndexOutOfRange);
}

TEST(FetchBlock, CountersAndResidency)
{
    test::TempDir dir;
    const auto part = contiguous_partition(20, 6);
    auto store = BlockStore::write(gen_random_spd(20, 1), part, dir.path());
    store->reset_counters();
    {
        const auto a = store->fetch_block(0);
        EXPECT_EQ(store->counters().resident_rows, 6u);
        const auto b = store->fetch_block(3);
        EXPECT_EQ(store->counters().resident_rows, 8u);
    }
    const auto c = store->counters();
    EXPECT_EQ(c.blocks_fetched, 2u);
    EXPECT_EQ(c.rows_fetched, 8u);
    EXPECT_EQ(c.resident_rows, 0u);
    EXPECT_EQ(c.peak_resident_rows, 8u);
    EXPECT_EQ(c.bytes_read, (8u * 20u + 8u) * 8u);
}

TEST(FetchBlock, MovedRowsReleasedOnce)
{
    MemoryBlocks src(std::make_shared<const Matrix>(Matrix::Identity(4, 4)), Vector::Ones(4),
                     contiguous_partition(4, 2));
    {
        auto a = src.fetch_block(0);
        ResidentRows b = std::move(a);
        EXPECT_EQ(src.counters().resident_rows, 2u);
        a = src.fetch_block(1);
        EXPECT_EQ(src.counters().resident_rows, 4u);
    }
    EXPECT_EQ(src.counters().resident_rows, 0u);
}

TEST(FetchRows, ScatteredRowsAcrossBlocks)
{
    test::TempDir dir;
    const auto prob = gen_random_spd(15, 4);
    const auto part = random_partition(15, 4, 2);
    auto store = BlockStore::write(prob, part, dir.path());
    const std::vector<Index> rows{14, 0, 7, 3};
    store->reset_counters();
    const auto got = store->fetch_rows(rows);
    EXPECT_EQ(got.rows(), Matrix(prob.matrix()(rows, Eigen::all)));
    EXPECT_EQ(got.q(), Vector(prob.q(rows)));
    std::set<Index> owners;
    for (const Index r : rows) owners.insert(part.owner()[static_cast<std::size_t>(r)]);
    EXPECT_EQ(store->counters().blocks_fetched, owners.size());
    EXPECT_EQ(kind_of([&] { store->fetch_rows(std::vector<Index>{15}); }), ErrorKind::IndexOutOfRange);
}

TEST(FetchBlock, ConcurrentReadsCountEveryFetch)
{
    test::TempDir dir;
    const auto prob = gen_random_spd(32, 2);
    const auto part = contiguous_partition(32, 4);
    auto store = BlockStore::write(prob, part, dir.path());
    store->reset_counters();
    std::vector<std::thread> pool;
    std::atomic<int> mismatches{0};
    for (int t = 0; t < 4; ++t) {
        pool.emplace_back([&, t] {
            for (int k = 0; k < 50; ++k) {
                const Index i = (t + k) % part.size();
                const auto blk = store->fetch_block(i);
                if (blk.rows() != Matrix(prob.matrix()(part.block(i), Eigen::all))) ++mismatches;
            }
        });
    }
    for (auto& th : pool) th.join();
    EXPECT_EQ(mismatches.load(), 0);
    EXPECT_EQ(store->counters().blocks_fetched, 200u);
    EXPECT_EQ(store->counters().resident_rows, 0u);
    EXPECT_LE(store->counters().peak_resident_rows, 16u);
}

TEST(Inverses, DiagonalGivesReciprocals)
{
    test::TempDir dir;
    Matrix p = Matrix::Zero(4, 4);
    p.diagonal() << 1, 2, 4, 8;
    auto store = BlockStore::write(UqpProblem::from_matrix(p, Vector::Ones(4)), contiguous_partition(4, 2),
                                   dir.path());
    EXPECT_FALSE(store->has_inverses());
    store->precompute_inverses();
    EXPECT_TRUE(store->has_inverses());
    const Matrix a = store->load_inverse(0);
    const Matrix b = store->load_inverse(1);
    EXPECT_EQ(a(0, 0), 1);
    EXPECT_DOUBLE_EQ(a(1, 1), 0.5);
    EXPECT_DOUBLE_EQ(b(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(b(1, 1), 0.125);
    EXPECT_EQ(a(0, 1), 0);
}

TEST(Inverses, ProductWithDiagonalBlockIsIdentity)
{
    test::TempDir dir;
    const auto prob = test::well_conditioned(40, 8);
    const auto part = random_partition(40, 7, 3);
    auto store = BlockStore::write(prob, part, dir.path());
    const auto inv = ensure_inverses(*store);
    for (Index i = 0; i < part.size(); ++i) {
        const auto pi = part.block(i);
        const Matrix pii = prob.matrix()(pi, pi);
        const auto d = static_cast<Index>(pi.size());
        EXPECT_LE((pii * inv[static_cast<std::size_t>(i)] - Matrix::Identity(d, d)).cwiseAbs().maxCoeff(),
                  tol::inverse_identity);
    }
    // Survives reopening.
    auto again = BlockStore::open(dir.path());
    EXPECT_TRUE(again->has_inverses());
    EXPECT_EQ(again->load_inverses(), inv);
}

TEST(Inverses, ParallelFilesMatchSerial)
{
    test::TempDir dir;
    const auto prob = gen_random_spd(48, 6);
    const auto part = contiguous_partition(48, 5);
    auto serial = BlockStore::write(prob, part, dir / "serial");
    auto parallel = BlockStore::write(prob, part, dir / "parallel");
    serial->precompute_inverses(1);
    parallel->precompute_inverses(4);
    for (Index i = 0; i < part.size(); ++i) {
        EXPECT_EQ(slurp(BlockStore::inverse_path(dir / "serial", i)),
                  slurp(BlockStore::inverse_path(dir / "parallel", i)));
    }
    EXPECT_EQ(slurp(BlockStore::manifest_path(dir / "serial")), slurp(BlockStore::manifest_path(dir / "parallel")));
}

TEST(Inverses, InMemoryComputationMatchesStore)
{
    test::TempDir dir;
    const auto prob = gen_random_spd(24, 6);
    const auto part = contiguous_partition(24, 5);
    auto store = BlockStore::write(prob, part, dir.path());
    MemoryBlocks mem(prob.matrix_ptr(), prob.q, part);
    EXPECT_EQ(compute_inverses(mem, 3), ensure_inverses(*store, 2));
}

TEST(Inverses, CorruptInverseDetected)
{
    test::TempDir dir;
    auto store = BlockStore::write(gen_random_spd(8, 6), contiguous_partition(8, 4), dir.path());
    store->precompute_inverses();
    flip_byte(BlockStore::inverse_path(dir.path(), 1), 5);
    EXPECT_EQ(kind_of([&] { store->load_inverse(1); }), ErrorKind::ChecksumMismatch);
    EXPECT_EQ(kind_of([&] { BlockStore::open(dir.path()); }), ErrorKind::ChecksumMismatch);
}

TEST(Inverses, SeparateCacheDirectory)
{
    test::TempDir dir;
    auto store = BlockStore::write(gen_random_spd(8, 6), contiguous_partition(8, 4), dir / "store");
    store->set_inverse_dir(dir / "cache");
    store->precompute_inverses();
    EXPECT_TRUE(fs::exists(BlockStore::inverse_path(dir / "cache", 0)));
    EXPECT_FALSE(fs::exists(BlockStore::inverse_path(dir / "store", 0)));
    EXPECT_EQ(kind_of([&] { store->load_inverse(5); }), ErrorKind::IndexOutOfRange);
}

TEST(Inverses, MissingInversesReported)
{
    test::TempDir dir;
    auto store = BlockStore::write(gen_random_spd(8, 6), contiguous_partition(8, 4), dir.path());
    EXPECT_EQ(kind_of([&] { store->load_inverse(0); }), ErrorKind::IoError);
}

TEST(OracleSidecar, RoundTrip)
{
    test::TempDir dir;
    Oracle o{test::random_vector(9, 3), -12.5};
    write_oracle(dir / "oracle.bin", o, 0.25);
    double r = 0;
    const Oracle back = read_oracle(dir / "oracle.bin", &r);
    EXPECT_EQ(back.x_opt, o.x_opt);
    EXPECT_EQ(back.f_opt, o.f_opt);
    EXPECT_EQ(r, 0.25);
    fs::resize_file(dir / "oracle.bin", 20);
    EXPECT_EQ(kind_of([&] { read_oracle(dir / "oracle.bin"); }), ErrorKind::IoError);
}

TEST(Crc32, KnownVector)
{
    const char* text = "123456789";
    EXPECT_EQ(crc32_of({reinterpret_cast<const unsigned char*>(text), 9}), 0xCBF43926u);
}

TEST(StreamProduct, MatchesDenseProduct)
{
    const auto prob = gen_random_spd(30, 12);
    MemoryBlocks src(prob.matrix_ptr(), prob.q, random_partition(30, 4, 1));
    const Vector v = test::random_vector(30, 1);
    EXPECT_LE((stream_product(src, v) - prob.matrix() * v).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(src.counters().blocks_fetched, static_cast<std::uint64_t>(src.block_count()));
    EXPECT_EQ(kind_of([&] { stream_product(src, Vector::Ones(3)); }), ErrorKind::DimensionMismatch);
}
