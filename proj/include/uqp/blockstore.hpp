#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <uqp/block_source.hpp>
#include <uqp/problem.hpp>

namespace uqp {

namespace fs = std::filesystem;

/// Inverses of the diagonal blocks P_{pi_i pi_i}, indexed in pi_i order.
using BlockInverses = std::vector<Matrix>;

/*
 * On-disk chunk-per-block copy of (P, q).
 *
 * Layout under `root`:
 *   manifest.bin   "UQPB", version (u32 LE) = 1, n (u64), m (u64), then for
 *                  each block d_i (u64) and its d_i row indices (u64); then
 *                  one CRC32 (u32) per block file, an inverse count (u64, 0
 *                  or m) with one CRC32 per inverse file, and a trailing
 *                  CRC32 of every preceding manifest byte.
 *   block_<i>.bin  d_i * n reals (f64 LE, row-major, rows in pi_i order)
 *                  followed by the d_i entries of q_pi.
 *   inv_<i>.bin    d_i * d_i reals, row-major; lives in inverse_dir().
 */
class BlockStore final : public BlockSource
{
public:
    static std::shared_ptr<BlockStore> write(const UqpProblem& prob, const Partition& part,
                                             const fs::path& root);
    static std::shared_ptr<BlockStore> open(const fs::path& root, bool verify = true);

    const Partition& partition() const override { return part_; }
    const Vector& q() const override { return q_; }

    const fs::path& root() const { return root_; }
    const fs::path& inverse_dir() const { return inverse_dir_; }
    void set_inverse_dir(const fs::path& dir);

    /// Inverts every P_{pi pi} (spread over n_workers threads) and persists them.
    void precompute_inverses(unsigned n_workers = 1);
    bool has_inverses() const { return !inverse_crc_.empty(); }
    Matrix load_inverse(Index i) const;
    BlockInverses load_inverses() const;

    /// Re-reads every file and compares against the manifest checksums.
    void verify() const;

    /// Also check the block checksum on every fetch (off by default: open() verifies).
    void set_verify_reads(bool on) { verify_reads_ = on; }

    static fs::path block_path(const fs::path& root, Index i);
    static fs::path inverse_path(const fs::path& dir, Index i);
    static fs::path manifest_path(const fs::path& root);

protected:
    std::uint64_t read_block(Index i, Matrix& rows, Vector& q) override;
    std::uint64_t read_rows(std::span<const Index> rows, Matrix& out, Vector& q) override;

private:
    BlockStore() = default;
    void write_manifest() const;
    void read_manifest();
    void load_q();

    fs::path root_;
    fs::path inverse_dir_;
    Partition part_;
    Vector q_;
    std::vector<std::uint32_t> block_crc_;
    std::vector<std::uint32_t> inverse_crc_;
    bool verify_reads_ = false;
};

/// Stored inverses if present, otherwise computed (and persisted).
BlockInverses ensure_inverses(BlockStore& store, unsigned n_workers = 1);

/// Inverses by one streaming pass over the source, without persisting.
BlockInverses compute_inverses(BlockSource& source, unsigned n_workers = 1);

/*
 * Oracle sidecar: "UQPO", version (u32) = 1, n (u64), r, f_opt, then x_opt;
 * all reals f64 LE.
 */
void write_oracle(const fs::path& path, const Oracle& oracle, double r);
Oracle read_oracle(const fs::path& path, double* r = nullptr);

std::uint32_t crc32_of(std::span<const unsigned char> bytes);

} // namespace uqp
