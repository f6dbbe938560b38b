#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>

#include <uqp/linalg.hpp>
#include <uqp/partition.hpp>

namespace uqp {

struct IoCounters
{
    std::uint64_t blocks_fetched = 0;
    std::uint64_t rows_fetched = 0;
    std::uint64_t bytes_read = 0;
    std::uint64_t resident_rows = 0;
    std::uint64_t peak_resident_rows = 0;
};

namespace detail {

struct CounterCell
{
    std::atomic<std::uint64_t> blocks_fetched{0};
    std::atomic<std::uint64_t> rows_fetched{0};
    std::atomic<std::uint64_t> bytes_read{0};
    std::atomic<std::uint64_t> resident_rows{0};
    std::atomic<std::uint64_t> peak_resident_rows{0};

    void acquire(std::uint64_t rows);
    void release(std::uint64_t rows) { resident_rows.fetch_sub(rows); }
};

} // namespace detail

/*
 * Rows of P (and the matching entries of q) resident in main memory. The
 * owning source counts them as resident until this object is destroyed.
 */
class ResidentRows
{
public:
    ResidentRows() = default;
    ResidentRows(Matrix rows, Vector q, std::shared_ptr<detail::CounterCell> cell);
    ResidentRows(ResidentRows&& other) noexcept;
    ResidentRows& operator=(ResidentRows&& other) noexcept;
    ResidentRows(const ResidentRows&) = delete;
    ResidentRows& operator=(const ResidentRows&) = delete;
    ~ResidentRows();

    const Matrix& rows() const { return rows_; }
    const Vector& q() const { return q_; }
    Index count() const { return rows_.rows(); }

private:
    void release();

    Matrix rows_;
    Vector q_;
    std::shared_ptr<detail::CounterCell> cell_;
};

/*
 * Row-block access to P under a fixed partition, with I/O accounting. Every
 * fetch increments blocks_fetched; resident_rows tracks live ResidentRows.
 * Fetches are safe to issue concurrently.
 */
class BlockSource
{
public:
    virtual ~BlockSource() = default;

    virtual const Partition& partition() const = 0;
    virtual const Vector& q() const = 0;

    Index dim() const { return partition().n(); }
    Index block_count() const { return partition().size(); }

    /// Contiguous read of block i: rows of P in pi_i order, then q_pi.
    ResidentRows fetch_block(Index i);

    /// Read of arbitrary rows; counts one fetch per distinct block touched.
    ResidentRows fetch_rows(std::span<const Index> rows);

    IoCounters counters() const;
    void reset_counters();

protected:
    BlockSource();

    /// Returns bytes read.
    virtual std::uint64_t read_block(Index i, Matrix& rows, Vector& q) = 0;
    virtual std::uint64_t read_rows(std::span<const Index> rows, Matrix& out, Vector& q) = 0;

private:
    std::shared_ptr<detail::CounterCell> cell_;
};

/// Blocks served from an in-memory P.
class MemoryBlocks final : public BlockSource
{
public:
    MemoryBlocks(std::shared_ptr<const Matrix> p, Vector q, Partition part);

    const Partition& partition() const override { return part_; }
    const Vector& q() const override { return q_; }
    const Matrix& matrix() const { return *p_; }

protected:
    std::uint64_t read_block(Index i, Matrix& rows, Vector& q) override;
    std::uint64_t read_rows(std::span<const Index> rows, Matrix& out, Vector& q) override;

private:
    std::shared_ptr<const Matrix> p_;
    Vector q_;
    Partition part_;
};

/// P * v by one streaming pass over all blocks.
Vector stream_product(BlockSource& source, const Vector& v);

} // namespace uqp
