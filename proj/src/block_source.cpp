#include <uqp/block_source.hpp>

#include <algorithm>
#include <set>

namespace uqp {

namespace detail {

void CounterCell::acquire(std::uint64_t rows)
{
    const auto now = resident_rows.fetch_add(rows) + rows;
    auto peak = peak_resident_rows.load();
    while (now > peak && !peak_resident_rows.compare_exchange_weak(peak, now)) {
    }
}

} // namespace detail

ResidentRows::ResidentRows(Matrix rows, Vector q, std::shared_ptr<detail::CounterCell> cell)
    : rows_(std::move(rows)), q_(std::move(q)), cell_(std::move(cell))
{
    if (cell_) cell_->acquire(static_cast<std::uint64_t>(rows_.rows()));
}

ResidentRows::ResidentRows(ResidentRows&& other) noexcept
    : rows_(std::move(other.rows_)), q_(std::move(other.q_)), cell_(std::move(other.cell_))
{
    other.cell_.reset();
}

ResidentRows& ResidentRows::operator=(ResidentRows&& other) noexcept
{
    if (this != &other) {
        release();
        rows_ = std::move(other.rows_);
        q_ = std::move(other.q_);
        cell_ = std::move(other.cell_);
        other.cell_.reset();
    }
    return *this;
}

ResidentRows::~ResidentRows() { release(); }

void ResidentRows::release()
{
    if (cell_) {
        cell_->release(static_cast<std::uint64_t>(rows_.rows()));
        cell_.reset();
    }
}

BlockSource::BlockSource() : cell_(std::make_shared<detail::CounterCell>()) {}

ResidentRows BlockSource::fetch_block(Index i)
{
    if (i < 0 || i >= block_count()) {
        throw Error(ErrorKind::IndexOutOfRange,
                    "block " + std::to_string(i) + " of " + std::to_string(block_count()));
    }
    Matrix rows;
    Vector q;
    const auto bytes = read_block(i, rows, q);
    cell_->blocks_fetched.fetch_add(1);
    cell_->rows_fetched.fetch_add(static_cast<std::uint64_t>(rows.rows()));
    cell_->bytes_read.fetch_add(bytes);
    return ResidentRows(std::move(rows), std::move(q), cell_);
}

ResidentRows BlockSource::fetch_rows(std::span<const Index> rows)
{
    const auto& owner = partition().owner();
    std::set<Index> touched;
    for (const Index r : rows) {
        if (r < 0 || r >= dim()) {
            throw Error(ErrorKind::IndexOutOfRange, "row " + std::to_string(r));
        }
        touched.insert(owner[static_cast<std::size_t>(r)]);
    }
    Matrix out;
    Vector q;
    const auto bytes = read_rows(rows, out, q);
    cell_->blocks_fetched.fetch_add(touched.size());
    cell_->rows_fetched.fetch_add(rows.size());
    cell_->bytes_read.fetch_add(bytes);
    return ResidentRows(std::move(out), std::move(q), cell_);
}

IoCounters BlockSource::counters() const
{
    return {cell_->blocks_fetched.load(), cell_->rows_fetched.load(), cell_->bytes_read.load(),
            cell_->resident_rows.load(), cell_->peak_resident_rows.load()};
}

void BlockSource::reset_counters()
{
    cell_->blocks_fetched = 0;
    cell_->rows_fetched = 0;
    cell_->bytes_read = 0;
    cell_->peak_resident_rows = cell_->resident_rows.load();
}

MemoryBlocks::MemoryBlocks(std::shared_ptr<const Matrix> p, Vector q, Partition part)
    : p_(std::move(p)), q_(std::move(q)), part_(std::move(part))
{
    if (!p_ || p_->rows() != p_->cols() || p_->rows() != q_.size() || part_.n() != q_.size()) {
        throw Error(ErrorKind::DimensionMismatch, "MemoryBlocks: P, q and partition sizes differ");
    }
}

std::uint64_t MemoryBlocks::read_block(Index i, Matrix& rows, Vector& q)
{
    const auto pi = part_.block(i);
    rows = (*p_)(pi, Eigen::all);
    q = q_(pi);
    return static_cast<std::uint64_t>((rows.size() + q.size()) * sizeof(double));
}

std::uint64_t MemoryBlocks::read_rows(std::span<const Index> idx, Matrix& out, Vector& q)
{
    out = (*p_)(idx, Eigen::all);
    q = q_(idx);
    return static_cast<std::uint64_t>((out.size() + q.size()) * sizeof(double));
}

Vector stream_product(BlockSource& source, const Vector& v)
{
    if (v.size() != source.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "stream_product: vector size");
    }
    Vector out(source.dim());
    const auto& part = source.partition();
    for (Index i = 0; i < part.size(); ++i) {
        const auto blk = source.fetch_block(i);
        out(part.block(i)) = blk.rows() * v;
    }
    return out;
}

} // namespace uqp
