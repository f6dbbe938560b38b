#include <uqp/blockstore.hpp>

#include <bit>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <thread>

#include <zlib.h>

namespace uqp {

namespace {

constexpr char kMagic[4] = {'U', 'Q', 'P', 'B'};
constexpr char kOracleMagic[4] = {'U', 'Q', 'P', 'O'};
constexpr std::uint32_t kVersion = 1;

using Bytes = std::vector<unsigned char>;

void put_u32(Bytes& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f64(Bytes& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_reals(Bytes& out, const double* v, std::size_t count)
{
    if constexpr (std::endian::native == std::endian::little) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(v);
        out.insert(out.end(), bytes, bytes + count * 8);
    } else {
        for (std::size_t i = 0; i < count; ++i) put_f64(out, v[i]);
    }
}

/// Bounds-checked little-endian reader over a byte buffer.
class Reader
{
public:
    Reader(std::span<const unsigned char> bytes, std::string what)
        : bytes_(bytes), what_(std::move(what))
    {}

    std::uint64_t uint(int width)
    {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    double f64() { return std::bit_cast<double>(u64()); }

    void reals(double* out, std::size_t count)
    {
        need(count * 8);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out, bytes_.data() + pos_, count * 8);
            pos_ += count * 8;
        } else {
            for (std::size_t i = 0; i < count; ++i) out[i] = f64();
        }
    }

    void magic(const char (&expect)[4])
    {
        need(4);
        if (std::memcmp(bytes_.data() + pos_, expect, 4) != 0) {
            throw Error(ErrorKind::IoError, what_ + ": bad magic");
        }
        pos_ += 4;
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t k) const
    {
        if (pos_ + k > bytes_.size()) throw Error(ErrorKind::IoError, what_ + ": truncated");
    }

    std::span<const unsigned char> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

Bytes read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    Bytes data(size);
    if (size && !in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(size))) {
        throw Error(ErrorKind::IoError, "short read on " + path.string());
    }
    return data;
}

void write_file(const fs::path& path, const Bytes& data)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::IoError, "cannot create " + tmp.string());
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error(ErrorKind::IoError, "write failed on " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::IoError, "rename to " + path.string() + ": " + ec.message());
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Bytes encode_rows(const Matrix& rows, const Vector& q)
{
    const RowMajor rm = rows;
    Bytes out;
    out.reserve(static_cast<std::size_t>(rows.size() + q.size()) * 8);
    put_reals(out, rm.data(), static_cast<std::size_t>(rm.size()));
    put_reals(out, q.data(), static_cast<std::size_t>(q.size()));
    return out;
}

Bytes encode_square(const Matrix& a) { return encode_rows(a, Vector()); }

void check_crc(const Bytes& data, std::uint32_t expect, const fs::path& path)
{
    if (crc32_of(data) != expect) {
        throw Error(ErrorKind::ChecksumMismatch, path.string() + " does not match its checksum");
    }
}

Matrix extract_diagonal_block(const Matrix& rows, std::span<const Index> pi)
{
    return rows(Eigen::all, pi);
}

template <class Fn>
void for_groups(Index m, unsigned n_workers, Fn&& fn)
{
    const unsigned workers = std::max(1u, std::min<unsigned>(n_workers, static_cast<unsigned>(std::max<Index>(m, 1))));
    if (workers == 1) {
        for (Index i = 0; i < m; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
        const Index lo = m * w / workers;
        const Index hi = m * (w + 1) / workers;
        pool.emplace_back([&, w, lo, hi] {
            try {
                for (Index i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace

std::uint32_t crc32_of(std::span<const unsigned char> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = ::crc32(crc, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

fs::path BlockStore::block_path(const fs::path& root, Index i)
{
    return root / ("block_" + std::to_string(i) + ".bin");
}

fs::path BlockStore::inverse_path(const fs::path& dir, Index i)
{
    return dir / ("inv_" + std::to_string(i) + ".bin");
}

fs::path BlockStore::manifest_path(const fs::path& root) { return root / "manifest.bin"; }

std::shared_ptr<BlockStore> BlockStore::write(const UqpProblem& prob, const Partition& part,
                                              const fs::path& root)
{
    if (part.n() != prob.n()) {
        throw Error(ErrorKind::InvalidPartition, "partition covers " + std::to_string(part.n()) +
                                                     " rows, problem has " + std::to_string(prob.n()));
    }
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + root.string() + ": " + ec.message());

    std::shared_ptr<BlockStore> store(new BlockStore());
    store->root_ = root;
    store->inverse_dir_ = root;
    store->part_ = part;
    store->q_ = prob.q;

    const bool in_memory = prob.in_memory();
    const auto source = prob.store();
    for (Index i = 0; i < part.size(); ++i) {
        const auto pi = part.block(i);
        Matrix rows;
        Vector q;
        if (in_memory) {
            rows = prob.matrix()(pi, Eigen::all);
            q = prob.q(pi);
        } else {
            const auto fetched = source->fetch_rows(pi);
            rows = fetched.rows();
            q = fetched.q();
        }
        const Bytes data = encode_rows(rows, q);
        write_file(block_path(root, i), data);
        store->block_crc_.push_back(crc32_of(data));
    }
    // Stale inverse files from an earlier store in this directory are ignored:
    // the manifest records none.
    store->write_manifest();
    return store;
}

std::shared_ptr<BlockStore> BlockStore::open(const fs::path& root, bool verify)
{
    std::shared_ptr<BlockStore> store(new BlockStore());
    store->root_ = root;
    store->inverse_dir_ = root;
    store->read_manifest();
    if (verify) store->verify();
    store->load_q();
    return store;
}

void BlockStore::set_inverse_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
    inverse_dir_ = dir;
}

void BlockStore::write_manifest() const
{
    Bytes out;
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u64(out, static_cast<std::uint64_t>(part_.n()));
    put_u64(out, static_cast<std::uint64_t>(part_.size()));
    for (const auto& blk : part_.blocks()) {
        put_u64(out, blk.size());
        for (const Index i : blk) put_u64(out, static_cast<std::uint64_t>(i));
    }
    for (const auto c : block_crc_) put_u32(out, c);
    put_u64(out, inverse_crc_.size());
    for (const auto c : inverse_crc_) put_u32(out, c);
    put_u32(out, crc32_of(out));
    write_file(manifest_path(root_), out);
}

void BlockStore::read_manifest()
{
    const auto path = manifest_path(root_);
    const Bytes data = read_file(path);
    if (data.size() < 4) throw Error(ErrorKind::IoError, path.string() + ": truncated");
    {
        Reader tail(std::span<const unsigned char>(data).subspan(data.size() - 4), path.string());
        if (crc32_of(std::span<const unsigned char>(data).first(data.size() - 4)) != tail.u32()) {
            throw Error(ErrorKind::ChecksumMismatch, path.string() + " does not match its checksum");
        }
    }
    Reader rd(std::span<const unsigned char>(data).first(data.size() - 4), path.string());
    rd.magic(kMagic);
    const auto version = rd.u32();
    if (version != kVersion) {
        throw Error(ErrorKind::IoError, "unsupported store version " + std::to_string(version));
    }
    const auto n = static_cast<Index>(rd.u64());
    const auto m = static_cast<Index>(rd.u64());
    if (m < 1 || m > n) throw Error(ErrorKind::IoError, path.string() + ": bad block count");
    std::vector<std::vector<Index>> blocks(static_cast<std::size_t>(m));
    for (auto& blk : blocks) {
        const auto d = rd.u64();
        if (d > static_cast<std::uint64_t>(n)) throw Error(ErrorKind::IoError, "bad block length");
        blk.resize(d);
        for (auto& i : blk) i = static_cast<Index>(rd.u64());
    }
    part_ = Partition(n, std::move(blocks));
    block_crc_.resize(static_cast<std::size_t>(m));
    for (auto& c : block_crc_) c = rd.u32();
    const auto inv = rd.u64();
    if (inv != 0 && inv != static_cast<std::uint64_t>(m)) {
        throw Error(ErrorKind::IoError, path.string() + ": bad inverse count");
    }
    inverse_crc_.resize(inv);
    for (auto& c : inverse_crc_) c = rd.u32();
    if (!rd.done()) throw Error(ErrorKind::IoError, path.string() + ": trailing bytes");
}

void BlockStore::verify() const
{
    for (Index i = 0; i < part_.size(); ++i) {
        const auto path = block_path(root_, i);
        const Bytes data = read_file(path);
        const auto d = static_cast<std::size_t>(part_.block(i).size());
        if (data.size() != (d * static_cast<std::size_t>(part_.n()) + d) * 8) {
            throw Error(ErrorKind::IoError, path.string() + ": wrong size");
        }
        check_crc(data, block_crc_[static_cast<std::size_t>(i)], path);
    }
    for (std::size_t i = 0; i < inverse_crc_.size(); ++i) {
        const auto path = inverse_path(inverse_dir_, static_cast<Index>(i));
        check_crc(read_file(path), inverse_crc_[i], path);
    }
}

void BlockStore::load_q()
{
    const Index n = part_.n();
    q_.resize(n);
    for (Index i = 0; i < part_.size(); ++i) {
        const auto pi = part_.block(i);
        const auto d = static_cast<std::streamoff>(pi.size());
        const auto path = block_path(root_, i);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
        in.seekg(d * n * 8);
        Bytes raw(static_cast<std::size_t>(d) * 8);
        if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
            throw Error(ErrorKind::IoError, "short read on " + path.string());
        }
        Reader rd(raw, path.string());
        for (const Index row : pi) q_(row) = rd.f64();
    }
}

std::uint64_t BlockStore::read_block(Index i, Matrix& rows, Vector& q)
{
    const auto path = block_path(root_, i);
    const auto d = static_cast<Index>(part_.block(i).size());
    const Index n = part_.n();
    const auto expect = static_cast<std::size_t>(d * n + d) * 8;

    if (std::endian::native != std::endian::little || verify_reads_) {
        const Bytes data = read_file(path);
        if (verify_reads_) check_crc(data, block_crc_[static_cast<std::size_t>(i)], path);
        if (data.size() != expect) throw Error(ErrorKind::IoError, path.string() + ": wrong size");
        Reader rd(data, path.string());
        RowMajor rm(d, n);
        rd.reals(rm.data(), static_cast<std::size_t>(d * n));
        rows = rm;
        q.resize(d);
        rd.reals(q.data(), static_cast<std::size_t>(d));
        return data.size();
    }

    // Little-endian hosts read the file image straight into place.
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    if (static_cast<std::size_t>(in.tellg()) != expect) {
        throw Error(ErrorKind::IoError, path.string() + ": wrong size");
    }
    in.seekg(0);
    RowMajor rm(d, n);
    q.resize(d);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(d * n * 8));
    in.read(reinterpret_cast<char*>(q.data()), static_cast<std::streamsize>(d * 8));
    if (!in) throw Error(ErrorKind::IoError, "short read on " + path.string());
    rows = rm;
    return expect;
}

std::uint64_t BlockStore::read_rows(std::span<const Index> idx, Matrix& out, Vector& q)
{
    // Scattered row reads cannot be checked against whole-file checksums.
    const Index n = part_.n();
    const auto& owner = part_.owner();
    out.resize(static_cast<Index>(idx.size()), n);
    q.resize(static_cast<Index>(idx.size()));

    std::map<Index, std::vector<std::size_t>> by_block;
    for (std::size_t k = 0; k < idx.size(); ++k) by_block[owner[static_cast<std::size_t>(idx[k])]].push_back(k);

    std::uint64_t bytes = 0;
    Bytes raw(static_cast<std::size_t>(n) * 8);
    Vector row(n);
    for (const auto& [b, ks] : by_block) {
        const auto pi = part_.block(b);
        const auto d = static_cast<std::streamoff>(pi.size());
        const auto path = block_path(root_, b);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
        for (const std::size_t k : ks) {
            const auto j = static_cast<std::streamoff>(std::find(pi.begin(), pi.end(), idx[k]) - pi.begin());
            in.seekg(j * n * 8);
            if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
                throw Error(ErrorKind::IoError, "short read on " + path.string());
            }
            Reader rd(raw, path.string());
            rd.reals(row.data(), static_cast<std::size_t>(n));
            out.row(static_cast<Index>(k)) = row.transpose();

            unsigned char qraw[8];
            in.seekg(d * n * 8 + j * 8);
            if (!in.read(reinterpret_cast<char*>(qraw), 8)) {
                throw Error(ErrorKind::IoError, "short read on " + path.string());
            }
            Reader rq(qraw, path.string());
            q(static_cast<Index>(k)) = rq.f64();
            bytes += raw.size() + 8;
        }
    }
    return bytes;
}

void BlockStore::precompute_inverses(unsigned n_workers)
{
    const Index m = part_.size();
    std::vector<std::uint32_t> crcs(static_cast<std::size_t>(m));
    for_groups(m, n_workers, [&](Index i) {
        const auto blk = fetch_block(i);
        const Matrix inv = spd_invert(extract_diagonal_block(blk.rows(), part_.block(i)));
        const Bytes data = encode_square(inv);
        write_file(inverse_path(inverse_dir_, i), data);
        crcs[static_cast<std::size_t>(i)] = crc32_of(data);
    });
    inverse_crc_ = std::move(crcs);
    write_manifest();
}

Matrix BlockStore::load_inverse(Index i) const
{
    if (!has_inverses()) throw Error(ErrorKind::IoError, "store has no inverses");
    if (i < 0 || i >= part_.size()) throw Error(ErrorKind::IndexOutOfRange, "inverse " + std::to_string(i));
    const auto path = inverse_path(inverse_dir_, i);
    const Bytes data = read_file(path);
    check_crc(data, inverse_crc_[static_cast<std::size_t>(i)], path);
    const auto d = static_cast<Index>(part_.block(i).size());
    if (data.size() != static_cast<std::size_t>(d * d) * 8) {
        throw Error(ErrorKind::IoError, path.string() + ": wrong size");
    }
    Reader rd(data, path.string());
    RowMajor rm(d, d);
    rd.reals(rm.data(), static_cast<std::size_t>(d * d));
    return rm;
}

BlockInverses BlockStore::load_inverses() const
{
    BlockInverses out;
    out.reserve(static_cast<std::size_t>(part_.size()));
    for (Index i = 0; i < part_.size(); ++i) out.push_back(load_inverse(i));
    return out;
}

BlockInverses ensure_inverses(BlockStore& store, unsigned n_workers)
{
    if (!store.has_inverses()) store.precompute_inverses(n_workers);
    return store.load_inverses();
}

BlockInverses compute_inverses(BlockSource& source, unsigned n_workers)
{
    const auto& part = source.partition();
    BlockInverses out(static_cast<std::size_t>(part.size()));
    for_groups(part.size(), n_workers, [&](Index i) {
        const auto blk = source.fetch_block(i);
        out[static_cast<std::size_t>(i)] = spd_invert(extract_diagonal_block(blk.rows(), part.block(i)));
    });
    return out;
}

void write_oracle(const fs::path& path, const Oracle& oracle, double r)
{
    Bytes out;
    out.insert(out.end(), std::begin(kOracleMagic), std::end(kOracleMagic));
    put_u32(out, kVersion);
    put_u64(out, static_cast<std::uint64_t>(oracle.x_opt.size()));
    put_f64(out, r);
    put_f64(out, oracle.f_opt);
    for (Index i = 0; i < oracle.x_opt.size(); ++i) put_f64(out, oracle.x_opt(i));
    write_file(path, out);
}

Oracle read_oracle(const fs::path& path, double* r)
{
    const Bytes data = read_file(path);
    Reader rd(data, path.string());
    rd.magic(kOracleMagic);
    if (rd.u32() != kVersion) throw Error(ErrorKind::IoError, path.string() + ": bad version");
    const auto n = static_cast<Index>(rd.u64());
    const double rr = rd.f64();
    Oracle oracle;
    oracle.f_opt = rd.f64();
    oracle.x_opt.resize(n);
    for (Index i = 0; i < n; ++i) oracle.x_opt(i) = rd.f64();
    if (!rd.done()) throw Error(ErrorKind::IoError, path.string() + ": trailing bytes");
    if (r) *r = rr;
    return oracle;
}

} // namespace uqp
