#include <uqp/partition.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <uqp/problem.hpp>
#include <uqp/rng.hpp>

namespace uqp {

Partition::Partition(Index n, std::vector<std::vector<Index>> blocks)
    : n_(n), blocks_(std::move(blocks)), owner_(static_cast<std::size_t>(std::max<Index>(n, 0)), -1)
{
    if (n < 1) throw Error(ErrorKind::InvalidPartition, "n must be >= 1");
    Index covered = 0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto& blk = blocks_[b];
        if (blk.empty()) {
            throw Error(ErrorKind::InvalidPartition, "block " + std::to_string(b) + " is empty");
        }
        for (const Index i : blk) {
            if (i < 0 || i >= n) {
                throw Error(ErrorKind::InvalidPartition, "index " + std::to_string(i) + " out of range");
            }
            auto& own = owner_[static_cast<std::size_t>(i)];
            if (own != -1) {
                throw Error(ErrorKind::InvalidPartition,
                            "index " + std::to_string(i) + " appears in two blocks");
            }
            own = static_cast<Index>(b);
            ++covered;
        }
        max_block_ = std::max<Index>(max_block_, static_cast<Index>(blk.size()));
    }
    if (covered != n) {
        throw Error(ErrorKind::InvalidPartition,
                    "blocks cover " + std::to_string(covered) + " of " + std::to_string(n) + " rows");
    }
}

Partition Partition::singletons(Index n) { return contiguous_partition(n, 1); }

std::span<const Index> Partition::block(Index i) const
{
    if (i < 0 || i >= size()) {
        throw Error(ErrorKind::IndexOutOfRange, "block " + std::to_string(i));
    }
    return blocks_[static_cast<std::size_t>(i)];
}

std::string Partition::to_text() const
{
    std::string out;
    for (const auto& blk : blocks_) {
        for (std::size_t j = 0; j < blk.size(); ++j) {
            if (j) out += ',';
            out += std::to_string(blk[j]);
        }
        out += '\n';
    }
    return out;
}

Partition Partition::from_text(std::string_view text)
{
    std::vector<std::vector<Index>> blocks;
    Index count = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        std::vector<Index> blk;
        std::size_t at = 0;
        while (at <= line.size()) {
            auto comma = line.find(',', at);
            if (comma == std::string_view::npos) comma = line.size();
            auto field = line.substr(at, comma - at);
            while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
            while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
            long long value = 0;
            const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
            if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
                throw Error(ErrorKind::InvalidPartition,
                            "malformed index '" + std::string(field) + "'");
            }
            blk.push_back(static_cast<Index>(value));
            at = comma + 1;
        }
        count += static_cast<Index>(blk.size());
        blocks.push_back(std::move(blk));
    }
    if (blocks.empty()) throw Error(ErrorKind::InvalidPartition, "no blocks");
    return Partition(count, std::move(blocks));
}

Partition contiguous_partition(Index n, Index d)
{
    if (n < 1 || d < 1 || d > n) throw Error(ErrorKind::InvalidShape, "need 1 <= d <= n");
    std::vector<std::vector<Index>> blocks;
    for (Index start = 0; start < n; start += d) {
        std::vector<Index> blk(static_cast<std::size_t>(std::min(d, n - start)));
        std::iota(blk.begin(), blk.end(), start);
        blocks.push_back(std::move(blk));
    }
    return Partition(n, std::move(blocks));
}

namespace {

void slice_into(std::vector<std::vector<Index>>& blocks, const std::vector<Index>& order, Index d)
{
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(d)) {
        const auto stop = std::min(order.size(), start + static_cast<std::size_t>(d));
        blocks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(stop));
    }
}

} // namespace

Partition random_partition(Index n, Index d, std::uint64_t seed)
{
    return dominant_partition(n, d, {}, seed);
}

Partition dominant_partition(Index n, Index d, std::span<const Index> heavy, std::uint64_t seed, bool pad)
{
    if (n < 1 || d < 1 || d > n) throw Error(ErrorKind::InvalidShape, "need 1 <= d <= n");
    if (static_cast<Index>(heavy.size()) > d) {
        throw Error(ErrorKind::InvalidShape, "heavy set larger than block size");
    }
    std::vector<char> is_heavy(static_cast<std::size_t>(n), 0);
    for (const Index i : heavy) {
        if (i < 0 || i >= n) throw Error(ErrorKind::InvalidShape, "heavy index out of range");
        is_heavy[static_cast<std::size_t>(i)] = 1;
    }
    std::vector<Index> rest;
    for (Index i = 0; i < n; ++i)
        if (!is_heavy[static_cast<std::size_t>(i)]) rest.push_back(i);
    auto rng = make_rng(seed, stream_partition);
    std::shuffle(rest.begin(), rest.end(), rng);

    std::vector<std::vector<Index>> blocks;
    if (!heavy.empty()) {
        std::vector<Index> first(heavy.begin(), heavy.end());
        if (pad) {
            const auto take = std::min(rest.size(), static_cast<std::size_t>(d) - first.size());
            first.insert(first.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(take));
            rest.erase(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(take));
        }
        blocks.push_back(std::move(first));
    }
    slice_into(blocks, rest, d);
    return Partition(n, std::move(blocks));
}

Partition dominant_partition(const UqpProblem& prob, Index d, std::span<const Index> heavy,
                             std::uint64_t seed, bool pad)
{
    return dominant_partition(prob.n(), d, heavy, seed, pad);
}

std::vector<Index> detect_heavy_rows(const Matrix& p, Index count)
{
    const Index n = p.rows();
    if (count < 0 || count > n) throw Error(ErrorKind::InvalidShape, "count out of range");
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return std::abs(p(a, a)) > std::abs(p(b, b)); });
    order.resize(static_cast<std::size_t>(count));
    std::sort(order.begin(), order.end());
    return order;
}

double hdc_cap(Index n, const HdcLimits& limits, MethodFamily family)
{
    const double rho = static_cast<double>(limits.rho);
    const double dn = static_cast<double>(n);
    switch (family) {
        case MethodFamily::BCD: return std::min(rho, std::cbrt(dn * dn));
        case MethodFamily::BK:
        case MethodFamily::GBCD: return std::min(rho, std::sqrt(dn));
    }
    return 0;
}

bool hdc_admissible(const Partition& part, const HdcLimits& limits, MethodFamily family)
{
    if (limits.rho < 1) return false;
    return static_cast<double>(part.max_block_size()) < hdc_cap(part.n(), limits, family);
}

Matrix permuted_matrix(const Matrix& p, const Partition& part)
{
    std::vector<Index> order;
    order.reserve(static_cast<std::size_t>(part.n()));
    for (const auto& blk : part.blocks()) order.insert(order.end(), blk.begin(), blk.end());
    return p(order, order);
}

Matrix block_diagonal(const Matrix& p_perm, const Partition& part)
{
    Matrix b = Matrix::Zero(p_perm.rows(), p_perm.cols());
    Index at = 0;
    for (const auto& blk : part.blocks()) {
        const Index d = static_cast<Index>(blk.size());
        b.block(at, at, d, d) = p_perm.block(at, at, d, d);
        at += d;
    }
    return b;
}

RateReport rate_bound(const Matrix& p, const Partition& part, Index cap)
{
    const Index n = p.rows();
    if (n != part.n()) throw Error(ErrorKind::DimensionMismatch, "partition size differs from P");
    if (n > cap) {
        throw Error(ErrorKind::TooLargeForDirect,
                    "eigensolve of n = " + std::to_string(n) + " exceeds cap " + std::to_string(cap));
    }
    const Matrix pp = permuted_matrix(p, part);

    // L^{-1} P_Pi L^{-T} with B_Pi = L L^T is similar to P_Pi B_Pi^{-1} and symmetric.
    Matrix linv = Matrix::Zero(n, n);
    double lambda_min_b = std::numeric_limits<double>::infinity();
    Index at = 0;
    for (const auto& blk : part.blocks()) {
        const Index d = static_cast<Index>(blk.size());
        const Matrix bii = pp.block(at, at, d, d);
        const Matrix l = cholesky(bii);
        Matrix li = Matrix::Identity(d, d);
        l.triangularView<Eigen::Lower>().solveInPlace(li);
        linv.block(at, at, d, d) = li;
        lambda_min_b = std::min(lambda_min_b, sym_eigvals(bii)(0));
        at += d;
    }
    Matrix s = linv * pp * linv.transpose();
    s = (0.5 * (s + s.transpose())).eval();

    RateReport rep;
    rep.m = part.size();
    rep.lambda_min_pb = sym_eigvals(s)(0);
    if (!(rep.lambda_min_pb > 0)) {
        throw Error(ErrorKind::NotPositiveDefinite, "lambda_min(P_Pi B_Pi^{-1}) <= 0");
    }
    const double m = static_cast<double>(rep.m);
    rep.bound_exact = 1.0 - rep.lambda_min_pb / m;

    const Matrix off = pp - block_diagonal(pp, part);
    const auto off_ev = sym_eigvals(off);
    rep.offdiag_norm = std::max(std::abs(off_ev(0)), std::abs(off_ev(off_ev.size() - 1)));
    rep.lambda_min_b = lambda_min_b;
    rep.dominance_gap = rep.offdiag_norm / lambda_min_b;
    rep.bound_simple = 1.0 - (1.0 - rep.dominance_gap) / m;
    return rep;
}

RateReport rate_bound(const UqpProblem& prob, const Partition& part, Index cap)
{
    if (prob.n() > cap) {
        throw Error(ErrorKind::TooLargeForDirect,
                    "eigensolve of n = " + std::to_string(prob.n()) + " exceeds cap " +
                        std::to_string(cap));
    }
    return rate_bound(materialize(prob, cap), part, cap);
}

Index iteration_bound(double bound_exact, double eps)
{
    if (!(bound_exact > 0 && bound_exact < 1) || !(eps > 0 && eps < 1)) {
        throw Error(ErrorKind::InvalidShape, "need 0 < bound < 1 and 0 < eps < 1");
    }
    return static_cast<Index>(std::ceil(2.0 * std::log(1.0 / eps) / -std::log(bound_exact)));
}

} // namespace uqp
