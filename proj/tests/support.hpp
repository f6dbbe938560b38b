#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <uqp/problem.hpp>
#include <uqp/rng.hpp>

namespace uqp::test {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir
{
public:
    TempDir()
    {
        std::string tmpl = (std::filesystem::temp_directory_path() / "uqp-test-XXXXXX").string();
        if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// P = V^T V / (2n) + I with V of size 2n x n: condition number stays small.
inline UqpProblem well_conditioned(Index n, std::uint64_t seed)
{
    Rng rng = make_rng(seed, 0xC0FFEE);
    const Matrix v = standard_normal(2 * n, n, rng);
    Matrix p = v.transpose() * v / static_cast<double>(2 * n);
    p.diagonal().array() += 1.0;
    p = (0.5 * (p + p.transpose())).eval();
    const Vector x = standard_normal(n, 1, rng);
    Vector q = p * x;
    return UqpProblem::from_matrix(std::move(p), std::move(q));
}

inline Vector random_vector(Index n, std::uint64_t seed)
{
    Rng rng = make_rng(seed, 0xBEEF);
    return standard_normal(n, 1, rng);
}

} // namespace uqp::test
