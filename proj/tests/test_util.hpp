#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "taskgraph/common.hpp"
#include "taskgraph/deficiency.hpp"

namespace taskgraph::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("taskgraph-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
    return m;
}

/// Row-stochastic matrix with exponential entries, rows normalised.
inline deficiency::FiniteKernel random_kernel(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::exponential_distribution<double> e(1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = e(rng);
        m.row(i) /= m.row(i).sum();
    }
    return deficiency::FiniteKernel(m, 1e-9);
}

inline Vector random_distribution(Eigen::Index n, Rng& rng) {
    std::exponential_distribution<double> e(1.0);
    Vector p(n);
    for (Eigen::Index i = 0; i < n; ++i) p(i) = e(rng);
    return p / p.sum();
}

/// Exhaustive search over 2x2 row-stochastic witnesses at resolution `step`.
inline double brute_force_deficiency_2x2(const deficiency::FiniteKernel& source,
                                         const deficiency::FiniteKernel& target, double step = 1e-3) {
    const int n = static_cast<int>(std::lround(1.0 / step));
    const Matrix& k = source.matrix();
    const Matrix& t = target.matrix();
    double best = 1.0;
    for (int i = 0; i <= n; ++i) {
        const double a = i * step;
        for (int j = 0; j <= n; ++j) {
            const double b = j * step;
            double worst = 0.0;
            for (Eigen::Index y = 0; y < k.rows(); ++y) {
                const double z0 = k(y, 0) * a + k(y, 1) * b;
                worst = std::max(worst, std::abs(z0 - t(y, 0)));
            }
            best = std::min(best, worst);
        }
    }
    return best;
}

/// Joint of (Z_U, Z_V) and the two (Y, Z) joints for Z_U <- Y -> Z_V.
struct MarkovJoint {
    Matrix uv, yu, yv;
};

inline MarkovJoint markov_joint(Eigen::Index ny, Eigen::Index nu, Eigen::Index nv, Rng& rng) {
    const Vector prior = random_distribution(ny, rng);
    const Matrix ku = random_kernel(ny, nu, rng).matrix();
    const Matrix kv = random_kernel(ny, nv, rng).matrix();
    MarkovJoint j;
    j.yu = prior.asDiagonal() * ku;
    j.yv = prior.asDiagonal() * kv;
    j.uv = Matrix::Zero(nu, nv);
    for (Eigen::Index y = 0; y < ny; ++y) j.uv += prior(y) * ku.row(y).transpose() * kv.row(y);
    j.uv /= j.uv.sum();
    j.yu /= j.yu.sum();
    j.yv /= j.yv.sum();
    return j;
}

}  // namespace taskgraph::testing
