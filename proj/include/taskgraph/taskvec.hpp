#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "taskgraph/common.hpp"

namespace taskgraph::taskvec {

inline constexpr const char* kManifestSchema = "taskgraph-taskvec/1";

/// One low-rank adapted weight block: the update is b * a.
struct Block {
    int layer = 0;
    std::string projection;
    Matrix b;  // m x r
    Matrix a;  // r x n

    Matrix product() const { return b * a; }
    /// Throws ValidationError unless 1 <= r <= min(m, n) and shapes agree.
    void validate() const;
};

struct TaskVector {
    std::vector<Block> blocks;
};

double cosine_distance(const Block& x, const Block& y);
double l2_distance(const Block& x, const Block& y);

struct GrassmannResult {
    double distance = 0.0;
    Eigen::Index rank_first = 0;
    Eigen::Index rank_second = 0;
    bool rank_mismatch = false;  // only min(rank) angles were compared
};

/// Principal-angle distance between column spaces.
GrassmannResult grassmann(const Matrix& w1, const Matrix& w2);
inline double grassmann_distance(const Matrix& w1, const Matrix& w2) { return grassmann(w1, w2).distance; }

/// Numerical rank with tolerance 1e-8 * largest singular value.
Eigen::Index numerical_rank(const Matrix& m);

struct InvarianceCheck {
    bool holds = false;
    double residual = 0.0;
};

/// Compares d(b1 a1, b2 a2) with d(b1, b2). Throws ValidationError when an `a` lacks full row rank.
InvarianceCheck grassmann_a_invariance_check(const Matrix& b1, const Matrix& a1, const Matrix& b2,
                                             const Matrix& a2);

/// Mean distances over layers for one projection kind.
struct ProjectionSummary {
    std::string projection;
    int layers = 0;
    double cosine = 0.0;
    double l2 = 0.0;
    double grassmann = 0.0;
};

/// Blocks are matched by (layer, projection); both vectors must hold the same set.
std::vector<ProjectionSummary> compare(const TaskVector& x, const TaskVector& y);

/// LRA1 block file: magic, u32 m, r, n, then b and a as row-major little-endian f32.
void write_block(const std::filesystem::path& path, const Block& block);
Block read_block(const std::filesystem::path& path);

/// Directory of block files plus manifest.json.
void write_task_vector(const std::filesystem::path& dir, const TaskVector& tv);
TaskVector read_task_vector(const std::filesystem::path& dir);

}  // namespace taskgraph::taskvec
