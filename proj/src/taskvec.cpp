#include "taskgraph/taskvec.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"

#include "taskgraph/binary_io.hpp"
#include "taskgraph/error.hpp"
#include "taskgraph/json_util.hpp"

namespace taskgraph::taskvec {
namespace {

constexpr double kRankTolerance = 1e-8;

/// Orthonormal basis of the column space.
Matrix column_basis(const Matrix& w) {
    Eigen::BDCSVD<Matrix> svd(w, Eigen::ComputeThinU);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || !(s(0) > 0.0)) throw ValidationError("Grassmann distance of a zero matrix");
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > kRankTolerance * s(0)) ++r;
    return svd.matrixU().leftCols(r);
}

void check_same_shape(const Block& x, const Block& y) {
    x.validate();
    y.validate();
    if (x.b.rows() != y.b.rows() || x.a.cols() != y.a.cols()) {
        throw ValidationError("task-vector blocks differ in shape");
    }
}

void write_matrix(binary::Writer& w, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
    }
}

Matrix read_matrix(binary::Reader& r, std::uint32_t rows, std::uint32_t cols, const char* name) {
    Matrix m(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) {
            const float v = r.f32();
            if (!std::isfinite(v)) r.fail(std::string("non-finite value in ") + name);
            m(i, j) = v;
        }
    }
    return m;
}

std::string block_file_name(const Block& b) {
    return "layer" + std::to_string(b.layer) + "-" + b.projection + ".lra";
}

}  // namespace

void Block::validate() const {
    if (b.cols() != a.rows()) throw ValidationError("block B columns must equal A rows");
    const Eigen::Index r = b.cols();
    if (r < 1 || r > std::min(b.rows(), a.cols())) {
        throw ValidationError("block rank must satisfy 1 <= r <= min(m, n)");
    }
    if (projection.empty()) throw ValidationError("block projection name is empty");
}

double cosine_distance(const Block& x, const Block& y) {
    check_same_shape(x, y);
    const Matrix px = x.product(), py = y.product();
    const double nx = px.norm(), ny = py.norm();
    if (nx == 0.0 || ny == 0.0) throw ValidationError("cosine distance of a zero-norm update");
    const double cos = std::clamp(px.cwiseProduct(py).sum() / (nx * ny), -1.0, 1.0);
    return 1.0 - cos;
}

double l2_distance(const Block& x, const Block& y) {
    check_same_shape(x, y);
    return (x.product() - y.product()).norm();
}

Eigen::Index numerical_rank(const Matrix& m) {
    Eigen::BDCSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || !(s(0) > 0.0)) return 0;
    Eigen::Index r = 0;
    while (r < s.size() && s(r) > kRankTolerance * s(0)) ++r;
    return r;
}

GrassmannResult grassmann(const Matrix& w1, const Matrix& w2) {
    if (w1.rows() != w2.rows()) throw ValidationError("Grassmann distance needs equal row counts");
    if (!w1.allFinite() || !w2.allFinite()) throw ValidationError("Grassmann distance of non-finite input");
    Matrix q1 = column_basis(w1), q2 = column_basis(w2);
    GrassmannResult out;
    out.rank_first = q1.cols();
    out.rank_second = q2.cols();
    out.rank_mismatch = q1.cols() != q2.cols();
    if (q1.cols() > q2.cols()) std::swap(q1, q2);

    // Cosines are inaccurate for small angles and sines for large ones; pair them by order.
    Vector cosines = Eigen::JacobiSVD<Matrix>(q1.transpose() * q2).singularValues();
    const Matrix residual = q1 - q2 * (q2.transpose() * q1);
    Vector sines = Eigen::JacobiSVD<Matrix>(residual).singularValues();
    std::sort(cosines.data(), cosines.data() + cosines.size(), std::greater<>());
    std::sort(sines.data(), sines.data() + sines.size());

    double sum = 0.0;
    for (Eigen::Index i = 0; i < q1.cols(); ++i) {
        const double c = std::clamp(i < cosines.size() ? cosines(i) : 0.0, 0.0, 1.0);
        const double s = std::clamp(i < sines.size() ? sines(i) : 1.0, 0.0, 1.0);
        const double theta = c * c >= 0.5 ? std::asin(s) : std::acos(c);
        sum += theta * theta;
    }
    out.distance = std::sqrt(sum);
    return out;
}

InvarianceCheck grassmann_a_invariance_check(const Matrix& b1, const Matrix& a1, const Matrix& b2,
                                             const Matrix& a2) {
    if (b1.cols() != a1.rows() || b2.cols() != a2.rows()) throw ValidationError("B columns must equal A rows");
    if (numerical_rank(a1) != a1.rows() || numerical_rank(a2) != a2.rows()) {
        throw ValidationError("A must have full row rank for the invariance to hold");
    }
    InvarianceCheck out;
    out.residual = std::abs(grassmann_distance(b1 * a1, b2 * a2) - grassmann_distance(b1, b2));
    out.holds = out.residual < 1e-6;
    return out;
}

std::vector<ProjectionSummary> compare(const TaskVector& x, const TaskVector& y) {
    std::map<std::pair<std::string, int>, const Block*> other;
    for (const auto& b : y.blocks) {
        if (!other.emplace(std::make_pair(b.projection, b.layer), &b).second) {
            throw ValidationError("duplicate block " + block_file_name(b));
        }
    }
    if (other.size() != x.blocks.size()) throw ValidationError("task vectors hold different block sets");
    std::map<std::string, ProjectionSummary> acc;
    std::set<std::pair<std::string, int>> seen;
    for (const auto& b : x.blocks) {
        if (!seen.emplace(b.projection, b.layer).second) throw ValidationError("duplicate block " + block_file_name(b));
        auto it = other.find({b.projection, b.layer});
        if (it == other.end()) throw ValidationError("block " + block_file_name(b) + " missing from second task vector");
        auto& s = acc[b.projection];
        s.projection = b.projection;
        ++s.layers;
        s.cosine += cosine_distance(b, *it->second);
        s.l2 += l2_distance(b, *it->second);
        s.grassmann += grassmann_distance(b.product(), it->second->product());
    }
    std::vector<ProjectionSummary> out;
    for (auto& [name, s] : acc) {
        s.cosine /= s.layers;
        s.l2 /= s.layers;
        s.grassmann /= s.layers;
        out.push_back(s);
    }
    return out;
}

void write_block(const std::filesystem::path& path, const Block& block) {
    block.validate();
    binary::Writer w;
    w.magic("LRA1");
    w.u32(static_cast<std::uint32_t>(block.b.rows()));
    w.u32(static_cast<std::uint32_t>(block.b.cols()));
    w.u32(static_cast<std::uint32_t>(block.a.cols()));
    write_matrix(w, block.b);
    write_matrix(w, block.a);
    w.save(path);
}

Block read_block(const std::filesystem::path& path) {
    binary::Reader r(path);
    r.expect_magic("LRA1");
    const std::uint32_t m = r.u32(), rank = r.u32(), n = r.u32();
    if (m == 0 || rank == 0 || n == 0) r.fail("zero dimension in block header");
    r.require_payload(4ull * (static_cast<std::uint64_t>(m) * rank + static_cast<std::uint64_t>(rank) * n),
                      "block payload");
    Block b;
    b.b = read_matrix(r, m, rank, "B");
    b.a = read_matrix(r, rank, n, "A");
    if (r.remaining() != 0) r.fail("trailing bytes after block payload");
    return b;
}

void write_task_vector(const std::filesystem::path& dir, const TaskVector& tv) {
    ensure_directory(dir);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : tv.blocks) {
        const std::string file = block_file_name(b);
        write_block(dir / file, b);
        blocks.push_back({{"file", file},
                          {"layer", b.layer},
                          {"projection", b.projection},
                          {"m", b.b.rows()},
                          {"r", b.b.cols()},
                          {"n", b.a.cols()}});
    }
    const nlohmann::json manifest = {{"schema", kManifestSchema}, {"dtype", "f32-le"}, {"blocks", blocks}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

TaskVector read_task_vector(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw IoError("missing task-vector manifest: " + manifest_path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(manifest_path.string() + ": " + e.what());
    }
    ObjectReader top(doc, manifest_path.string());
    if (top.required<std::string>("schema") != kManifestSchema) throw ValidationError("unsupported task-vector schema");
    if (top.required<std::string>("dtype") != "f32-le") throw ValidationError("unsupported task-vector dtype");
    const auto& list = top.child("blocks");
    top.finish();
    if (!list.is_array()) throw ValidationError("task-vector manifest 'blocks' must be an array");
    TaskVector tv;
    for (const auto& entry : list) {
        ObjectReader e(entry, "task-vector block");
        const auto file = e.required<std::string>("file");
        const int layer = e.required<int>("layer");
        const auto projection = e.required<std::string>("projection");
        const auto m = e.required<long>("m"), r = e.required<long>("r"), n = e.required<long>("n");
        e.finish();
        const auto path = dir / file;
        if (!std::filesystem::exists(path)) {
            throw IoError("block layer " + std::to_string(layer) + " " + projection + " missing file " + path.string());
        }
        Block b = read_block(path);
        if (b.b.rows() != m || b.b.cols() != r || b.a.cols() != n) {
            throw ValidationError(path.string() + ": header shape disagrees with the manifest");
        }
        b.layer = layer;
        b.projection = projection;
        b.validate();
        tv.blocks.push_back(std::move(b));
    }
    return tv;
}

}  // namespace taskgraph::taskvec
