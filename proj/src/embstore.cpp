#include "taskgraph/embstore.hpp"

#include <bit>
#include <cmath>
#include <limits>

#include "taskgraph/binary_io.hpp"
#include "taskgraph/error.hpp"
#include "taskgraph/json_util.hpp"

namespace taskgraph::embstore {
namespace {

constexpr std::uint64_t kHeaderBytes = 16;

struct Header {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
};

Header read_header(binary::Reader& r) {
    r.expect_magic("EMB1");
    const std::size_t at = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw IoError(r.path().string() + ": unsupported version " + std::to_string(version) + " at offset " +
                      std::to_string(at));
    }
    Header h;
    h.rows = r.u32();
    h.cols = r.u32();
    if (h.rows == 0 || h.cols == 0) r.fail("zero dimension in header");
    return h;
}

std::string layer_file_name(int layer) { return "layer-" + std::to_string(layer) + ".emb"; }

}  // namespace

std::filesystem::path labels_path(const std::filesystem::path& layer_path) {
    auto p = layer_path;
    p.replace_extension(".lbl");
    return p;
}

void write_layer(const std::filesystem::path& path, const Matrix& values, const std::vector<int>& labels) {
    if (values.rows() <= 0 || values.cols() <= 0) throw ValidationError("embedding matrix must be non-empty");
    const auto n = static_cast<std::uint64_t>(values.rows()), d = static_cast<std::uint64_t>(values.cols());
    if (n * d > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("N*d overflows u32");
    if (!labels.empty() && labels.size() != n) throw ValidationError("labels length must equal N");
    binary::Writer w;
    w.magic("EMB1");
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) w.f32(static_cast<float>(values(i, j)));
    }
    w.save(path);
    if (!labels.empty()) {
        binary::Writer lw;
        lw.magic("LBL1");
        lw.u32(static_cast<std::uint32_t>(n));
        for (int label : labels) {
            if (label < 0) throw ValidationError("labels must be non-negative");
            lw.u32(static_cast<std::uint32_t>(label));
        }
        lw.save(labels_path(path));
    }
}

std::vector<int> read_labels(const std::filesystem::path& path) {
    binary::Reader r(path);
    r.expect_magic("LBL1");
    const std::uint32_t n = r.u32();
    r.require_payload(4ull * n, "label payload");
    std::vector<std::uint32_t> raw(n);
    r.u32_array(raw.data(), n);
    if (r.remaining() != 0) r.fail("trailing bytes after label payload");
    std::vector<int> out(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (raw[i] > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) r.fail("label out of range");
        out[i] = static_cast<int>(raw[i]);
    }
    return out;
}

EmbeddingSet read_layer(const std::filesystem::path& path) {
    binary::Reader r(path);
    const Header h = read_header(r);
    const std::uint64_t count = static_cast<std::uint64_t>(h.rows) * h.cols;
    r.require_payload(4 * count, "payload");
    std::vector<std::uint32_t> raw(count);
    r.u32_array(raw.data(), count);
    if (r.remaining() != 0) {
        throw IoError(path.string() + ": expected " + std::to_string(kHeaderBytes + 4 * count) + " bytes, file has " +
                      std::to_string(r.size()));
    }
    EmbeddingSet set;
    set.values.resize(h.rows, h.cols);
    for (std::uint32_t i = 0; i < h.rows; ++i) {
        for (std::uint32_t j = 0; j < h.cols; ++j) {
            const float v = std::bit_cast<float>(raw[static_cast<std::size_t>(i) * h.cols + j]);
            if (!std::isfinite(v)) {
                throw IoError(path.string() + ": non-finite value in row " + std::to_string(i) + " column " +
                              std::to_string(j));
            }
            set.values(i, j) = v;
        }
    }
    const auto lbl = labels_path(path);
    if (std::filesystem::exists(lbl)) {
        set.labels = read_labels(lbl);
        if (set.labels.size() != h.rows) {
            throw IoError(lbl.string() + ": " + std::to_string(set.labels.size()) + " labels for " +
                          std::to_string(h.rows) + " rows");
        }
    }
    return set;
}

nlohmann::json to_json(const Manifest& m) {
    nlohmann::json j = {{"schema", kManifestSchema},
                        {"model_id", m.model_id},
                        {"task_id", m.task_id},
                        {"layer_count", m.layer_count()},
                        {"dim", m.dim},
                        {"example_count", m.example_count},
                        {"dtype", "f32-le"},
                        {"layers", m.layers},
                        {"layer_files", m.layer_files}};
    if (m.labels_file) j["labels_file"] = *m.labels_file;
    return j;
}

Manifest manifest_from_json(const nlohmann::json& doc) {
    ObjectReader r(doc, "embstore manifest");
    const auto schema = r.required<std::string>("schema");
    if (schema != kManifestSchema) throw ValidationError("unsupported manifest schema '" + schema + "'");
    if (r.required<std::string>("dtype") != "f32-le") throw ValidationError("manifest dtype must be f32-le");
    Manifest m;
    m.model_id = r.required<std::string>("model_id");
    m.task_id = r.required<std::string>("task_id");
    const int layer_count = r.required<int>("layer_count");
    m.dim = r.required<int>("dim");
    m.example_count = r.required<int>("example_count");
    m.layers = r.required<std::vector<int>>("layers");
    m.layer_files = r.required<std::vector<std::string>>("layer_files");
    if (r.has("labels_file")) m.labels_file = r.required<std::string>("labels_file");
    r.finish();
    if (m.dim <= 0 || m.example_count <= 0) throw ValidationError("manifest dim and example_count must be positive");
    if (layer_count != m.layer_count() || m.layers.size() != m.layer_files.size()) {
        throw ValidationError("manifest layer_count disagrees with its file list");
    }
    return m;
}

Manifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    if (!std::filesystem::exists(path)) throw IoError("manifest missing: " + path.string());
    try {
        return manifest_from_json(nlohmann::json::parse(read_text(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

Manifest write_store(const std::filesystem::path& dir, const std::vector<EmbeddingSet>& layers) {
    if (layers.empty()) throw ValidationError("store needs at least one layer");
    const auto& first = layers.front();
    ensure_directory(dir);
    Manifest m;
    m.model_id = first.model_id;
    m.task_id = first.task_id;
    m.dim = static_cast<int>(first.dim());
    m.example_count = static_cast<int>(first.rows());
    for (const auto& set : layers) {
        if (set.rows() != first.rows() || set.dim() != first.dim()) throw ValidationError("store layers differ in shape");
        if (set.labels != first.labels) throw ValidationError("store layers carry different labels");
        const auto name = layer_file_name(set.layer);
        write_layer(dir / name, set.values);
        m.layers.push_back(set.layer);
        m.layer_files.push_back(name);
    }
    if (!first.labels.empty()) {
        m.labels_file = "labels.lbl";
        binary::Writer lw;
        lw.magic("LBL1");
        lw.u32(static_cast<std::uint32_t>(first.labels.size()));
        for (int label : first.labels) lw.u32(static_cast<std::uint32_t>(label));
        lw.save(dir / *m.labels_file);
    }
    write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
    return m;
}

std::vector<EmbeddingSet> read_store(const std::filesystem::path& dir) {
    const Manifest m = read_manifest(dir);
    std::vector<int> labels;
    if (m.labels_file) {
        labels = read_labels(dir / *m.labels_file);
        if (static_cast<int>(labels.size()) != m.example_count) throw IoError("labels file length disagrees with manifest");
    }
    std::vector<EmbeddingSet> out;
    for (int i = 0; i < m.layer_count(); ++i) {
        const auto path = dir / m.layer_files[static_cast<std::size_t>(i)];
        EmbeddingSet set = read_layer(path);
        if (set.rows() != m.example_count || set.dim() != m.dim) {
            throw IoError(path.string() + ": shape disagrees with the manifest");
        }
        if (set.labels.empty()) set.labels = labels;
        set.model_id = m.model_id;
        set.task_id = m.task_id;
        set.layer = m.layers[static_cast<std::size_t>(i)];
        out.push_back(std::move(set));
    }
    return out;
}

bool ValidationReport::ok() const {
    if (!manifest_ok) return false;
    for (const auto& f : files) {
        if (!f.ok) return false;
    }
    return true;
}

ValidationReport validate_manifest(const std::filesystem::path& dir) {
    ValidationReport report;
    Manifest m;
    try {
        m = read_manifest(dir);
        report.manifest_ok = true;
    } catch (const std::exception& e) {
        report.manifest_message = e.what();
        return report;
    }
    auto check = [&](const std::string& file, auto&& body) {
        FileCheck fc;
        fc.file = file;
        try {
            body(dir / file);
            fc.ok = true;
        } catch (const std::exception& e) {
            fc.message = e.what();
        }
        report.files.push_back(std::move(fc));
    };
    for (const auto& file : m.layer_files) {
        check(file, [&](const std::filesystem::path& path) {
            if (!std::filesystem::exists(path)) throw IoError("file missing");
            binary::Reader r(path);
            const Header h = read_header(r);
            if (static_cast<int>(h.rows) != m.example_count || static_cast<int>(h.cols) != m.dim) {
                throw ValidationError("header shape " + std::to_string(h.rows) + "x" + std::to_string(h.cols) +
                                      " disagrees with manifest " + std::to_string(m.example_count) + "x" +
                                      std::to_string(m.dim));
            }
            read_layer(path);
        });
    }
    if (m.labels_file) {
        check(*m.labels_file, [&](const std::filesystem::path& path) {
            if (!std::filesystem::exists(path)) throw IoError("file missing");
            if (static_cast<int>(read_labels(path).size()) != m.example_count) {
                throw ValidationError("label count disagrees with manifest example_count");
            }
        });
    }
    return report;
}

nlohmann::json to_json(const ValidationReport& r) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : r.files) {
        nlohmann::json j = {{"file", f.file}, {"ok", f.ok}};
        if (!f.ok) j["error"] = f.message;
        files.push_back(std::move(j));
    }
    nlohmann::json out = {{"ok", r.ok()}, {"manifest_ok", r.manifest_ok}, {"files", files}};
    if (!r.manifest_ok) out["manifest_error"] = r.manifest_message;
    return out;
}

}  // namespace taskgraph::embstore
