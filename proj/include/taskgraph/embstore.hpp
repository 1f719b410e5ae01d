#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "taskgraph/common.hpp"

namespace taskgraph::embstore {

inline constexpr const char* kManifestSchema = "taskgraph-embstore/1";
inline constexpr std::uint32_t kVersion = 1;

/// Writes an EMB1 file and, when `labels` is non-empty, a sibling LBL1 file.
void write_layer(const std::filesystem::path& path, const Matrix& values, const std::vector<int>& labels = {});

/// Reads an EMB1 file plus its sibling labels file if present.
EmbeddingSet read_layer(const std::filesystem::path& path);

std::vector<int> read_labels(const std::filesystem::path& path);

/// Labels live next to the layer file with the extension replaced by ".lbl".
std::filesystem::path labels_path(const std::filesystem::path& layer_path);

struct Manifest {
    std::string model_id;
    std::string task_id;
    int dim = 0;
    int example_count = 0;
    std::vector<int> layers;                // layer index per file
    std::vector<std::string> layer_files;   // relative to the store directory
    std::optional<std::string> labels_file;

    int layer_count() const { return static_cast<int>(layer_files.size()); }
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& doc);
Manifest read_manifest(const std::filesystem::path& dir);

/// Writes one file per layer plus manifest.json. All sets must share shape and labels.
Manifest write_store(const std::filesystem::path& dir, const std::vector<EmbeddingSet>& layers);

/// Loads every layer listed in the manifest, tagged with model, task and layer ids.
std::vector<EmbeddingSet> read_store(const std::filesystem::path& dir);

struct FileCheck {
    std::string file;
    bool ok = false;
    std::string message;
};

struct ValidationReport {
    bool manifest_ok = false;
    std::string manifest_message;
    std::vector<FileCheck> files;

    bool ok() const;
};

/// Checks every referenced file against the manifest without stopping at the first failure.
/// A missing or unreadable manifest yields manifest_ok = false.
ValidationReport validate_manifest(const std::filesystem::path& dir);

nlohmann::json to_json(const ValidationReport& r);

}  // namespace taskgraph::embstore
