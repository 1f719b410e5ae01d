#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "taskgraph/common.hpp"
#include "taskgraph/density.hpp"

namespace taskgraph::analysis {

/// Inclusive layer range.
struct LayerWindow {
    int first = 0;
    int last = 0;

    int width() const { return last - first + 1; }
    std::string str() const;
};

/// Parses "10-15", "7" or "all" (resolved against `available`).
LayerWindow parse_window(const std::string& text, const std::vector<int>& available = {});

/// Entry (i, j) is IS(task_i -> task_j) averaged over the window.
struct IsMatrix {
    std::vector<std::string> tasks;
    Matrix values;
    LayerWindow window;
    /// Held-out marginal entropy of each task's embeddings, averaged over the window.
    Vector marginal_entropy;
};

/// Every layer of one task's embeddings, all row-aligned on the same inputs.
using LayerStack = std::vector<EmbeddingSet>;

const EmbeddingSet& find_layer(const LayerStack& stack, int layer);

/// Fits one marginal per (task, layer) and one conditional per (source,
/// target, layer). `ledger`, when given, receives every estimate.
IsMatrix build_is_matrix(const std::vector<LayerStack>& tasks, LayerWindow window, const density::KnifeConfig& cfg,
                         std::uint64_t seed, std::vector<density::IsEstimate>* ledger = nullptr);

/// Element-wise mean of matrices over identical task lists.
IsMatrix mean_matrix(const std::vector<IsMatrix>& matrices);

struct PpRanking {
    std::vector<std::string> tasks;
    std::vector<double> pp;
    std::vector<int> rank;  // 0 = lowest predictive power
};

/// PP(U) = sum_V IS(U -> V) - IS(V -> U). Ties rank by task id.
PpRanking predictive_power(const IsMatrix& m);

/// Tie-corrected Kendall tau-b. Throws when either side is constant.
double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys);

inline constexpr double kTieThreshold = 1e-6;

struct Inclusion {
    std::string included;   // V in "V included in U"
    std::string container;  // U
    double margin = 0.0;    // IS(U -> V) - IS(V -> U), >= 0
    bool incomparable = false;
};

/// One relation per unordered pair: V is included in U when IS(U -> V) >= IS(V -> U).
std::vector<Inclusion> pairwise_inclusion(const IsMatrix& m, double tie_threshold = kTieThreshold);

struct ProfileEntry {
    int layer = 0;
    double finetuned_to_pretrained = 0.0;
    double pretrained_to_finetuned = 0.0;
    double gap() const { return pretrained_to_finetuned - finetuned_to_pretrained; }
};

std::vector<ProfileEntry> layer_profile(const LayerStack& finetuned, const LayerStack& pretrained,
                                        const density::KnifeConfig& cfg, std::uint64_t seed);

/// Contiguous run of at least `min_width` profile entries with the largest
/// mean gap; the earliest run wins ties.
LayerWindow select_window(const std::vector<ProfileEntry>& profile, int min_width = 1);

struct Report {
    IsMatrix matrix;
    nlohmann::json metadata = nlohmann::json::object();  // seeds, window, config ...
    std::vector<ProfileEntry> profile;
    nlohmann::json tables = nlohmann::json::object();  // extra named tables (accuracy, entropy)
};

/// Hash of the "config" member of the metadata (FNV-1a over its compact dump).
std::string config_hash(const nlohmann::json& metadata);

nlohmann::json to_json(const IsMatrix& m);
IsMatrix matrix_from_json(const nlohmann::json& doc);

std::string matrix_csv(const IsMatrix& m);
std::string heatmap_svg(const IsMatrix& m);

/// Writes is_matrix.csv, report.json, heatmap.svg and, when a profile is
/// present, layer_profile.csv into `out_dir`.
void emit_report(const Report& report, const std::filesystem::path& out_dir);
Report load_report(const std::filesystem::path& json_path);

}  // namespace taskgraph::analysis
