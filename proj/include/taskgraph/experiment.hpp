#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "taskgraph/analysis.hpp"
#include "taskgraph/density.hpp"
#include "taskgraph/hmm.hpp"
#include "taskgraph/nanoformer.hpp"

namespace taskgraph::experiment {

/// Full description of one synthetic reproduction run. Defaults follow the
/// paper's training and estimator settings.
struct RunConfig {
    std::uint64_t seed = 0;
    int family_size = 11;
    int vocab_size = 10;
    int num_states = 4;
    double stay_probability = 0.6;
    int min_len = hmm::kDefaultMinLength;
    int max_len = hmm::kMaxSequenceLength;
    int corpus_size = 20000;
    int train_examples = 20000;
    int test_examples = 2000;
    int probe_examples = 2000;
    int likelihood_sequences = 500;
    nanoformer::ModelConfig model;
    nanoformer::TrainConfig pretrain = nanoformer::TrainConfig::pretraining();
    nanoformer::TrainConfig finetune = nanoformer::TrainConfig::finetuning();
    density::KnifeConfig knife;
    std::string window = "all";
    bool save_checkpoints = true;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Unknown keys are rejected at every nesting level.
RunConfig run_config_from_json(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

inline constexpr std::array<hmm::TaskKind, 3> kTasks = {hmm::TaskKind::First, hmm::TaskKind::Last,
                                                        hmm::TaskKind::FirstOrLast};

struct DatasetResult {
    int index = 0;
    analysis::IsMatrix matrix;  // tasks in kTasks order
    std::array<nanoformer::Metrics, 3> metrics{};
    double likelihood_corr_trained = 0.0;
    double likelihood_corr_untrained = 0.0;
    std::vector<double> pretrain_loss;
};

struct RunResult {
    std::vector<DatasetResult> datasets;
    analysis::IsMatrix mean;
    std::string report_hash;
    std::filesystem::path out_dir;
};

/// A pipeline stage failed; `kind` is "validation", "io" or "runtime".
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, std::string kind, const std::string& what)
        : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)), kind_(std::move(kind)) {}
    const std::string& stage() const noexcept { return stage_; }
    const std::string& kind() const noexcept { return kind_; }

private:
    std::string stage_, kind_;
};

double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

/// Synthetic inclusion pattern of one matrix (tasks in kTasks order): every
/// diagonal entry is its row maximum, IS(F->L) <= IS(FvL->L) and IS(L->F) <= IS(FvL->F).
struct PatternCheck {
    bool diagonal_max = false;
    bool f_to_l = false;
    bool l_to_f = false;
    bool all() const { return diagonal_max && f_to_l && l_to_f; }
};
PatternCheck check_pattern(const analysis::IsMatrix& m);

/// Generates the HMM family, trains and fine-tunes every model, embeds a
/// shared probe set, estimates IS matrices and writes all reports under
/// `out_dir`. On failure a FAILED marker naming the stage is written and a
/// StageError is thrown. `log` receives progress lines when non-null.
RunResult run_synthetic_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                   std::ostream* log = nullptr);

/// FNV-1a over the files of a run (sorted relative paths and contents),
/// excluding the run manifest itself.
std::string hash_reports(const std::filesystem::path& out_dir);

}  // namespace taskgraph::experiment
