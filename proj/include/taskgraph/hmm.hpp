#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "taskgraph/common.hpp"

namespace taskgraph::hmm {

using Sequence = std::vector<int>;

/// Discrete-emission hidden Markov model.
struct HmmSpec {
    int num_states = 1;
    int vocab_size = 10;
    Vector initial;     // num_states
    Matrix transition;  // num_states x num_states, row-stochastic
    Matrix emission;    // num_states x vocab_size, row-stochastic

    /// Throws ValidationError when any invariant is broken.
    void validate() const;
};

enum class TaskKind { First, Last, FirstOrLast };

int class_count(TaskKind task);
std::string_view task_name(TaskKind task);
/// Accepts "F", "L", "FvL" and the long names "First", "Last", "FirstOrLast".
TaskKind parse_task(std::string_view name);

struct LabeledExample {
    Sequence sequence;
    int c1 = 0;
    int c2 = 0;
    int label = 0;
};

inline constexpr int kMaxSequenceLength = 30;
inline constexpr int kDefaultMinLength = 5;

/// Four-state ring with self-loops (stay 0.6 / advance 0.4), uniform initial
/// state and Dirichlet(1) emission rows drawn from `seed`.
HmmSpec default_automaton(int vocab_size = 10, std::uint64_t seed = 0, int num_states = 4,
                          double stay_probability = 0.6);

/// Length is uniform in [min(min_len, max_len), max_len].
Sequence sample_sequence(const HmmSpec& spec, int max_len, std::uint64_t seed,
                         int min_len = kDefaultMinLength);
Sequence sample_sequence(const HmmSpec& spec, int max_len, int min_len, Rng& rng);
std::vector<Sequence> sample_corpus(const HmmSpec& spec, int count, int max_len,
                                    std::uint64_t seed, int min_len = kDefaultMinLength);

/// Natural-log probability of `sequence` under the forward algorithm (scaled).
double forward_log_likelihood(const HmmSpec& spec, const Sequence& sequence);

int label_example(TaskKind task, const Sequence& sequence, int c1, int c2);

/// `n` labeled examples. Each example targets a uniformly drawn class and
/// rejection-samples (c1, c2) until the label matches, so every class
/// appears at rate 1/arity in expectation.
std::vector<LabeledExample> make_task_dataset(const HmmSpec& spec, TaskKind task, int n,
                                              std::uint64_t seed,
                                              int max_len = kMaxSequenceLength,
                                              int min_len = kDefaultMinLength);

/// Relabels the same inputs for another task.
std::vector<LabeledExample> relabel(const std::vector<LabeledExample>& data, TaskKind task);

/// `count` specs sharing base.transition and base.initial, each with fresh
/// Dirichlet(1) emission rows.
std::vector<HmmSpec> gen_dataset_family(const HmmSpec& base, int count, std::uint64_t seed);

nlohmann::json to_json(const HmmSpec& spec);
HmmSpec spec_from_json(const nlohmann::json& doc);
HmmSpec load_spec(const std::filesystem::path& path);
void save_spec(const HmmSpec& spec, const std::filesystem::path& path);

/// JSON-lines dataset, one {"seq","c1","c2","y"} object per line.
void save_dataset(const std::vector<LabeledExample>& data, const std::filesystem::path& path);
std::vector<LabeledExample> load_dataset(const std::filesystem::path& path);

}  // namespace taskgraph::hmm
