#include "taskgraph/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "taskgraph/error.hpp"

namespace taskgraph::hmm {
namespace {

constexpr double kStochasticTolerance = 1e-12;

void check_stochastic_rows(const Matrix& m, std::string_view what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (!(m(r, c) >= 0.0) || !std::isfinite(m(r, c))) {
                throw ValidationError(std::string(what) + " has a negative or non-finite entry at (" +
                                      std::to_string(r) + "," + std::to_string(c) + ")");
            }
        }
        double sum = m.row(r).sum();
        if (std::abs(sum - 1.0) > kStochasticTolerance) {
            std::ostringstream msg;
            msg.precision(17);
            msg << what << " row " << r << " sums to " << sum;
            throw ValidationError(msg.str());
        }
    }
}

std::vector<std::discrete_distribution<int>> row_distributions(const Matrix& m) {
    std::vector<std::discrete_distribution<int>> out;
    out.reserve(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> w(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c) w[static_cast<std::size_t>(c)] = m(r, c);
        out.emplace_back(w.begin(), w.end());
    }
    return out;
}

Vector dirichlet_ones(int size, Rng& rng) {
    std::gamma_distribution<double> gamma(1.0, 1.0);
    Vector v(size);
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        v(i) = gamma(rng);
        total += v(i);
    }
    if (total <= 0.0) {
        v.setConstant(1.0 / size);
        return v;
    }
    v /= total;
    // Push the rounding residue into the largest entry so rows sum to 1 tightly.
    Eigen::Index arg = 0;
    v.maxCoeff(&arg);
    v(arg) += 1.0 - v.sum();
    return v;
}

nlohmann::json matrix_json(const Matrix& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, std::string_view what) {
    if (!j.is_array() || j.empty() || !j.front().is_array()) {
        throw ValidationError(std::string(what) + " must be a non-empty array of arrays");
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
            throw ValidationError(std::string(what) + " is ragged at row " + std::to_string(r));
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

}  // namespace

void HmmSpec::validate() const {
    if (num_states < 1) throw ValidationError("num_states must be >= 1");
    if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
    if (initial.size() != num_states) throw ValidationError("initial has wrong length");
    if (transition.rows() != num_states || transition.cols() != num_states) {
        throw ValidationError("transition must be num_states x num_states");
    }
    if (emission.rows() != num_states || emission.cols() != vocab_size) {
        throw ValidationError("emission must be num_states x vocab_size");
    }
    check_stochastic_rows(initial.transpose(), "initial");
    check_stochastic_rows(transition, "transition");
    check_stochastic_rows(emission, "emission");
}

int class_count(TaskKind task) {
    return task == TaskKind::FirstOrLast ? 4 : 2;
}

std::string_view task_name(TaskKind task) {
    switch (task) {
        case TaskKind::First: return "F";
        case TaskKind::Last: return "L";
        case TaskKind::FirstOrLast: return "FvL";
    }
    return "?";
}

TaskKind parse_task(std::string_view name) {
    if (name == "F" || name == "First") return TaskKind::First;
    if (name == "L" || name == "Last") return TaskKind::Last;
    if (name == "FvL" || name == "FirstOrLast" || name == "First_or_Last") return TaskKind::FirstOrLast;
    throw ValidationError("unknown task '" + std::string(name) + "' (expected F, L or FvL)");
}

HmmSpec default_automaton(int vocab_size, std::uint64_t seed, int num_states, double stay_probability) {
    if (num_states < 1) throw ValidationError("num_states must be >= 1");
    if (!(stay_probability >= 0.0 && stay_probability <= 1.0)) {
        throw ValidationError("stay probability must lie in [0, 1]");
    }
    HmmSpec spec;
    spec.num_states = num_states;
    spec.vocab_size = vocab_size;
    spec.initial = Vector::Constant(num_states, 1.0 / num_states);
    spec.transition = Matrix::Zero(num_states, num_states);
    for (int s = 0; s < num_states; ++s) {
        if (num_states == 1) {
            spec.transition(s, s) = 1.0;
        } else {
            spec.transition(s, s) = stay_probability;
            spec.transition(s, (s + 1) % num_states) = 1.0 - stay_probability;
        }
    }
    Rng rng(derive_seed(seed, 0xe111));
    spec.emission.resize(num_states, vocab_size);
    for (int s = 0; s < num_states; ++s) spec.emission.row(s) = dirichlet_ones(vocab_size, rng).transpose();
    spec.validate();
    return spec;
}

Sequence sample_sequence(const HmmSpec& spec, int max_len, int min_len, Rng& rng) {
    if (max_len < 1 || max_len > kMaxSequenceLength) {
        throw ValidationError("max_len must lie in [1, " + std::to_string(kMaxSequenceLength) + "]");
    }
    const int lo = std::clamp(min_len, 1, max_len);
    std::uniform_int_distribution<int> length_dist(lo, max_len);
    const int length = length_dist(rng);

    std::discrete_distribution<int> init(spec.initial.data(), spec.initial.data() + spec.initial.size());
    auto trans = row_distributions(spec.transition);
    auto emit = row_distributions(spec.emission);

    Sequence out;
    out.reserve(static_cast<std::size_t>(length));
    int state = init(rng);
    for (int t = 0; t < length; ++t) {
        if (t > 0) state = trans[static_cast<std::size_t>(state)](rng);
        out.push_back(emit[static_cast<std::size_t>(state)](rng));
    }
    return out;
}

Sequence sample_sequence(const HmmSpec& spec, int max_len, std::uint64_t seed, int min_len) {
    spec.validate();
    Rng rng(seed);
    return sample_sequence(spec, max_len, min_len, rng);
}

std::vector<Sequence> sample_corpus(const HmmSpec& spec, int count, int max_len, std::uint64_t seed,
                                    int min_len) {
    spec.validate();
    if (count < 0) throw ValidationError("count must be non-negative");
    Rng rng(seed);
    std::vector<Sequence> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(sample_sequence(spec, max_len, min_len, rng));
    return out;
}

double forward_log_likelihood(const HmmSpec& spec, const Sequence& sequence) {
    if (sequence.empty()) throw ValidationError("forward_log_likelihood: empty sequence");
    for (int s : sequence) {
        if (s < 0 || s >= spec.vocab_size) {
            throw ValidationError("symbol " + std::to_string(s) + " outside vocabulary");
        }
    }
    Vector alpha = spec.initial.cwiseProduct(spec.emission.col(sequence.front()));
    double log_prob = 0.0;
    for (std::size_t t = 0;; ++t) {
        const double scale = alpha.sum();
        if (scale <= 0.0) return -std::numeric_limits<double>::infinity();
        log_prob += std::log(scale);
        alpha /= scale;
        if (t + 1 == sequence.size()) break;
        alpha = (spec.transition.transpose() * alpha).cwiseProduct(spec.emission.col(sequence[t + 1]));
    }
    return log_prob;
}

int label_example(TaskKind task, const Sequence& sequence, int c1, int c2) {
    if (sequence.empty()) throw ValidationError("label_example: empty sequence");
    const bool first = sequence.front() == c1;
    const bool last = sequence.back() == c2;
    switch (task) {
        case TaskKind::First: return first ? 0 : 1;
        case TaskKind::Last: return last ? 0 : 1;
        case TaskKind::FirstOrLast:
            if (first && last) return 0;
            if (first) return 1;
            if (last) return 2;
            return 3;
    }
    return -1;
}

std::vector<LabeledExample> make_task_dataset(const HmmSpec& spec, TaskKind task, int n, std::uint64_t seed,
                                              int max_len, int min_len) {
    spec.validate();
    if (n <= 0) throw ValidationError("make_task_dataset: n must be positive");
    Rng rng(seed);
    std::uniform_int_distribution<int> class_dist(0, class_count(task) - 1);
    std::uniform_int_distribution<int> symbol(0, spec.vocab_size - 1);
    std::vector<LabeledExample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        LabeledExample ex;
        ex.sequence = sample_sequence(spec, max_len, min_len, rng);
        const int target = class_dist(rng);
        do {
            ex.c1 = symbol(rng);
            ex.c2 = symbol(rng);
            ex.label = label_example(task, ex.sequence, ex.c1, ex.c2);
        } while (ex.label != target);
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<LabeledExample> relabel(const std::vector<LabeledExample>& data, TaskKind task) {
    std::vector<LabeledExample> out = data;
    for (auto& ex : out) ex.label = label_example(task, ex.sequence, ex.c1, ex.c2);
    return out;
}

std::vector<HmmSpec> gen_dataset_family(const HmmSpec& base, int count, std::uint64_t seed) {
    base.validate();
    if (count < 1) throw ValidationError("gen_dataset_family: count must be >= 1");
    std::vector<HmmSpec> family;
    family.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        HmmSpec spec = base;
        for (int s = 0; s < spec.num_states; ++s) {
            spec.emission.row(s) = dirichlet_ones(spec.vocab_size, rng).transpose();
        }
        family.push_back(std::move(spec));
    }
    return family;
}

nlohmann::json to_json(const HmmSpec& spec) {
    nlohmann::json j;
    j["num_states"] = spec.num_states;
    j["vocab_size"] = spec.vocab_size;
    j["initial"] = std::vector<double>(spec.initial.data(), spec.initial.data() + spec.initial.size());
    j["transition"] = matrix_json(spec.transition);
    j["emission"] = matrix_json(spec.emission);
    return j;
}

HmmSpec spec_from_json(const nlohmann::json& doc) {
    try {
        HmmSpec spec;
        spec.num_states = doc.at("num_states").get<int>();
        spec.vocab_size = doc.at("vocab_size").get<int>();
        auto init = doc.at("initial").get<std::vector<double>>();
        spec.initial = Eigen::Map<const Vector>(init.data(), static_cast<Eigen::Index>(init.size()));
        spec.transition = matrix_from_json(doc.at("transition"), "transition");
        spec.emission = matrix_from_json(doc.at("emission"), "emission");
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed HMM spec: ") + e.what());
    }
}

HmmSpec load_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return spec_from_json(doc);
}

void save_spec(const HmmSpec& spec, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(spec).dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void save_dataset(const std::vector<LabeledExample>& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& ex : data) {
        nlohmann::json j;
        j["seq"] = ex.sequence;
        j["c1"] = ex.c1;
        j["c2"] = ex.c2;
        j["y"] = ex.label;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<LabeledExample> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<LabeledExample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            LabeledExample ex;
            ex.sequence = j.at("seq").get<Sequence>();
            ex.c1 = j.value("c1", 0);
            ex.c2 = j.value("c2", 0);
            ex.label = j.value("y", 0);
            if (ex.sequence.empty()) throw ValidationError("empty sequence");
            out.push_back(std::move(ex));
        } catch (const std::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace taskgraph::hmm
