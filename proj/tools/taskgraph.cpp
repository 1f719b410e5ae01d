#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "taskgraph/analysis.hpp"
#include "taskgraph/common.hpp"
#include "taskgraph/deficiency.hpp"
#include "taskgraph/density.hpp"
#include "taskgraph/embstore.hpp"
#include "taskgraph/error.hpp"
#include "taskgraph/experiment.hpp"
#include "taskgraph/hmm.hpp"
#include "taskgraph/nanoformer.hpp"
#include "taskgraph/taskvec.hpp"

namespace fs = std::filesystem;
using namespace taskgraph;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;
constexpr int kExitRuntime = 3;

/// Flags shared by every subcommand.
struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
    CLI::Option* seed_option = nullptr;

    void attach(CLI::App* app, bool out_required, const std::string& out_help) {
        seed_option = app->add_option("--seed", seed, "Master seed; overrides the config seed");
        app->add_option("--config", config, "Run configuration JSON; sections used by this subcommand apply")
            ->check(CLI::ExistingFile);
        auto* o = app->add_option("--out", out, out_help);
        if (out_required) o->required();
    }

    experiment::RunConfig run_config() const {
        experiment::RunConfig cfg = config.empty() ? experiment::RunConfig{} : experiment::load_run_config(config);
        if (seed_option->count() > 0) cfg.seed = seed;
        return cfg;
    }
};

/// Writes `text` to --out when given, otherwise to stdout.
void emit(const Common& common, const std::string& text) {
    if (common.out.empty()) {
        std::cout << text;
        return;
    }
    const fs::path path(common.out);
    if (path.has_parent_path()) ensure_directory(path.parent_path());
    write_text(path, text);
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string dataset_dir(int index) {
    std::ostringstream s;
    s << "ds-" << (index < 10 ? "0" : "") << index;
    return s.str();
}

std::vector<int> layer_ids(const std::vector<EmbeddingSet>& stack) {
    std::vector<int> ids;
    for (const auto& s : stack) ids.push_back(s.layer);
    return ids;
}

std::vector<int> layers_in(const analysis::LayerWindow& w, const std::vector<int>& available) {
    std::vector<int> out;
    for (int l : available) {
        if (l >= w.first && l <= w.last) out.push_back(l);
    }
    if (out.empty()) throw ValidationError("no layers in window " + w.str());
    return out;
}

std::vector<double> parse_numbers(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("not a number: '" + item + "'");
        }
    }
    return out;
}

// --- hmm-gen ---------------------------------------------------------------

struct HmmGenArgs {
    Common common;
    std::optional<int> family_size;
    int examples = 0;
};

int cmd_hmm_gen(const HmmGenArgs& a) {
    const auto cfg = a.common.run_config();
    const int count = a.family_size.value_or(cfg.family_size);
    if (count < 1) throw ValidationError("--family-size must be >= 1");
    if (a.examples < 0) throw ValidationError("--examples must be >= 0");
    const auto base = hmm::default_automaton(cfg.vocab_size, derive_seed(cfg.seed, 1), cfg.num_states,
                                             cfg.stay_probability);
    const auto family = hmm::gen_dataset_family(base, count, derive_seed(cfg.seed, 2));
    const fs::path out(a.common.out);
    for (int i = 0; i < count; ++i) {
        const auto dir = out / dataset_dir(i);
        ensure_directory(dir);
        hmm::save_spec(family[static_cast<std::size_t>(i)], dir / "hmm.json");
        if (a.examples == 0) continue;
        const std::uint64_t ds_seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(i));
        for (std::size_t t = 0; t < experiment::kTasks.size(); ++t) {
            const auto task = experiment::kTasks[t];
            const auto data = hmm::make_task_dataset(family[static_cast<std::size_t>(i)], task, a.examples,
                                                     derive_seed(ds_seed, 10 + t), cfg.max_len, cfg.min_len);
            hmm::save_dataset(data, dir / (std::string(hmm::task_name(task)) + ".jsonl"));
        }
    }
    return 0;
}

// --- pretrain / finetune / embed --------------------------------------------

struct PretrainArgs {
    Common common;
    std::string hmm;
    std::optional<int> corpus_size;
};

int cmd_pretrain(const PretrainArgs& a) {
    const auto cfg = a.common.run_config();
    const auto spec = hmm::load_spec(a.hmm);
    const int n = a.corpus_size.value_or(cfg.corpus_size);
    if (n < 1) throw ValidationError("--corpus-size must be >= 1");
    auto mc = cfg.model;
    mc.symbol_count = spec.vocab_size;
    auto tc = cfg.pretrain;
    tc.seed = derive_seed(cfg.seed, 40);
    const auto corpus = hmm::sample_corpus(spec, n, cfg.max_len, derive_seed(cfg.seed, 1), cfg.min_len);
    const auto result = nanoformer::pretrain(corpus, mc, tc);
    nanoformer::save_checkpoint(result.params, a.common.out);
    std::cout << json{{"checkpoint", a.common.out}, {"epoch_loss", result.epoch_loss}}.dump() << '\n';
    return 0;
}

struct FinetuneArgs {
    Common common;
    std::string checkpoint;
    std::string data;
    std::string task;
    std::string test;
};

int cmd_finetune(const FinetuneArgs& a) {
    const auto cfg = a.common.run_config();
    const auto task = hmm::parse_task(a.task);
    const auto base = nanoformer::load_checkpoint(a.checkpoint);
    const auto train = hmm::load_dataset(a.data);
    auto tc = cfg.finetune;
    tc.seed = derive_seed(cfg.seed, 50);
    const auto result = nanoformer::finetune(base, train, task, tc);
    nanoformer::save_checkpoint(result.params, a.common.out);
    json summary = {{"checkpoint", a.common.out}, {"task", hmm::task_name(task)}, {"epoch_loss", result.epoch_loss}};
    if (!a.test.empty()) {
        const auto m = nanoformer::eval_metrics(result.params, hmm::load_dataset(a.test));
        summary["test"] = {{"accuracy", m.accuracy}, {"f1_micro", m.f1_micro}, {"f1_macro", m.f1_macro}};
    }
    std::cout << summary.dump() << '\n';
    return 0;
}

struct EmbedArgs {
    Common common;
    std::string checkpoint;
    std::string data;
    std::string model_id;
    std::string task_id;
};

int cmd_embed(const EmbedArgs& a) {
    const auto params = nanoformer::load_checkpoint(a.checkpoint);
    auto set = nanoformer::embed(params, hmm::load_dataset(a.data));
    set.model_id = a.model_id.empty() ? fs::path(a.checkpoint).stem().string() : a.model_id;
    set.task_id = a.task_id.empty() ? set.model_id : a.task_id;
    set.layer = 0;
    embstore::write_store(a.common.out, {set});
    return 0;
}

// --- is / deficiency ---------------------------------------------------------

struct IsArgs {
    Common common;
    std::string src;
    std::string dst;
    std::string layers = "all";
};

int cmd_is(const IsArgs& a) {
    const auto cfg = a.common.run_config();
    const auto src = embstore::read_store(a.src);
    const auto dst = embstore::read_store(a.dst);
    const auto ids = layer_ids(src);
    const auto window = analysis::parse_window(a.layers, ids);
    std::ostringstream lines;
    for (int layer : layers_in(window, ids)) {
        const auto& s = analysis::find_layer(src, layer);
        const auto& t = analysis::find_layer(dst, layer);
        const auto est = density::information_sufficiency(s, t, cfg.knife, cfg.seed);
        lines << density::to_json(est).dump() << '\n';
    }
    emit(a.common, lines.str());
    return 0;
}

struct DeficiencyArgs {
    Common common;
    std::string source;
    std::string target;
    int layer = 0;
    int bins = 16;
};

/// Kernel from label to quantized embedding cell for one layer of a store.
deficiency::FiniteKernel store_kernel(const fs::path& dir, int layer, int bins, std::uint64_t seed,
                                      std::vector<int>& labels_out) {
    const auto stack = embstore::read_store(dir);
    const auto& set = analysis::find_layer(stack, layer);
    if (set.labels.empty()) throw ValidationError(dir.string() + ": store has no labels");
    const auto q = deficiency::quantize(set.values, bins, seed);
    const int num_labels = *std::max_element(set.labels.begin(), set.labels.end()) + 1;
    labels_out = set.labels;
    return deficiency::empirical_kernel(set.labels, q.assignments, num_labels, bins);
}

int cmd_deficiency(const DeficiencyArgs& a) {
    const auto cfg = a.common.run_config();
    const bool source_dir = fs::is_directory(a.source), target_dir = fs::is_directory(a.target);
    if (source_dir != target_dir) throw ValidationError("--source and --target must both be kernels or both stores");
    std::optional<deficiency::FiniteKernel> source, target;
    if (source_dir) {
        std::vector<int> ls, lt;
        source = store_kernel(a.source, a.layer, a.bins, derive_seed(cfg.seed, 1), ls);
        target = store_kernel(a.target, a.layer, a.bins, derive_seed(cfg.seed, 1), lt);
        if (ls != lt) throw ValidationError("source and target stores carry different labels");
    } else {
        if (!fs::exists(a.source)) throw IoError("kernel file missing: " + a.source);
        if (!fs::exists(a.target)) throw IoError("kernel file missing: " + a.target);
        source = deficiency::kernel_from_json(read_json(a.source));
        target = deficiency::kernel_from_json(read_json(a.target));
    }
    const auto result = deficiency::deficiency(*source, *target);
    emit(a.common, deficiency::to_json(result).dump(2) + "\n");
    return 0;
}

// --- taskvec-dist ------------------------------------------------------------

struct TaskvecArgs {
    Common common;
    std::string first;
    std::string second;
};

int cmd_taskvec(const TaskvecArgs& a) {
    const auto x = taskvec::read_task_vector(a.first);
    const auto y = taskvec::read_task_vector(a.second);
    json rows = json::array();
    for (const auto& s : taskvec::compare(x, y)) {
        rows.push_back({{"projection", s.projection},
                        {"layers", s.layers},
                        {"cosine", s.cosine},
                        {"l2", s.l2},
                        {"grassmann", s.grassmann}});
    }
    emit(a.common, rows.dump(2) + "\n");
    return 0;
}

// --- pp-rank / layer-profile / report ----------------------------------------

analysis::IsMatrix load_matrix(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("matrix file missing: " + path.string());
    const auto doc = read_json(path);
    if (doc.is_object() && doc.contains("schema")) return analysis::load_report(path).matrix;
    return analysis::matrix_from_json(doc);
}

struct PpArgs {
    Common common;
    std::string matrix;
    std::string reference;
    double tie_threshold = analysis::kTieThreshold;
};

int cmd_pp_rank(const PpArgs& a) {
    const auto m = load_matrix(a.matrix);
    const auto pp = analysis::predictive_power(m);
    json out = {{"tasks", pp.tasks}, {"pp", pp.pp}, {"rank", pp.rank}};
    json inc = json::array();
    for (const auto& r : analysis::pairwise_inclusion(m, a.tie_threshold)) {
        inc.push_back({{"included", r.included},
                       {"container", r.container},
                       {"margin", r.margin},
                       {"incomparable", r.incomparable}});
    }
    out["inclusion"] = inc;
    if (!a.reference.empty()) {
        const auto ref = parse_numbers(a.reference);
        if (ref.size() != pp.pp.size()) throw ValidationError("--reference needs one value per task");
        out["kendall_tau"] = analysis::kendall_tau(pp.pp, ref);
    }
    emit(a.common, out.dump(2) + "\n");
    return 0;
}

struct ProfileArgs {
    Common common;
    std::string finetuned;
    std::string pretrained;
    int min_width = 1;
};

int cmd_layer_profile(const ProfileArgs& a) {
    const auto cfg = a.common.run_config();
    const auto ft = embstore::read_store(a.finetuned);
    const auto pt = embstore::read_store(a.pretrained);
    const auto profile = analysis::layer_profile(ft, pt, cfg.knife, cfg.seed);
    json rows = json::array();
    for (const auto& e : profile) {
        rows.push_back({{"layer", e.layer},
                        {"ft_to_pt", e.finetuned_to_pretrained},
                        {"pt_to_ft", e.pretrained_to_finetuned},
                        {"gap", e.gap()}});
    }
    const auto window = analysis::select_window(profile, a.min_width);
    emit(a.common, json{{"profile", rows}, {"window", window.str()}}.dump(2) + "\n");
    return 0;
}

/// Averages ledger rows over the layers of `window` into a task-by-task matrix.
analysis::IsMatrix matrix_from_ledger(const fs::path& path, const std::string& window_text) {
    if (!fs::exists(path)) throw IoError("ledger missing: " + path.string());
    struct Row {
        std::string src, dst;
        int layer;
        double is, h_marg;
    };
    std::vector<Row> rows;
    std::set<int> layers;
    std::istringstream in(read_text(path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            rows.push_back({j.at("src").get<std::string>(), j.at("dst").get<std::string>(), j.at("layer").get<int>(),
                            j.at("is").get<double>(), j.at("h_marg").get<double>()});
            layers.insert(rows.back().layer);
        } catch (const json::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (rows.empty()) throw ValidationError(path.string() + ": ledger is empty");
    const auto window = analysis::parse_window(window_text, {layers.begin(), layers.end()});
    std::vector<std::string> tasks;
    for (const auto& r : rows) {
        for (const auto* id : {&r.src, &r.dst}) {
            if (std::find(tasks.begin(), tasks.end(), *id) == tasks.end()) tasks.push_back(*id);
        }
    }
    const auto n = static_cast<Eigen::Index>(tasks.size());
    const auto index = [&](const std::string& id) {
        return static_cast<Eigen::Index>(std::find(tasks.begin(), tasks.end(), id) - tasks.begin());
    };
    Matrix sum = Matrix::Zero(n, n), count = Matrix::Zero(n, n);
    Vector h_sum = Vector::Zero(n), h_count = Vector::Zero(n);
    for (const auto& r : rows) {
        if (r.layer < window.first || r.layer > window.last) continue;
        const auto i = index(r.src), j = index(r.dst);
        sum(i, j) += r.is;
        count(i, j) += 1.0;
        h_sum(j) += r.h_marg;
        h_count(j) += 1.0;
    }
    analysis::IsMatrix m;
    m.tasks = tasks;
    m.window = window;
    m.values.resize(n, n);
    m.marginal_entropy.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (count(i, j) == 0.0) {
                throw ValidationError("ledger has no estimate for " + tasks[static_cast<std::size_t>(i)] + " -> " +
                                      tasks[static_cast<std::size_t>(j)] + " in window " + window.str());
            }
            m.values(i, j) = sum(i, j) / count(i, j);
        }
        m.marginal_entropy(i) = h_sum(i) / h_count(i);
    }
    return m;
}

struct ReportArgs {
    Common common;
    std::string ledger;
    std::vector<std::string> matrices;
    std::string window = "all";
};

int cmd_report(const ReportArgs& a) {
    if (a.ledger.empty() == a.matrices.empty()) throw ValidationError("give exactly one of --ledger or --matrix");
    analysis::Report rep;
    if (!a.ledger.empty()) {
        rep.matrix = matrix_from_ledger(a.ledger, a.window);
        rep.metadata["ledger"] = fs::path(a.ledger).filename().string();
    } else {
        std::vector<analysis::IsMatrix> ms;
        for (const auto& p : a.matrices) ms.push_back(load_matrix(p));
        rep.matrix = analysis::mean_matrix(ms);
        rep.metadata["matrices"] = a.matrices.size();
    }
    rep.metadata["window"] = rep.matrix.window.str();
    if (!a.common.config.empty()) rep.metadata["config"] = experiment::to_json(a.common.run_config());
    const auto pp = analysis::predictive_power(rep.matrix);
    rep.tables["predictive_power"] = {{"tasks", pp.tasks}, {"pp", pp.pp}, {"rank", pp.rank}};
    analysis::emit_report(rep, a.common.out);
    return 0;
}

// --- validate ----------------------------------------------------------------

/// Per-file checks of a task-vector directory, mirroring the embstore report.
embstore::ValidationReport validate_task_vector(const fs::path& dir, const json& doc) {
    embstore::ValidationReport report;
    json blocks;
    try {
        if (doc.value("dtype", "") != "f32-le") throw ValidationError("dtype must be f32-le");
        blocks = doc.at("blocks");
        if (!blocks.is_array()) throw ValidationError("'blocks' must be an array");
        report.manifest_ok = true;
    } catch (const std::exception& e) {
        report.manifest_message = e.what();
        return report;
    }
    for (const auto& entry : blocks) {
        embstore::FileCheck fc;
        fc.file = entry.value("file", "");
        try {
            const auto path = dir / fc.file;
            if (!fs::exists(path)) throw IoError("file missing");
            const auto b = taskvec::read_block(path);
            if (b.b.rows() != entry.at("m").get<long>() || b.b.cols() != entry.at("r").get<long>() ||
                b.a.cols() != entry.at("n").get<long>()) {
                throw ValidationError("header shape disagrees with the manifest");
            }
            fc.ok = true;
        } catch (const std::exception& e) {
            fc.message = e.what();
        }
        report.files.push_back(std::move(fc));
    }
    return report;
}

struct ValidateArgs {
    Common common;
    std::string dir;
};

int cmd_validate(const ValidateArgs& a) {
    const fs::path dir(a.dir);
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    embstore::ValidationReport report;
    std::string kind = "embstore";
    const auto manifest = dir / "manifest.json";
    std::optional<json> doc;
    if (fs::exists(manifest)) {
        try {
            doc = json::parse(read_text(manifest));
        } catch (const json::parse_error&) {
        }
    }
    if (doc && doc->is_object() && doc->value("schema", "") == taskvec::kManifestSchema) {
        kind = "taskvec";
        report = validate_task_vector(dir, *doc);
    } else {
        report = embstore::validate_manifest(dir);
    }
    auto out = embstore::to_json(report);
    out["kind"] = kind;
    emit(a.common, out.dump(2) + "\n");
    return report.ok() ? 0 : kExitValidation;
}

// --- run -----------------------------------------------------------------------

struct RunArgs {
    Common common;
    bool quiet = false;
};

int cmd_run(const RunArgs& a) {
    const auto cfg = a.common.run_config();
    const auto result = experiment::run_synthetic_experiment(cfg, a.common.out, a.quiet ? nullptr : &std::cerr);
    json ds = json::array();
    for (const auto& d : result.datasets) {
        const auto p = experiment::check_pattern(d.matrix);
        ds.push_back({{"dataset", d.index},
                      {"accuracy", {d.metrics[0].accuracy, d.metrics[1].accuracy, d.metrics[2].accuracy}},
                      {"pattern", p.all()}});
    }
    std::cout << json{{"out", a.common.out}, {"report_hash", result.report_hash}, {"datasets", ds}}.dump() << '\n';
    return 0;
}

int exit_code_for_kind(const std::string& kind) {
    if (kind == "validation") return kExitValidation;
    if (kind == "io") return kExitIo;
    return kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"taskgraph: task inclusion via information sufficiency and deficiency"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    std::function<int()> action;

    HmmGenArgs hmm_gen;
    auto* c = app.add_subcommand("hmm-gen", "Generate an HMM family and optional task datasets");
    hmm_gen.common.attach(c, true, "Output directory");
    c->add_option("--family-size", hmm_gen.family_size, "Number of HMMs (default from config)");
    c->add_option("--examples", hmm_gen.examples, "Labeled examples per task and HMM (0 writes specs only)");
    c->callback([&] { action = [&] { return cmd_hmm_gen(hmm_gen); }; });

    PretrainArgs pre;
    c = app.add_subcommand("pretrain", "Pretrain a nanoformer on sequences sampled from an HMM");
    pre.common.attach(c, true, "Output checkpoint (.nfm)");
    c->add_option("--hmm", pre.hmm, "HMM spec JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--corpus-size", pre.corpus_size, "Number of training sequences (default from config)");
    c->callback([&] { action = [&] { return cmd_pretrain(pre); }; });

    FinetuneArgs ft;
    c = app.add_subcommand("finetune", "Fine-tune a checkpoint on a labeled dataset");
    ft.common.attach(c, true, "Output checkpoint (.nfm)");
    c->add_option("--checkpoint", ft.checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
    c->add_option("--data", ft.data, "Training dataset (JSON lines)")->required()->check(CLI::ExistingFile);
    c->add_option("--task", ft.task, "Task: F, L or FvL")->required();
    c->add_option("--test", ft.test, "Optional test dataset for metrics")->check(CLI::ExistingFile);
    c->callback([&] { action = [&] { return cmd_finetune(ft); }; });

    EmbedArgs emb;
    c = app.add_subcommand("embed", "Write attention-sublayer embeddings of a dataset as an embedding store");
    emb.common.attach(c, true, "Output store directory");
    c->add_option("--checkpoint", emb.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    c->add_option("--data", emb.data, "Dataset (JSON lines)")->required()->check(CLI::ExistingFile);
    c->add_option("--model-id", emb.model_id, "Model id recorded in the manifest (default: checkpoint stem)");
    c->add_option("--task-id", emb.task_id, "Task id recorded in the manifest (default: model id)");
    c->callback([&] { action = [&] { return cmd_embed(emb); }; });

    IsArgs is;
    c = app.add_subcommand("is", "Information sufficiency between two embedding stores, one JSON line per layer");
    is.common.attach(c, false, "Output ledger file (default: stdout)");
    c->add_option("--src", is.src, "Source store directory")->required();
    c->add_option("--dst", is.dst, "Target store directory")->required();
    c->add_option("--layers", is.layers, "Layer window: 'all', 'L' or 'A-B'");
    c->callback([&] { action = [&] { return cmd_is(is); }; });

    DeficiencyArgs def;
    c = app.add_subcommand("deficiency", "Exact deficiency between finite kernels or quantized embedding stores");
    def.common.attach(c, false, "Output JSON file (default: stdout)");
    c->add_option("--source", def.source, "Kernel JSON or store directory")->required();
    c->add_option("--target", def.target, "Kernel JSON or store directory")->required();
    c->add_option("--layer", def.layer, "Store layer to quantize");
    c->add_option("--bins", def.bins, "k-means cells per store");
    c->callback([&] { action = [&] { return cmd_deficiency(def); }; });

    TaskvecArgs tv;
    c = app.add_subcommand("taskvec-dist", "Cosine, Euclidean and Grassmann distances between task vectors");
    tv.common.attach(c, false, "Output JSON file (default: stdout)");
    c->add_option("--first", tv.first, "First task-vector directory")->required();
    c->add_option("--second", tv.second, "Second task-vector directory")->required();
    c->callback([&] { action = [&] { return cmd_taskvec(tv); }; });

    PpArgs pp;
    c = app.add_subcommand("pp-rank", "Predictive-power ranking and pairwise inclusion from an IS matrix");
    pp.common.attach(c, false, "Output JSON file (default: stdout)");
    c->add_option("--matrix", pp.matrix, "IS matrix JSON or report.json")->required();
    c->add_option("--reference", pp.reference, "Comma-separated reference scores for Kendall tau");
    c->add_option("--tie-threshold", pp.tie_threshold, "Margin below which a pair is incomparable");
    c->callback([&] { action = [&] { return cmd_pp_rank(pp); }; });

    ProfileArgs prof;
    c = app.add_subcommand("layer-profile", "Per-layer IS between fine-tuned and pretrained stores");
    prof.common.attach(c, false, "Output JSON file (default: stdout)");
    c->add_option("--finetuned", prof.finetuned, "Fine-tuned store directory")->required();
    c->add_option("--pretrained", prof.pretrained, "Pretrained store directory")->required();
    c->add_option("--min-width", prof.min_width, "Minimum width of the selected window");
    c->callback([&] { action = [&] { return cmd_layer_profile(prof); }; });

    ReportArgs rep;
    c = app.add_subcommand("report", "Build an IS matrix report from a ledger or from matrices");
    rep.common.attach(c, true, "Output report directory");
    c->add_option("--ledger", rep.ledger, "IS ledger (JSON lines)");
    c->add_option("--matrix", rep.matrices, "IS matrix JSON or report.json files to average");
    c->add_option("--window", rep.window, "Layer window for ledger rows");
    c->callback([&] { action = [&] { return cmd_report(rep); }; });

    ValidateArgs val;
    c = app.add_subcommand("validate", "Check an embedding store or task-vector directory file by file");
    val.common.attach(c, false, "Output JSON file (default: stdout)");
    c->add_option("dir", val.dir, "Store directory")->required();
    c->callback([&] { action = [&] { return cmd_validate(val); }; });

    RunArgs run;
    c = app.add_subcommand("run", "Run the full synthetic reproduction pipeline");
    run.common.attach(c, true, "Output run directory");
    c->add_flag("--quiet", run.quiet, "Suppress progress lines");
    c->callback([&] { action = [&] { return cmd_run(run); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        return action();
    } catch (const experiment::StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for_kind(e.kind());
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
