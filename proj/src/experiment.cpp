#include "taskgraph/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <ostream>

#include "taskgraph/error.hpp"
#include "taskgraph/json_util.hpp"
#include "taskgraph/parallel.hpp"

namespace taskgraph::experiment {
namespace {

namespace fs = std::filesystem;

template <class Fn>
auto run_stage(const std::string& name, const std::string& context, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const ValidationError& e) {
        throw StageError(name, "validation", context + e.what());
    } catch (const IoError& e) {
        throw StageError(name, "io", context + e.what());
    } catch (const std::exception& e) {
        throw StageError(name, "runtime", context + e.what());
    }
}

class Logger {
public:
    explicit Logger(std::ostream* out) : out_(out) {}
    void line(const std::string& s) {
        if (!out_) return;
        std::lock_guard lock(mu_);
        *out_ << s << '\n';
        out_->flush();
    }

private:
    std::ostream* out_;
    std::mutex mu_;
};

std::string dataset_dir_name(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ds-%02d", index);
    return buf;
}

nlohmann::json metrics_json(const nanoformer::Metrics& m) {
    return {{"accuracy", m.accuracy}, {"f1_micro", m.f1_micro}, {"f1_macro", m.f1_macro}};
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

DatasetResult run_dataset(const RunConfig& cfg, const hmm::HmmSpec& spec, int index, const fs::path& dir,
                          std::vector<density::IsEstimate>& ledger, Logger& log) {
    const std::uint64_t ds_seed = derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(index));
    const std::string ctx = "dataset " + std::to_string(index) + ": ";
    const std::string tag = "[" + dataset_dir_name(index) + "] ";
    DatasetResult result;
    result.index = index;

    nanoformer::ModelConfig mc = cfg.model;
    mc.symbol_count = cfg.vocab_size;

    struct Data {
        std::vector<hmm::Sequence> corpus, likelihood;
        std::array<std::vector<hmm::LabeledExample>, 3> train, test;
        std::vector<hmm::LabeledExample> probe;
    };
    const Data data = run_stage("generate", ctx, [&] {
        Data d;
        d.corpus = hmm::sample_corpus(spec, cfg.corpus_size, cfg.max_len, derive_seed(ds_seed, 1), cfg.min_len);
        d.likelihood =
            hmm::sample_corpus(spec, cfg.likelihood_sequences, cfg.max_len, derive_seed(ds_seed, 2), cfg.min_len);
        for (std::size_t t = 0; t < kTasks.size(); ++t) {
            d.train[t] = hmm::make_task_dataset(spec, kTasks[t], cfg.train_examples, derive_seed(ds_seed, 10 + t),
                                                cfg.max_len, cfg.min_len);
            d.test[t] = hmm::make_task_dataset(spec, kTasks[t], cfg.test_examples, derive_seed(ds_seed, 20 + t),
                                               cfg.max_len, cfg.min_len);
        }
        // One shared probe set keeps every task's embeddings row-aligned on the same inputs.
        d.probe = hmm::make_task_dataset(spec, hmm::TaskKind::FirstOrLast, cfg.probe_examples,
                                         derive_seed(ds_seed, 30), cfg.max_len, cfg.min_len);
        ensure_directory(dir);
        hmm::save_spec(spec, dir / "hmm.json");
        return d;
    });

    nanoformer::TrainConfig ptc = cfg.pretrain;
    ptc.seed = derive_seed(ds_seed, 40);
    log.line(tag + "pretraining");
    const auto base = run_stage("pretrain", ctx, [&] { return nanoformer::pretrain(data.corpus, mc, ptc); });
    result.pretrain_loss = base.epoch_loss;

    run_stage("likelihood", ctx, [&] {
        std::vector<double> forward;
        forward.reserve(data.likelihood.size());
        for (const auto& s : data.likelihood) forward.push_back(hmm::forward_log_likelihood(spec, s));
        const auto untrained = nanoformer::init_params(mc, ptc.seed);
        result.likelihood_corr_trained =
            pearson(forward, nanoformer::sequence_log_likelihood(base.params, data.likelihood));
        result.likelihood_corr_untrained =
            pearson(forward, nanoformer::sequence_log_likelihood(untrained, data.likelihood));
    });

    std::vector<analysis::LayerStack> stacks;
    for (std::size_t t = 0; t < kTasks.size(); ++t) {
        const std::string name(hmm::task_name(kTasks[t]));
        log.line(tag + "fine-tuning " + name);
        nanoformer::TrainConfig ftc = cfg.finetune;
        ftc.seed = derive_seed(ds_seed, 50 + t);
        const auto tuned = run_stage("finetune", ctx, [&] {
            return nanoformer::finetune(base.params, data.train[t], kTasks[t], ftc);
        });
        result.metrics[t] = run_stage("evaluate", ctx, [&] { return nanoformer::eval_metrics(tuned.params, data.test[t]); });
        EmbeddingSet emb = run_stage("embed", ctx, [&] {
            auto e = nanoformer::embed(tuned.params, hmm::relabel(data.probe, kTasks[t]));
            e.model_id = dataset_dir_name(index) + "/" + name;
            e.task_id = name;
            e.layer = 0;
            return e;
        });
        stacks.push_back({std::move(emb)});
        if (cfg.save_checkpoints) {
            run_stage("save", ctx, [&] {
                ensure_directory(dir / "models");
                nanoformer::save_checkpoint(tuned.params, dir / "models" / (name + ".nfm"));
            });
        }
    }
    if (cfg.save_checkpoints) {
        run_stage("save", ctx, [&] {
            nanoformer::save_checkpoint(base.params, dir / "models" / "pretrained.nfm");
        });
    }

    log.line(tag + "estimating information sufficiency");
    result.matrix = run_stage("information-sufficiency", ctx, [&] {
        const auto window = analysis::parse_window(cfg.window, {0});
        return analysis::build_is_matrix(stacks, window, cfg.knife, derive_seed(ds_seed, 60), &ledger);
    });

    run_stage("report", ctx, [&] {
        analysis::Report rep;
        rep.matrix = result.matrix;
        rep.metadata = {{"dataset", index}, {"seed", ds_seed}, {"window", result.matrix.window.str()},
                        {"config", to_json(cfg)}};
        nlohmann::json acc = nlohmann::json::object();
        for (std::size_t t = 0; t < kTasks.size(); ++t) acc[std::string(hmm::task_name(kTasks[t]))] = metrics_json(result.metrics[t]);
        rep.tables["metrics"] = acc;
        rep.tables["likelihood_correlation"] = {{"trained", result.likelihood_corr_trained},
                                                {"untrained", result.likelihood_corr_untrained}};
        rep.tables["pretrain_loss"] = result.pretrain_loss;
        analysis::emit_report(rep, dir);
    });
    const auto& m = result.matrix;
    log.line(tag + "done: acc F " + format_fixed(result.metrics[0].accuracy, 3) + " L " +
             format_fixed(result.metrics[1].accuracy, 3) + " FvL " + format_fixed(result.metrics[2].accuracy, 3) +
             ", h " + format_fixed(m.marginal_entropy(0), 3) + "/" + format_fixed(m.marginal_entropy(1), 3) + "/" +
             format_fixed(m.marginal_entropy(2), 3));
    return result;
}

}  // namespace

void RunConfig::validate() const {
    if (family_size < 1) throw ValidationError("family_size must be >= 1");
    if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
    if (num_states < 1) throw ValidationError("num_states must be >= 1");
    if (!(stay_probability >= 0.0 && stay_probability <= 1.0)) throw ValidationError("stay_probability must be in [0, 1]");
    if (max_len < 1 || max_len > hmm::kMaxSequenceLength) throw ValidationError("max_len must be in [1, 30]");
    if (min_len < 1 || min_len > max_len) throw ValidationError("min_len must be in [1, max_len]");
    if (corpus_size < 1 || train_examples < 1 || test_examples < 1) throw ValidationError("dataset sizes must be >= 1");
    if (probe_examples < 2) throw ValidationError("probe_examples must be >= 2");
    if (likelihood_sequences < 2) throw ValidationError("likelihood_sequences must be >= 2");
    if (max_len + 4 > model.max_input_len) throw ValidationError("model.max_input_len too small for max_len + 4 tokens");
    model.validate();
    pretrain.validate();
    finetune.validate();
    knife.validate();
    analysis::parse_window(window, {0});
}

nlohmann::json to_json(const RunConfig& c) {
    auto model = nanoformer::to_json(c.model);
    model.erase("symbol_count");
    auto pre = nanoformer::to_json(c.pretrain);
    pre.erase("seed");
    auto fine = nanoformer::to_json(c.finetune);
    fine.erase("seed");
    return {{"seed", c.seed},
            {"family_size", c.family_size},
            {"vocab_size", c.vocab_size},
            {"num_states", c.num_states},
            {"stay_probability", c.stay_probability},
            {"min_len", c.min_len},
            {"max_len", c.max_len},
            {"corpus_size", c.corpus_size},
            {"train_examples", c.train_examples},
            {"test_examples", c.test_examples},
            {"probe_examples", c.probe_examples},
            {"likelihood_sequences", c.likelihood_sequences},
            {"model", model},
            {"pretrain", pre},
            {"finetune", fine},
            {"knife", density::to_json(c.knife)},
            {"window", c.window},
            {"save_checkpoints", c.save_checkpoints}};
}

RunConfig run_config_from_json(const nlohmann::json& doc) {
    RunConfig c;
    ObjectReader r(doc, "run config");
    r.optional("seed", c.seed);
    r.optional("family_size", c.family_size);
    r.optional("vocab_size", c.vocab_size);
    r.optional("num_states", c.num_states);
    r.optional("stay_probability", c.stay_probability);
    r.optional("min_len", c.min_len);
    r.optional("max_len", c.max_len);
    r.optional("corpus_size", c.corpus_size);
    r.optional("train_examples", c.train_examples);
    r.optional("test_examples", c.test_examples);
    r.optional("probe_examples", c.probe_examples);
    r.optional("likelihood_sequences", c.likelihood_sequences);
    r.optional("window", c.window);
    r.optional("save_checkpoints", c.save_checkpoints);
    if (r.has("model")) {
        const auto& m = r.child("model");
        if (m.is_object() && m.contains("symbol_count")) {
            throw ValidationError("model: symbol_count is derived from vocab_size; set vocab_size instead");
        }
        c.model = nanoformer::model_config_from_json(m, c.model);
    }
    for (auto [key, target] : {std::pair{"pretrain", &c.pretrain}, std::pair{"finetune", &c.finetune}}) {
        if (!r.has(key)) continue;
        const auto& t = r.child(key);
        if (t.is_object() && t.contains("seed")) {
            throw ValidationError(std::string(key) + ": seed is derived from the run seed");
        }
        *target = nanoformer::train_config_from_json(t, *target);
    }
    if (r.has("knife")) c.knife = density::knife_from_json(r.child("knife"));
    r.finish();
    c.model.symbol_count = c.vocab_size;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return run_config_from_json(doc);
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw ValidationError("pearson: need two equal-length series");
    const double mx = mean_of(xs), my = mean_of(ys);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: constant series");
    return sxy / std::sqrt(sxx * syy);
}

PatternCheck check_pattern(const analysis::IsMatrix& m) {
    if (m.values.rows() != 3 || m.values.cols() != 3) throw ValidationError("check_pattern expects a 3x3 matrix");
    // kTasks order: 0 = F, 1 = L, 2 = FvL.
    PatternCheck c;
    c.diagonal_max = true;
    for (Eigen::Index i = 0; i < 3; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) {
            if (j != i && m.values(i, j) > m.values(i, i)) c.diagonal_max = false;
        }
    }
    c.f_to_l = m.values(0, 1) <= m.values(2, 1);
    c.l_to_f = m.values(1, 0) <= m.values(2, 0);
    return c;
}

std::string hash_reports(const std::filesystem::path& out_dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), out_dir).generic_string();
        if (rel == "run-manifest.json" || rel == "FAILED") continue;
        files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    std::uint64_t h = fnv1a("");
    for (const auto& rel : files) {
        h = fnv1a(rel, h);
        h = fnv1a(std::string_view("\0", 1), h);
        h = fnv1a(read_text(out_dir / rel), h);
    }
    return hex64(h);
}

RunResult run_synthetic_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log) {
    Logger logger(log);
    try {
        run_stage("setup", "", [&] {
            cfg.validate();
            ensure_directory(out_dir);
            fs::remove(out_dir / "FAILED");
            fs::remove(out_dir / "is_ledger.jsonl");
            write_text(out_dir / "config.json", to_json(cfg).dump(2) + "\n");
        });

        const auto family = run_stage("generate", "", [&] {
            const auto base = hmm::default_automaton(cfg.vocab_size, derive_seed(cfg.seed, 1), cfg.num_states,
                                                     cfg.stay_probability);
            return hmm::gen_dataset_family(base, cfg.family_size, derive_seed(cfg.seed, 2));
        });

        RunResult result;
        result.out_dir = out_dir;
        result.datasets.resize(family.size());
        std::vector<std::vector<density::IsEstimate>> ledgers(family.size());
        parallel_for(family.size(), [&](std::size_t i) {
            const int index = static_cast<int>(i);
            result.datasets[i] = run_dataset(cfg, family[i], index, out_dir / "datasets" / dataset_dir_name(index),
                                             ledgers[i], logger);
        });

        run_stage("report", "", [&] {
            for (const auto& rows : ledgers) density::append_ledger(out_dir / "is_ledger.jsonl", rows);
            std::vector<analysis::IsMatrix> mats;
            for (const auto& d : result.datasets) mats.push_back(d.matrix);
            result.mean = analysis::mean_matrix(mats);

            analysis::Report rep;
            rep.matrix = result.mean;
            rep.metadata = {{"seed", cfg.seed}, {"datasets", cfg.family_size}, {"window", result.mean.window.str()},
                            {"config", to_json(cfg)}};
            nlohmann::json acc = nlohmann::json::object(), ent = nlohmann::json::object();
            for (std::size_t t = 0; t < kTasks.size(); ++t) {
                std::vector<double> a, f1mi, f1ma, h;
                for (const auto& d : result.datasets) {
                    a.push_back(d.metrics[t].accuracy);
                    f1mi.push_back(d.metrics[t].f1_micro);
                    f1ma.push_back(d.metrics[t].f1_macro);
                    h.push_back(d.matrix.marginal_entropy(static_cast<Eigen::Index>(t)));
                }
                const std::string name(hmm::task_name(kTasks[t]));
                acc[name] = {{"accuracy_mean", mean_of(a)}, {"accuracy_std", std_of(a)},
                             {"f1_micro_mean", mean_of(f1mi)}, {"f1_macro_mean", mean_of(f1ma)},
                             {"accuracy", a}};
                ent[name] = {{"mean", mean_of(h)}, {"per_dataset", h}};
            }
            nlohmann::json lik = nlohmann::json::array(), pattern = nlohmann::json::array();
            for (const auto& d : result.datasets) {
                lik.push_back({{"trained", d.likelihood_corr_trained}, {"untrained", d.likelihood_corr_untrained}});
                const auto pc = check_pattern(d.matrix);
                pattern.push_back({{"diagonal_max", pc.diagonal_max}, {"f_to_l", pc.f_to_l}, {"l_to_f", pc.l_to_f}});
            }
            rep.tables["metrics"] = acc;
            rep.tables["entropy"] = ent;
            rep.tables["likelihood_correlation"] = lik;
            rep.tables["inclusion_pattern"] = pattern;
            analysis::emit_report(rep, out_dir / "summary");

            result.report_hash = hash_reports(out_dir);
            const nlohmann::json manifest = {{"schema", "taskgraph-run/1"},
                                             {"version", std::string(kVersion)},
                                             {"config_hash", analysis::config_hash(rep.metadata)},
                                             {"seed", cfg.seed},
                                             {"datasets", cfg.family_size},
                                             {"report_hash", result.report_hash}};
            write_text(out_dir / "run-manifest.json", manifest.dump(2) + "\n");
        });
        logger.line("run complete: report hash " + result.report_hash);
        return result;
    } catch (const StageError& e) {
        try {
            ensure_directory(out_dir);
            const nlohmann::json marker = {{"stage", e.stage()}, {"kind", e.kind()}, {"error", e.what()}};
            write_text(out_dir / "FAILED", marker.dump(2) + "\n");
        } catch (const std::exception&) {
            // The original failure is more useful than a marker write error.
        }
        throw;
    }
}

}  // namespace taskgraph::experiment
