#include "taskgraph/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "taskgraph/error.hpp"
#include "taskgraph/parallel.hpp"

namespace taskgraph::analysis {
namespace {

constexpr const char* kReportSchema = "taskgraph-report/1";

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void check_complete(const IsMatrix& m) {
    const auto t = static_cast<Eigen::Index>(m.tasks.size());
    if (m.values.rows() != t || m.values.cols() != t) throw ValidationError("IS matrix is not square over its tasks");
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = 0; j < t; ++j)
            if (std::isnan(m.values(i, j))) throw ValidationError("IS matrix contains NaN entries");
}

}  // namespace

std::string LayerWindow::str() const {
    return first == last ? std::to_string(first) : std::to_string(first) + "-" + std::to_string(last);
}

LayerWindow parse_window(const std::string& text, const std::vector<int>& available) {
    if (text == "all") {
        if (available.empty()) throw ValidationError("window 'all' needs the list of available layers");
        const auto [lo, hi] = std::minmax_element(available.begin(), available.end());
        return {*lo, *hi};
    }
    LayerWindow w;
    const auto dash = text.find('-', 1);
    try {
        std::size_t used = 0;
        if (dash == std::string::npos) {
            w.first = w.last = std::stoi(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
        } else {
            const std::string a = text.substr(0, dash), b = text.substr(dash + 1);
            w.first = std::stoi(a, &used);
            if (used != a.size()) throw std::invalid_argument(text);
            w.last = std::stoi(b, &used);
            if (used != b.size()) throw std::invalid_argument(text);
        }
    } catch (const std::logic_error&) {
        throw ValidationError("invalid layer window '" + text + "' (expected N, A-B or all)");
    }
    if (w.first < 0 || w.last < w.first) throw ValidationError("invalid layer window '" + text + "'");
    return w;
}

const EmbeddingSet& find_layer(const LayerStack& stack, int layer) {
    for (const auto& e : stack) {
        if (e.layer == layer) return e;
    }
    const std::string task = stack.empty() ? std::string("?") : stack.front().task_id;
    throw ValidationError("task '" + task + "' has no embeddings for layer " + std::to_string(layer));
}

IsMatrix build_is_matrix(const std::vector<LayerStack>& tasks, LayerWindow window, const density::KnifeConfig& cfg,
                         std::uint64_t seed, std::vector<density::IsEstimate>* ledger) {
    if (tasks.empty()) throw ValidationError("build_is_matrix: no tasks");
    cfg.validate();
    const std::size_t T = tasks.size();
    const int W = window.width();
    std::vector<const EmbeddingSet*> sets(T * static_cast<std::size_t>(W));
    auto at = [&](std::size_t t, int l) -> const EmbeddingSet*& { return sets[t * static_cast<std::size_t>(W) + static_cast<std::size_t>(l)]; };
    for (std::size_t t = 0; t < T; ++t) {
        for (int l = 0; l < W; ++l) at(t, l) = &find_layer(tasks[t], window.first + l);
    }
    for (int l = 0; l < W; ++l) {
        for (std::size_t t = 1; t < T; ++t) {
            if (at(t, l)->rows() != at(0, l)->rows()) {
                throw ValidationError("tasks '" + at(0, l)->task_id + "' and '" + at(t, l)->task_id +
                                      "' are not row-aligned at layer " + std::to_string(window.first + l));
            }
        }
    }

    // Marginal entropies do not depend on the source: one fit per (task, layer).
    std::vector<double> marg(T * static_cast<std::size_t>(W));
    parallel_for(marg.size(), [&](std::size_t job) {
        const std::size_t t = job / static_cast<std::size_t>(W);
        const int l = static_cast<int>(job % static_cast<std::size_t>(W));
        marg[job] = density::heldout_marginal_entropy(at(t, l)->values, cfg, seed);
    });
    std::vector<double> cond(T * T * static_cast<std::size_t>(W));
    parallel_for(cond.size(), [&](std::size_t job) {
        const std::size_t l = job % static_cast<std::size_t>(W);
        const std::size_t j = (job / static_cast<std::size_t>(W)) % T;
        const std::size_t i = job / (static_cast<std::size_t>(W) * T);
        cond[job] = density::heldout_conditional_entropy(at(i, static_cast<int>(l))->values,
                                                         at(j, static_cast<int>(l))->values, cfg, seed);
    });

    IsMatrix m;
    m.window = window;
    for (std::size_t t = 0; t < T; ++t) m.tasks.push_back(at(t, 0)->task_id);
    const auto n = static_cast<Eigen::Index>(T);
    m.values = Matrix::Zero(n, n);
    m.marginal_entropy = Vector::Zero(n);
    for (std::size_t i = 0; i < T; ++i) {
        for (int l = 0; l < W; ++l) m.marginal_entropy(static_cast<Eigen::Index>(i)) += marg[i * static_cast<std::size_t>(W) + static_cast<std::size_t>(l)];
        m.marginal_entropy(static_cast<Eigen::Index>(i)) /= W;
        for (std::size_t j = 0; j < T; ++j) {
            double total = 0.0;
            for (int l = 0; l < W; ++l) {
                auto est = density::make_estimate(marg[j * static_cast<std::size_t>(W) + static_cast<std::size_t>(l)],
                                                  cond[(i * T + j) * static_cast<std::size_t>(W) + static_cast<std::size_t>(l)]);
                total += est.value;
                if (ledger) {
                    est.source_id = m.tasks[i];
                    est.target_id = m.tasks[j];
                    est.layer = window.first + l;
                    est.seed = seed;
                    ledger->push_back(est);
                }
            }
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = total / W;
        }
    }
    return m;
}

IsMatrix mean_matrix(const std::vector<IsMatrix>& matrices) {
    if (matrices.empty()) throw ValidationError("mean_matrix: no matrices");
    IsMatrix out = matrices.front();
    for (std::size_t k = 1; k < matrices.size(); ++k) {
        if (matrices[k].tasks != out.tasks) throw ValidationError("mean_matrix: task lists differ");
        out.values += matrices[k].values;
        out.marginal_entropy += matrices[k].marginal_entropy;
    }
    out.values /= static_cast<double>(matrices.size());
    out.marginal_entropy /= static_cast<double>(matrices.size());
    return out;
}

PpRanking predictive_power(const IsMatrix& m) {
    check_complete(m);
    const std::size_t T = m.tasks.size();
    PpRanking r;
    r.tasks = m.tasks;
    r.pp.assign(T, 0.0);
    for (std::size_t u = 0; u < T; ++u) {
        for (std::size_t v = 0; v < T; ++v) {
            if (u == v) continue;
            r.pp[u] += m.values(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) -
                       m.values(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u));
        }
    }
    std::vector<std::size_t> order(T);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (r.pp[a] != r.pp[b]) return r.pp[a] < r.pp[b];
        return r.tasks[a] < r.tasks[b];
    });
    r.rank.assign(T, 0);
    for (std::size_t k = 0; k < T; ++k) r.rank[order[k]] = static_cast<int>(k);
    return r;
}

double kendall_tau(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ValidationError("kendall_tau: length mismatch");
    if (xs.size() < 2) throw ValidationError("kendall_tau: need at least 2 observations");
    long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0, pairs = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            ++pairs;
            const double dx = xs[i] - xs[j];
            const double dy = ys[i] - ys[j];
            if (dx == 0) ++ties_x;
            if (dy == 0) ++ties_y;
            if (dx == 0 || dy == 0) continue;
            ((dx > 0) == (dy > 0) ? concordant : discordant)++;
        }
    }
    if (ties_x == pairs || ties_y == pairs) throw ValidationError("kendall_tau: undefined for constant input");
    const double denom = std::sqrt(static_cast<double>(pairs - ties_x) * static_cast<double>(pairs - ties_y));
    return static_cast<double>(concordant - discordant) / denom;
}

std::vector<Inclusion> pairwise_inclusion(const IsMatrix& m, double tie_threshold) {
    check_complete(m);
    std::vector<Inclusion> out;
    const std::size_t T = m.tasks.size();
    for (std::size_t a = 0; a < T; ++a) {
        for (std::size_t b = a + 1; b < T; ++b) {
            const double ab = m.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
            const double ba = m.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a));
            Inclusion inc;
            if (std::abs(ab - ba) < tie_threshold) {
                inc.included = m.tasks[b];
                inc.container = m.tasks[a];
                inc.margin = std::abs(ab - ba);
                inc.incomparable = true;
            } else if (ab > ba) {
                inc.included = m.tasks[b];
                inc.container = m.tasks[a];
                inc.margin = ab - ba;
            } else {
                inc.included = m.tasks[a];
                inc.container = m.tasks[b];
                inc.margin = ba - ab;
            }
            out.push_back(inc);
        }
    }
    return out;
}

std::vector<ProfileEntry> layer_profile(const LayerStack& finetuned, const LayerStack& pretrained,
                                        const density::KnifeConfig& cfg, std::uint64_t seed) {
    if (finetuned.size() != pretrained.size()) {
        throw ValidationError("layer_profile: models expose " + std::to_string(finetuned.size()) + " and " +
                              std::to_string(pretrained.size()) + " layers");
    }
    std::vector<ProfileEntry> out(finetuned.size());
    parallel_for(out.size(), [&](std::size_t k) {
        const EmbeddingSet& ft = finetuned[k];
        const EmbeddingSet& pt = find_layer(pretrained, ft.layer);
        out[k].layer = ft.layer;
        out[k].finetuned_to_pretrained = density::information_sufficiency(ft, pt, cfg, seed).value;
        out[k].pretrained_to_finetuned = density::information_sufficiency(pt, ft, cfg, seed).value;
    });
    std::sort(out.begin(), out.end(), [](const ProfileEntry& a, const ProfileEntry& b) { return a.layer < b.layer; });
    return out;
}

LayerWindow select_window(const std::vector<ProfileEntry>& profile, int min_width) {
    if (min_width < 1) throw ValidationError("select_window: min_width must be >= 1");
    const auto n = static_cast<int>(profile.size());
    if (n < min_width) throw ValidationError("select_window: profile shorter than min_width");
    double best = -std::numeric_limits<double>::infinity();
    LayerWindow win{profile.front().layer, profile.front().layer};
    for (int a = 0; a < n; ++a) {
        double sum = 0.0;
        for (int b = a; b < n; ++b) {
            sum += profile[static_cast<std::size_t>(b)].gap();
            if (b - a + 1 < min_width) continue;
            const double mean = sum / (b - a + 1);
            if (mean > best) {
                best = mean;
                win = {profile[static_cast<std::size_t>(a)].layer, profile[static_cast<std::size_t>(b)].layer};
            }
        }
    }
    return win;
}

std::string config_hash(const nlohmann::json& metadata) {
    const auto it = metadata.find("config");
    const std::string text = it == metadata.end() ? std::string("null") : it->dump();
    return hex64(fnv1a(text));
}

nlohmann::json to_json(const IsMatrix& m) {
    nlohmann::json values = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) row.push_back(m.values(i, j));
        values.push_back(row);
    }
    nlohmann::json ent = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.marginal_entropy.size(); ++i) ent.push_back(m.marginal_entropy(i));
    return {{"tasks", m.tasks},
            {"window", {{"first", m.window.first}, {"last", m.window.last}}},
            {"values", values},
            {"marginal_entropy", ent}};
}

IsMatrix matrix_from_json(const nlohmann::json& doc) {
    try {
        IsMatrix m;
        m.tasks = doc.at("tasks").get<std::vector<std::string>>();
        m.window.first = doc.at("window").at("first").get<int>();
        m.window.last = doc.at("window").at("last").get<int>();
        const auto n = static_cast<Eigen::Index>(m.tasks.size());
        const auto& values = doc.at("values");
        if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != n) {
            throw ValidationError("matrix row count does not match task count");
        }
        m.values.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& row = values.at(static_cast<std::size_t>(i));
            if (static_cast<Eigen::Index>(row.size()) != n) throw ValidationError("matrix row has wrong length");
            for (Eigen::Index j = 0; j < n; ++j) m.values(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
        }
        m.marginal_entropy = Vector::Zero(n);
        if (doc.contains("marginal_entropy")) {
            const auto& ent = doc.at("marginal_entropy");
            if (static_cast<Eigen::Index>(ent.size()) != n) throw ValidationError("entropy list has wrong length");
            for (Eigen::Index i = 0; i < n; ++i) m.marginal_entropy(i) = ent.at(static_cast<std::size_t>(i)).get<double>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed IS matrix: ") + e.what());
    }
}

std::string matrix_csv(const IsMatrix& m) {
    std::string out = "task";
    for (const auto& t : m.tasks) out += "," + csv_field(t);
    out += "\r\n";
    for (std::size_t i = 0; i < m.tasks.size(); ++i) {
        out += csv_field(m.tasks[i]);
        for (std::size_t j = 0; j < m.tasks.size(); ++j) {
            out += "," + format_fixed(m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        }
        out += "\r\n";
    }
    return out;
}

std::string heatmap_svg(const IsMatrix& m) {
    constexpr int kCell = 64, kMargin = 96;
    const auto n = static_cast<int>(m.tasks.size());
    const int size = kMargin + n * kCell + 8;
    double lo = n > 0 ? m.values.minCoeff() : 0.0;
    double hi = n > 0 ? m.values.maxCoeff() : 1.0;
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << size << "\" height=\"" << size
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<title>IS(row -&gt; col), layers " << xml_escape(m.window.str()) << "</title>\n";
    for (int j = 0; j < n; ++j) {
        s << "<text x=\"" << kMargin + j * kCell + kCell / 2 << "\" y=\"" << kMargin - 8
          << "\" text-anchor=\"middle\">" << xml_escape(m.tasks[static_cast<std::size_t>(j)]) << "</text>\n";
    }
    for (int i = 0; i < n; ++i) {
        s << "<text x=\"" << kMargin - 8 << "\" y=\"" << kMargin + i * kCell + kCell / 2 + 4
          << "\" text-anchor=\"end\">" << xml_escape(m.tasks[static_cast<std::size_t>(i)]) << "</text>\n";
        for (int j = 0; j < n; ++j) {
            const double v = m.values(i, j);
            const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
            const int r = static_cast<int>(std::lround(255 - t * (255 - 33)));
            const int g = static_cast<int>(std::lround(255 - t * (255 - 102)));
            const int b = static_cast<int>(std::lround(255 - t * (255 - 172)));
            const int x = kMargin + j * kCell, y = kMargin + i * kCell;
            s << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\""
              << kCell << "\" fill=\"rgb(" << r << "," << g << "," << b << ")\" stroke=\"#ffffff\"/>\n";
            s << "<text x=\"" << x + kCell / 2 << "\" y=\"" << y + kCell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
              << (t > 0.6 ? "#ffffff" : "#000000") << "\">" << format_fixed(v, 3) << "</text>\n";
        }
    }
    s << "</svg>\n";
    return s.str();
}

void emit_report(const Report& report, const std::filesystem::path& out_dir) {
    const PpRanking pp = predictive_power(report.matrix);
    const auto inclusions = pairwise_inclusion(report.matrix);

    nlohmann::json doc;
    doc["schema"] = kReportSchema;
    doc["config_hash"] = config_hash(report.metadata);
    doc["metadata"] = report.metadata;
    doc["matrix"] = to_json(report.matrix);
    nlohmann::json ppj = nlohmann::json::array();
    for (std::size_t i = 0; i < pp.tasks.size(); ++i) {
        ppj.push_back({{"task", pp.tasks[i]}, {"pp", pp.pp[i]}, {"rank", pp.rank[i]}});
    }
    doc["predictive_power"] = ppj;
    nlohmann::json inc = nlohmann::json::array();
    for (const auto& r : inclusions) {
        inc.push_back({{"included", r.included},
                       {"container", r.container},
                       {"margin", r.margin},
                       {"incomparable", r.incomparable}});
    }
    doc["inclusions"] = inc;
    if (!report.profile.empty()) {
        nlohmann::json prof = nlohmann::json::array();
        for (const auto& e : report.profile) {
            prof.push_back({{"layer", e.layer},
                            {"ft_to_pt", e.finetuned_to_pretrained},
                            {"pt_to_ft", e.pretrained_to_finetuned}});
        }
        doc["profile"] = prof;
    }
    doc["tables"] = report.tables;

    ensure_directory(out_dir);
    write_text(out_dir / "is_matrix.csv", matrix_csv(report.matrix));
    write_text(out_dir / "report.json", doc.dump(2) + "\n");
    write_text(out_dir / "heatmap.svg", heatmap_svg(report.matrix));
    if (!report.profile.empty()) {
        std::string csv = "layer,ft_to_pt,pt_to_ft,gap\r\n";
        for (const auto& e : report.profile) {
            csv += std::to_string(e.layer) + "," + format_fixed(e.finetuned_to_pretrained) + "," +
                   format_fixed(e.pretrained_to_finetuned) + "," + format_fixed(e.gap()) + "\r\n";
        }
        write_text(out_dir / "layer_profile.csv", csv);
    }
}

Report load_report(const std::filesystem::path& json_path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text(json_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(json_path.string() + ": " + e.what());
    }
    if (doc.value("schema", std::string()) != kReportSchema) {
        throw ValidationError(json_path.string() + ": not a " + std::string(kReportSchema) + " document");
    }
    Report r;
    r.matrix = matrix_from_json(doc.at("matrix"));
    r.metadata = doc.value("metadata", nlohmann::json::object());
    r.tables = doc.value("tables", nlohmann::json::object());
    if (doc.contains("profile")) {
        for (const auto& e : doc.at("profile")) {
            r.profile.push_back({e.at("layer").get<int>(), e.at("ft_to_pt").get<double>(), e.at("pt_to_ft").get<double>()});
        }
    }
    return r;
}

}  // namespace taskgraph::analysis
