#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gradient_check.hpp"
#include "taskgraph/analysis.hpp"
#include "taskgraph/deficiency.hpp"
#include "taskgraph/density.hpp"
#include "taskgraph/experiment.hpp"
#include "taskgraph/taskvec.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace taskgraph;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// --- criteria 1-4: one synthetic run ------------------------------------------

struct RunTables {
    json tables;
    int datasets = 0;
};

RunTables load_run(const fs::path& dir) {
    const auto report = analysis::load_report(dir / "summary" / "report.json");
    RunTables r;
    r.tables = report.tables;
    r.datasets = static_cast<int>(r.tables.at("inclusion_pattern").size());
    return r;
}

Outcome inclusion_pattern(const RunTables& run) {
    int ok = 0;
    for (const auto& p : run.tables.at("inclusion_pattern")) {
        if (p.at("diagonal_max").get<bool>() && p.at("f_to_l").get<bool>() && p.at("l_to_f").get<bool>()) ++ok;
    }
    return {run.datasets == 5 && ok >= 4, std::to_string(ok) + "/" + std::to_string(run.datasets) + " datasets"};
}

Outcome entropy_ordering(const RunTables& run) {
    const auto& ent = run.tables.at("entropy");
    const auto f = ent.at("F").at("per_dataset").get<std::vector<double>>();
    const auto l = ent.at("L").at("per_dataset").get<std::vector<double>>();
    const auto fl = ent.at("FvL").at("per_dataset").get<std::vector<double>>();
    int ok = 0;
    std::ostringstream s;
    for (std::size_t i = 0; i < fl.size(); ++i) {
        if (fl[i] > f[i] && fl[i] > l[i]) ++ok;
        s << (i ? "; " : "") << "F " << fmt(f[i]) << " L " << fmt(l[i]) << " FvL " << fmt(fl[i]);
    }
    return {run.datasets == 5 && ok >= 4,
            std::to_string(ok) + "/" + std::to_string(run.datasets) + " datasets (" + s.str() + ")"};
}

Outcome accuracy_sanity(const RunTables& run) {
    const auto& m = run.tables.at("metrics");
    const double f = m.at("F").at("accuracy_mean").get<double>();
    const double l = m.at("L").at("accuracy_mean").get<double>();
    const double fl = m.at("FvL").at("accuracy_mean").get<double>();
    const bool pass = f > fl && l > fl && f >= 0.65 && l >= 0.65;
    return {pass, "mean accuracy F " + fmt(f) + " L " + fmt(l) + " FvL " + fmt(fl)};
}

Outcome likelihood_fidelity(const RunTables& run) {
    int ok = 0;
    double worst_gap = std::numeric_limits<double>::infinity();
    for (const auto& c : run.tables.at("likelihood_correlation")) {
        const double gap = c.at("trained").get<double>() - c.at("untrained").get<double>();
        if (gap > 0.0) ++ok;
        worst_gap = std::min(worst_gap, gap);
    }
    return {ok == run.datasets && run.datasets > 0,
            std::to_string(ok) + "/" + std::to_string(run.datasets) + " datasets, smallest gap " + fmt(worst_gap)};
}

// --- criterion 5: entropy estimator accuracy -----------------------------------

Matrix gaussian_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    return testing::random_matrix(n, d, rng);
}

Outcome estimator_accuracy() {
    const density::KnifeConfig cfg;
    const auto g = density::fit_marginal(gaussian_rows(3000, 4, 1), cfg, 3);
    const double h = density::entropy(g, gaussian_rows(3000, 4, 2));
    const double h_true = 2.0 * std::log(2.0 * std::numbers::pi * std::numbers::e);

    constexpr double rho = 0.9;
    constexpr Eigen::Index d = 4, n = 4000;
    Rng rng(11);
    std::normal_distribution<double> nd;
    Matrix a(n, d), b(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            a(i, j) = nd(rng);
            b(i, j) = rho * a(i, j) + std::sqrt(1.0 - rho * rho) * nd(rng);
        }
    }
    const EmbeddingSet sa{a, {}, "gauss", "a", 0}, sb{b, {}, "gauss", "b", 0};
    const auto est = density::information_sufficiency(sa, sb, cfg, 5);
    const double per_dim = est.value / static_cast<double>(d);
    const double is_true = -0.5 * std::log(1.0 - rho * rho);

    const bool pass = std::abs(h - h_true) < 0.15 && std::abs(per_dim - is_true) < 0.2;
    return {pass, "h " + fmt(h) + " vs " + fmt(h_true) + ", IS per dim " + fmt(per_dim) + " vs " + fmt(is_true)};
}

// --- criterion 6: deficiency oracle --------------------------------------------

Outcome deficiency_oracle() {
    Rng rng(101);
    std::uniform_int_distribution<int> size(2, 6);
    double worst_self = 0.0, worst_garble = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int ny = size(rng), nz = size(rng), nw = size(rng);
        const auto k = testing::random_kernel(ny, nz, rng);
        const auto m = testing::random_kernel(nz, nw, rng);
        worst_self = std::max(worst_self, deficiency::deficiency(k, k).delta);
        worst_garble = std::max(worst_garble, deficiency::deficiency(k, deficiency::compose(m, k)).delta);
    }
    double worst_grid = 0.0;
    for (int i = 0; i < 20; ++i) {
        const auto s = testing::random_kernel(2, 2, rng), t = testing::random_kernel(2, 2, rng);
        const double lp = deficiency::deficiency(s, t).delta;
        worst_grid = std::max(worst_grid, std::abs(lp - testing::brute_force_deficiency_2x2(s, t, 1e-3)));
    }
    double worst_risk = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 100; ++i) {
        const int ny = size(rng);
        const auto prior = testing::random_distribution(ny, rng);
        const auto s = testing::random_kernel(ny, size(rng), rng), t = testing::random_kernel(ny, size(rng), rng);
        const double excess = deficiency::bayes_risk_01(prior, s) - deficiency::deficiency(s, t).delta -
                              deficiency::bayes_risk_01(prior, t);
        worst_risk = std::max(worst_risk, excess);
    }
    const bool pass = worst_self < 1e-8 && worst_garble < 1e-8 && worst_grid < 2e-3 && worst_risk <= 1e-8;
    return {pass, "self " + fmt(worst_self, 3) + ", garbled " + fmt(worst_garble, 3) + ", grid gap " +
                      fmt(worst_grid, 3) + ", risk excess " + fmt(worst_risk, 3)};
}

// --- criterion 7: data processing inequality ------------------------------------

Outcome dpi_suite() {
    Rng rng(202);
    std::uniform_int_distribution<int> size(2, 6);
    int violations = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 1000; ++i) {
        const auto j = testing::markov_joint(size(rng), size(rng), size(rng), rng);
        const double slack = deficiency::discrete_mi(j.uv) -
                             std::min(deficiency::discrete_mi(j.yu), deficiency::discrete_mi(j.yv));
        if (slack > 1e-9) ++violations;
        worst = std::max(worst, slack);
    }
    return {violations == 0, std::to_string(violations) + " violations in 1000, largest slack " + fmt(worst, 3)};
}

// --- criterion 8: Grassmann suite -------------------------------------------------

Outcome grassmann_suite() {
    Rng rng(303);
    std::uniform_int_distribution<int> dim(2, 12);
    int bound_violations = 0;
    for (int i = 0; i < 1000; ++i) {
        const int m = dim(rng), n = dim(rng);
        std::uniform_int_distribution<int> rank(1, std::min(m, n));
        const int r1 = rank(rng), r2 = rank(rng);
        const Matrix w1 = testing::random_matrix(m, r1, rng) * testing::random_matrix(r1, n, rng);
        const Matrix w2 = testing::random_matrix(m, r2, rng) * testing::random_matrix(r2, n, rng);
        const auto g = taskvec::grassmann(w1, w2);
        const double r = static_cast<double>(std::min(g.rank_first, g.rank_second));
        if (g.distance > std::sqrt(r) * std::numbers::pi / 2 + 1e-12) ++bound_violations;
    }
    double worst_invariance = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int m = dim(rng) + 2, n = dim(rng) + 2;
        std::uniform_int_distribution<int> rank(1, std::min(m, n) - 1);
        const int r = rank(rng);
        const Matrix b1 = testing::random_matrix(m, r, rng), a1 = testing::random_matrix(r, n, rng);
        const Matrix b2 = testing::random_matrix(m, r, rng), a2 = testing::random_matrix(r, n, rng);
        worst_invariance = std::max(worst_invariance, taskvec::grassmann_a_invariance_check(b1, a1, b2, a2).residual);
    }
    double worst_g = 0.0;
    for (int i = 0; i < 100; ++i) {
        const int m = dim(rng), n = dim(rng);
        const Matrix w = testing::random_matrix(m, n, rng);
        Matrix g = testing::random_matrix(n, n, rng);
        g.diagonal().array() += static_cast<double>(n);  // diagonally dominant, hence invertible
        worst_g = std::max(worst_g, taskvec::grassmann_distance(w, w * g));
    }
    const bool pass = bound_violations == 0 && worst_invariance < 1e-6 && worst_g < 1e-9;
    return {pass, std::to_string(bound_violations) + " bound violations in 1000, invariance residual " +
                      fmt(worst_invariance, 3) + ", d(W, WG) " + fmt(worst_g, 3)};
}

// --- criterion 9: predictive power and ranking algebra ------------------------------

analysis::IsMatrix random_is_matrix(int n, Rng& rng) {
    analysis::IsMatrix m;
    for (int i = 0; i < n; ++i) m.tasks.push_back("t" + std::to_string(i));
    m.values = testing::random_matrix(n, n, rng);
    m.marginal_entropy = Vector::Zero(n);
    return m;
}

Outcome ranking_algebra() {
    Rng rng(404);
    std::uniform_int_distribution<int> size(2, 8);
    double worst_sum = 0.0;
    int antisymmetry_failures = 0;
    for (int i = 0; i < 1000; ++i) {
        auto m = random_is_matrix(size(rng), rng);
        const auto pp = analysis::predictive_power(m);
        double sum = 0.0;
        for (double v : pp.pp) sum += v;
        worst_sum = std::max(worst_sum, std::abs(sum));

        auto t = m;
        t.values.transposeInPlace();
        const auto forward = analysis::pairwise_inclusion(m, 0.0);
        const auto reverse = analysis::pairwise_inclusion(t, 0.0);
        const std::size_t n = m.tasks.size();
        bool ok = forward.size() == n * (n - 1) / 2 && reverse.size() == forward.size();
        for (std::size_t k = 0; ok && k < forward.size(); ++k) {
            const auto& a = forward[k];
            const auto& b = reverse[k];
            ok = a.margin >= 0.0 && std::abs(a.margin - b.margin) < 1e-12 &&
                 (a.margin == 0.0 || (a.included == b.container && a.container == b.included));
        }
        if (!ok) ++antisymmetry_failures;
    }
    std::vector<double> xs(12);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = std::normal_distribution<double>()(rng);
    std::vector<double> reversed = xs;
    for (double& v : reversed) v = -v;
    const double tau_same = analysis::kendall_tau(xs, xs);
    const double tau_rev = analysis::kendall_tau(xs, reversed);
    const bool pass = worst_sum < 1e-9 && antisymmetry_failures == 0 && std::abs(tau_same - 1.0) < 1e-12 &&
                      std::abs(tau_rev + 1.0) < 1e-12;
    return {pass, "max |sum PP| " + fmt(worst_sum, 3) + ", antisymmetry failures " +
                      std::to_string(antisymmetry_failures) + ", tau " + fmt(tau_same) + " / " + fmt(tau_rev)};
}

// --- criterion 10: gradient check --------------------------------------------------

Outcome gradient_check() {
    const auto f = testing::gradient_fixture();
    nanoformer::Batch mixed = f.cls_batch;
    mixed.lm_targets = {{0, 1, -1, -1, -1, -1}, {2, -1, -1, -1, -1}, {3, 0, -1, 0, 1, 1, 2, -1}};
    double worst = 0.0;
    std::string worst_block;
    for (const nanoformer::Batch* batch : {&f.lm_batch, &f.cls_batch, static_cast<const nanoformer::Batch*>(&mixed)}) {
        for (const auto& e : testing::gradient_check(f.params, *batch)) {
            if (e.relative_error >= worst) {
                worst = e.relative_error;
                worst_block = e.name;
            }
        }
    }
    return {worst < 1e-3, "largest relative error " + fmt(worst, 3) + " (" + worst_block + ")"};
}

// --- criterion 11: determinism ----------------------------------------------------

std::vector<std::string> relative_files(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).generic_string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Outcome determinism(const fs::path& smoke_config) {
    const auto cfg = experiment::load_run_config(smoke_config);
    testing::TempDir a("accept-a"), b("accept-b");
    const auto r1 = experiment::run_synthetic_experiment(cfg, a.path());
    const auto r2 = experiment::run_synthetic_experiment(cfg, b.path());
    const auto files = relative_files(a.path());
    int differing = 0;
    if (files != relative_files(b.path())) {
        differing = -1;
    } else {
        for (const auto& f : files) {
            if (read_text(a.path() / f) != read_text(b.path() / f)) ++differing;
        }
    }
    const bool pass = differing == 0 && r1.report_hash == r2.report_hash;
    return {pass, std::to_string(files.size()) + " files, " +
                      (differing < 0 ? std::string("file lists differ") : std::to_string(differing) + " differ") +
                      ", hash " + r1.report_hash};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
    std::string config = TASKGRAPH_CONFIG_DIR "/acceptance.json";
    std::string smoke = TASKGRAPH_CONFIG_DIR "/smoke.json";
    std::string work = "acceptance-run";
    std::string from_run;
    std::vector<int> only;
    app.add_option("--config", config, "Run config for criteria 1-4");
    app.add_option("--smoke-config", smoke, "Smoke config for criterion 11");
    app.add_option("--work", work, "Directory for the criteria 1-4 run");
    app.add_option("--from-run", from_run, "Score criteria 1-4 from an existing run directory");
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
    int failures = 0;
    const auto report = [&](int id, const std::string& name, const std::function<Outcome()>& body) {
        if (!wanted(id)) return;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (!o.pass) ++failures;
        std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail
                  << " [" << fmt(secs, 3) << " s]" << std::endl;
    };

    if (wanted(1) || wanted(2) || wanted(3) || wanted(4)) {
        std::optional<RunTables> run;
        std::string run_error;
        const auto start = std::chrono::steady_clock::now();
        try {
            fs::path dir = from_run;
            if (from_run.empty()) {
                dir = work;
                experiment::run_synthetic_experiment(experiment::load_run_config(config), dir, &std::cerr);
            }
            run = load_run(dir);
        } catch (const std::exception& e) {
            run_error = e.what();
        }
        std::cout << "synthetic run: " << (run ? "ok" : "failed: " + run_error) << " ["
                  << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 4) << " s]"
                  << std::endl;
        const auto from = [&](Outcome (*fn)(const RunTables&)) {
            return [&run, &run_error, fn]() -> Outcome {
                if (!run) return {false, "synthetic run failed: " + run_error};
                return fn(*run);
            };
        };
        report(1, "synthetic inclusion pattern", from(inclusion_pattern));
        report(2, "entropy ordering", from(entropy_ordering));
        report(3, "classification sanity", from(accuracy_sanity));
        report(4, "likelihood fidelity", from(likelihood_fidelity));
    }
    report(5, "entropy estimator accuracy", estimator_accuracy);
    report(6, "deficiency oracle", deficiency_oracle);
    report(7, "data processing inequality", dpi_suite);
    report(8, "Grassmann suite", grassmann_suite);
    report(9, "predictive power and ranking algebra", ranking_algebra);
    report(10, "gradient check", gradient_check);
    report(11, "determinism", [&] { return determinism(smoke); });

    std::cout << (failures == 0 ? "all selected criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
