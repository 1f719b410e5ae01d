#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "taskgraph/analysis.hpp"
#include "taskgraph/error.hpp"
#include "test_util.hpp"

using namespace taskgraph;
using namespace taskgraph::analysis;

namespace {

IsMatrix matrix_of(const Matrix& v) {
    IsMatrix m;
    for (Eigen::Index i = 0; i < v.rows(); ++i) m.tasks.push_back("t" + std::to_string(i));
    m.values = v;
    m.marginal_entropy = Vector::Zero(v.rows());
    return m;
}

density::KnifeConfig quick() {
    density::KnifeConfig cfg;
    cfg.num_modes = 2;
    cfg.marginal_epochs = 3;
    cfg.conditional_epochs = 3;
    cfg.hidden_dim = 8;
    return cfg;
}

LayerStack stack(const std::string& task, const std::vector<int>& layers, Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    LayerStack s;
    for (int l : layers) s.push_back(EmbeddingSet{testing::random_matrix(n, 2, rng), {}, "m", task, l});
    return s;
}

}  // namespace

TEST_CASE("layer windows") {
    CHECK(parse_window("10-15").first == 10);
    CHECK(parse_window("10-15").width() == 6);
    CHECK(parse_window("7").last == 7);
    const auto all = parse_window("all", {3, 1, 2});
    CHECK(all.first == 1);
    CHECK(all.last == 3);
    CHECK(all.str() == "1-3");
    CHECK_THROWS_AS(parse_window("5-2"), ValidationError);
    CHECK_THROWS_AS(parse_window("x"), ValidationError);
    CHECK_THROWS_AS(parse_window("all"), ValidationError);
}

TEST_CASE("predictive power") {
    Matrix v(2, 2);
    v << 0, 2, 1, 0;
    const auto pp = predictive_power(matrix_of(v));
    CHECK(pp.pp[0] == doctest::Approx(1.0));
    CHECK(pp.pp[1] == doctest::Approx(-1.0));
    CHECK(pp.rank[0] == 1);
    CHECK(pp.rank[1] == 0);

    Matrix sym(3, 3);
    sym << 1, 2, 3, 2, 1, 4, 3, 4, 1;
    const auto flat = predictive_power(matrix_of(sym));
    CHECK(flat.rank == std::vector<int>{0, 1, 2});

    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto r = predictive_power(matrix_of(testing::random_matrix(5, 5, rng)));
        double sum = 0.0;
        for (double p : r.pp) sum += p;
        CHECK(std::abs(sum) < 1e-9);
        std::set<int> ranks(r.rank.begin(), r.rank.end());
        CHECK(ranks.size() == 5);
        CHECK(*ranks.rbegin() == 4);
    }
    v(0, 1) = std::nan("");
    CHECK_THROWS_AS(predictive_power(matrix_of(v)), ValidationError);
}

TEST_CASE("kendall tau") {
    CHECK(kendall_tau({1, 2, 3, 4}, {1, 2, 3, 4}) == doctest::Approx(1.0));
    CHECK(kendall_tau({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(kendall_tau({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(4.0 / 6.0));
    // tau-b with ties: xs has one tied pair
    const double n0 = 6, n1 = 1, n2 = 0;
    CHECK(kendall_tau({1, 1, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(5.0 / std::sqrt((n0 - n1) * (n0 - n2))));
    CHECK_THROWS_AS(kendall_tau({1, 1, 1}, {1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(kendall_tau({1}, {1}), ValidationError);
    CHECK_THROWS_AS(kendall_tau({1, 2}, {1, 2, 3}), ValidationError);

    Rng rng(2);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 50; ++i) {
        std::vector<double> xs(8), ys(8), fx(8);
        for (int k = 0; k < 8; ++k) {
            xs[static_cast<std::size_t>(k)] = nd(rng);
            ys[static_cast<std::size_t>(k)] = nd(rng);
            fx[static_cast<std::size_t>(k)] = std::exp(3 * xs[static_cast<std::size_t>(k)]) + 1;
        }
        CHECK(kendall_tau(xs, xs) == doctest::Approx(1.0));
        CHECK(kendall_tau(fx, ys) == doctest::Approx(kendall_tau(xs, ys)));
    }
}

TEST_CASE("pairwise inclusion") {
    Matrix v(2, 2);
    v << 0, 2, 1, 0;
    auto inc = pairwise_inclusion(matrix_of(v));
    REQUIRE(inc.size() == 1);
    CHECK(inc[0].included == "t1");
    CHECK(inc[0].container == "t0");
    CHECK(inc[0].margin == doctest::Approx(1.0));
    CHECK_FALSE(inc[0].incomparable);

    v << 0, 1, 1, 0;
    inc = pairwise_inclusion(matrix_of(v));
    CHECK(inc[0].incomparable);

    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto rel = pairwise_inclusion(matrix_of(testing::random_matrix(4, 4, rng)));
        CHECK(rel.size() == 6);
        std::set<std::pair<std::string, std::string>> seen;
        for (const auto& r : rel) {
            CHECK(r.margin >= 0.0);
            seen.insert({r.included, r.container});
            CHECK(seen.count({r.container, r.included}) == 0);
        }
    }
}

TEST_CASE("IS matrix assembly") {
    const auto cfg = quick();
    const std::vector<LayerStack> tasks = {stack("a", {0, 1}, 60, 1), stack("b", {0, 1}, 60, 2)};
    std::vector<density::IsEstimate> ledger;
    const auto m = build_is_matrix(tasks, parse_window("0-1"), cfg, 5, &ledger);
    CHECK(m.values.rows() == 2);
    CHECK(m.tasks == std::vector<std::string>{"a", "b"});
    CHECK(ledger.size() == 8);
    CHECK(m.values.allFinite());

    const auto one = build_is_matrix(tasks, parse_window("1"), cfg, 5);
    double mean01 = 0.0;
    for (const auto& e : ledger)
        if (e.source_id == "a" && e.target_id == "b") mean01 += e.value / 2;
    CHECK(m.values(0, 1) == doctest::Approx(mean01));
    for (const auto& e : ledger)
        if (e.source_id == "a" && e.target_id == "b" && e.layer == 1) CHECK(one.values(0, 1) == e.value);

    CHECK(build_is_matrix({tasks[0]}, parse_window("0"), cfg, 5).values.rows() == 1);
    CHECK_THROWS_AS(build_is_matrix(tasks, parse_window("0-2"), cfg, 5), ValidationError);
    CHECK(build_is_matrix(tasks, parse_window("0-1"), cfg, 5).values == m.values);

    const auto mean = mean_matrix({m, one});
    CHECK(mean.values(1, 0) == doctest::Approx((m.values(1, 0) + one.values(1, 0)) / 2));
}

TEST_CASE("layer profile and window selection") {
    const auto cfg = quick();
    const auto a = stack("ft", {0, 1, 2}, 60, 3);
    const auto profile = layer_profile(a, a, cfg, 1);
    REQUIRE(profile.size() == 3);
    for (const auto& p : profile) CHECK(p.finetuned_to_pretrained == p.pretrained_to_finetuned);
    CHECK_THROWS_AS(layer_profile(a, stack("pt", {0, 1}, 60, 4), cfg, 1), ValidationError);
    CHECK(layer_profile(stack("x", {0}, 60, 5), stack("y", {0}, 60, 6), cfg, 1).size() == 1);

    std::vector<ProfileEntry> p = {{0, 0, 1}, {1, 0, 5}, {2, 0, 4}, {3, 0, 0}, {4, 0, 5}};
    const auto w1 = select_window(p, 1);
    CHECK(w1.first == 1);
    CHECK(w1.last == 1);
    const auto w2 = select_window(p, 2);
    CHECK(w2.first == 1);
    CHECK(w2.last == 2);
}

TEST_CASE("report emission is deterministic and round-trips") {
    Rng rng(4);
    Report r;
    r.matrix = matrix_of(testing::random_matrix(3, 3, rng));
    r.matrix.tasks = {"F", "L", "F,\"v\"L"};
    r.matrix.window = parse_window("0");
    r.metadata["config"] = {{"seed", 1}};
    r.profile = {{0, 0.1, 0.2}};
    testing::TempDir a("report-a"), b("report-b");
    emit_report(r, a.path());
    emit_report(r, b.path());
    for (const char* f : {"is_matrix.csv", "report.json", "heatmap.svg", "layer_profile.csv"}) {
        CHECK(read_text(a.path() / f) == read_text(b.path() / f));
    }
    const std::string csv = read_text(a.path() / "is_matrix.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.find("\"F,\"\"v\"\"L\"") != std::string::npos);
    const std::string svg = read_text(a.path() / "heatmap.svg");
    std::size_t cells = 0;
    for (std::size_t pos = svg.find("class=\"cell\""); pos != std::string::npos; pos = svg.find("class=\"cell\"", pos + 1))
        ++cells;
    CHECK(cells == 9);

    const auto back = load_report(a.path() / "report.json");
    CHECK(back.matrix.values == r.matrix.values);
    CHECK(back.matrix.tasks == r.matrix.tasks);
    CHECK(config_hash(back.metadata) == config_hash(r.metadata));
    CHECK(matrix_from_json(to_json(r.matrix)).values == r.matrix.values);
    CHECK_THROWS_AS(load_report(a.path() / "missing.json"), IoError);
}
