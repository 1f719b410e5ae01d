#include "doctest.h"

#include <cmath>
#include <fstream>
#include <numbers>

#include "taskgraph/density.hpp"
#include "taskgraph/error.hpp"
#include "test_util.hpp"

using namespace taskgraph;
using namespace taskgraph::density;

namespace {

Matrix gaussian(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
    Rng rng(seed);
    return testing::random_matrix(n, d, rng);
}

KnifeConfig quick() {
    KnifeConfig cfg;
    cfg.num_modes = 2;
    cfg.marginal_epochs = 5;
    cfg.conditional_epochs = 5;
    cfg.hidden_dim = 16;
    return cfg;
}

}  // namespace

TEST_CASE("mixture log density matches a direct evaluation") {
    GmmModel g;
    g.weights = Vector(2);
    g.weights << 0.3, 0.7;
    g.means = Matrix(2, 2);
    g.means << 0, 0, 1, -1;
    g.diag_variances = Matrix(2, 2);
    g.diag_variances << 1, 2, 0.5, 0.25;
    Matrix x(1, 2);
    x << 0.4, -0.2;
    double p = 0.0;
    for (int k = 0; k < 2; ++k) {
        double comp = g.weights(k);
        for (int j = 0; j < 2; ++j) {
            const double v = g.diag_variances(k, j), diff = x(0, j) - g.means(k, j);
            comp *= std::exp(-diff * diff / (2 * v)) / std::sqrt(2 * std::numbers::pi * v);
        }
        p += comp;
    }
    CHECK(log_density(g, x)(0) == doctest::Approx(std::log(p)).epsilon(1e-12));
}

TEST_CASE("marginal entropy of a standard normal") {
    KnifeConfig cfg;
    cfg.marginal_epochs = 40;
    const auto g = fit_marginal(gaussian(3000, 4, 1), cfg, 3);
    const double h = entropy(g, gaussian(3000, 4, 2));
    CHECK(std::abs(h - 2.0 * std::log(2 * std::numbers::pi * std::numbers::e)) < 0.15);
    CHECK(g.weights.sum() == doctest::Approx(1.0));
    CHECK(g.diag_variances.minCoeff() >= cfg.variance_floor);
}

TEST_CASE("fitting is deterministic and validates its input") {
    const Matrix x = gaussian(200, 2, 4);
    const auto cfg = quick();
    const auto a = fit_marginal(x, cfg, 9), b = fit_marginal(x, cfg, 9);
    CHECK(a.means == b.means);
    CHECK(a.diag_variances == b.diag_variances);
    CHECK_THROWS_AS(fit_marginal(Matrix::Ones(100, 2), cfg, 0), FitError);
    CHECK_THROWS_AS(fit_marginal(gaussian(10, 2, 1), cfg, 0), ValidationError);
    Matrix bad = x;
    bad(3, 1) = std::nan("");
    CHECK_THROWS_AS(fit_marginal(bad, cfg, 0), ValidationError);

    // a near point mass collapses onto the variance floor
    Matrix tight = Matrix::Ones(200, 1) + 1e-9 * gaussian(200, 1, 5);
    const auto g = fit_marginal(tight, cfg, 0);
    CHECK(g.diag_variances.maxCoeff() < 1e-3);
}

TEST_CASE("information sufficiency of correlated Gaussians") {
    Rng rng(7);
    std::normal_distribution<double> nd;
    const Eigen::Index n = 4000;
    Matrix a(n, 1), b(n, 1), c(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        a(i, 0) = nd(rng);
        b(i, 0) = 0.9 * a(i, 0) + std::sqrt(1 - 0.81) * nd(rng);
        c(i, 0) = nd(rng);
    }
    KnifeConfig cfg;
    cfg.marginal_epochs = 30;
    cfg.conditional_epochs = 30;
    const EmbeddingSet sa{a, {}, "m", "a", 0}, sb{b, {}, "m", "b", 0}, sc{c, {}, "m", "c", 0};
    const auto est = information_sufficiency(sa, sb, cfg, 5);
    CHECK(std::abs(est.value - (-0.5 * std::log(1 - 0.81))) < 0.2);
    CHECK(est.value == doctest::Approx(est.marginal_entropy - est.conditional_entropy));
    CHECK(est.source_id == "a");
    const auto indep = information_sufficiency(sc, sb, cfg, 5);
    CHECK(std::abs(indep.value) < 0.1);
}

TEST_CASE("conditional mixture heads can be gated") {
    auto cfg = quick();
    cfg.cond_weights = false;
    cfg.cond_variances = false;
    const Matrix s = gaussian(300, 2, 1), t = gaussian(300, 3, 2);
    const auto model = fit_conditional(s, t, cfg, 1);
    const auto m0 = conditional_mixture(model, s.row(0).transpose());
    const auto m1 = conditional_mixture(model, s.row(1).transpose());
    CHECK((m0.weights - m1.weights).norm() < 1e-12);
    CHECK((m0.diag_variances - m1.diag_variances).norm() < 1e-12);
    CHECK((m0.means - m1.means).norm() > 0.0);
    CHECK(m0.weights.sum() == doctest::Approx(1.0));
    CHECK(conditional_log_density(model, s, t).size() == 300);
}

TEST_CASE("split, standardizer and ledger") {
    const auto split = make_split(100, 0.1, 3);
    CHECK(split.eval.size() == 10);
    CHECK(split.train.size() == 90);
    CHECK(make_split(100, 0.1, 3).eval == split.eval);

    Matrix x = gaussian(50, 3, 2) * 4.0;
    x.col(2).setConstant(7.0);
    const auto st = Standardizer::fit(x);
    const Matrix z = st.apply(x);
    CHECK(std::abs(z.col(0).mean()) < 1e-12);
    CHECK(z.col(2).cwiseAbs().maxCoeff() == 0.0);

    testing::TempDir dir("ledger");
    auto est = make_estimate(1.0, 1.5);
    CHECK(est.negative);
    CHECK(est.value == doctest::Approx(-0.5));
    append_ledger(dir.path() / "l.jsonl", {est, est});
    append_ledger(dir.path() / "l.jsonl", {est});
    std::ifstream in(dir.path() / "l.jsonl");
    int lines = 0;
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("h_cond"));
        ++lines;
    }
    CHECK(lines == 3);
}

TEST_CASE("knife config JSON") {
    KnifeConfig cfg;
    cfg.num_modes = 3;
    const auto back = knife_from_json(to_json(cfg));
    CHECK(back.num_modes == 3);
    auto j = to_json(cfg);
    j["modes"] = 2;
    CHECK_THROWS_AS(knife_from_json(j), ValidationError);
    cfg.variance_floor = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
