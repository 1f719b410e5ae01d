#include "doctest.h"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "taskgraph/embstore.hpp"
#include "taskgraph/error.hpp"
#include "test_util.hpp"

using namespace taskgraph;
using namespace taskgraph::embstore;

namespace {

std::string slurp(const std::filesystem::path& p) { return read_text(p); }

void poke(const std::filesystem::path& p, std::size_t offset, const std::string& bytes) {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(offset));
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string le32(std::uint32_t v) {
    std::string s(4, '\0');
    for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xff);
    return s;
}

EmbeddingSet make_set(int layer, Eigen::Index n, Eigen::Index d, Rng& rng) {
    EmbeddingSet s;
    s.values = testing::random_matrix(n, d, rng).cast<float>().cast<double>();
    s.labels.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) s.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % 3);
    s.model_id = "m";
    s.task_id = "t";
    s.layer = layer;
    return s;
}

}  // namespace

TEST_CASE("EMB1 byte layout") {
    testing::TempDir dir("emb");
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    const auto path = dir.path() / "x.emb";
    write_layer(path, m);
    CHECK(std::filesystem::file_size(path) == 16 + 24);
    const std::string bytes = slurp(path);
    CHECK(bytes.substr(0, 4) == "EMB1");
    CHECK(bytes.substr(4, 4) == le32(1));
    CHECK(bytes.substr(8, 4) == le32(2));
    CHECK(bytes.substr(12, 4) == le32(3));
    CHECK(bytes.substr(16, 4) == le32(std::bit_cast<std::uint32_t>(1.0f)));
    CHECK(bytes.substr(36, 4) == le32(std::bit_cast<std::uint32_t>(6.0f)));
    CHECK_FALSE(std::filesystem::exists(labels_path(path)));
}

TEST_CASE("EMB1 round-trip preserves special floats") {
    testing::TempDir dir("emb");
    Matrix m(2, 3);
    m << -0.0, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::max(), static_cast<double>(1e-40f), -3.5,
        std::numeric_limits<float>::lowest();
    const auto path = dir.path() / "x.emb";
    write_layer(path, m, {4, 7});
    const auto back = read_layer(path);
    CHECK(back.values == m);
    CHECK(std::signbit(back.values(0, 0)));
    CHECK(back.labels == std::vector<int>{4, 7});
    const std::string lbl = slurp(labels_path(path));
    CHECK(lbl.size() == 4 + 4 + 8);
    CHECK(lbl.substr(0, 4) == "LBL1");
    CHECK_THROWS_AS(write_layer(path, m, {1}), ValidationError);
    CHECK_THROWS_AS(write_layer(path, Matrix(0, 3)), ValidationError);
}

TEST_CASE("EMB1 reader rejects damaged files") {
    testing::TempDir dir("emb");
    const auto path = dir.path() / "x.emb";
    Matrix m = Matrix::Ones(3, 2);
    write_layer(path, m, {0, 1, 2});

    SUBCASE("bad magic names the offset") {
        poke(path, 0, "EMBX");
        CHECK_THROWS_WITH_AS(read_layer(path), doctest::Contains("offset 0"), IoError);
    }
    SUBCASE("version mismatch") {
        poke(path, 4, le32(2));
        CHECK_THROWS_WITH_AS(read_layer(path), doctest::Contains("version"), IoError);
    }
    SUBCASE("truncated payload reports expected and actual size") {
        std::filesystem::resize_file(path, 30);
        CHECK_THROWS_WITH_AS(read_layer(path), doctest::Contains("expected 40 bytes, file has 30"), IoError);
    }
    SUBCASE("huge header cannot over-read") {
        poke(path, 8, le32(0xffffffffu));
        CHECK_THROWS_AS(read_layer(path), IoError);
    }
    SUBCASE("NaN payload names the row") {
        poke(path, 16 + 4 * 5, le32(std::bit_cast<std::uint32_t>(std::numeric_limits<float>::quiet_NaN())));
        CHECK_THROWS_WITH_AS(read_layer(path), doctest::Contains("row 2"), IoError);
    }
    SUBCASE("label count mismatch") {
        write_layer(dir.path() / "y.emb", Matrix::Ones(2, 2), {0, 1});
        std::filesystem::copy_file(dir.path() / "y.lbl", labels_path(path),
                                   std::filesystem::copy_options::overwrite_existing);
        CHECK_THROWS_AS(read_layer(path), IoError);
    }
}

TEST_CASE("store manifest and validation") {
    Rng rng(9);
    testing::TempDir dir("store");
    std::vector<EmbeddingSet> layers = {make_set(0, 10, 4, rng), make_set(1, 10, 4, rng)};
    layers[1].labels = layers[0].labels;
    const auto manifest = write_store(dir.path(), layers);
    CHECK(manifest.layer_count() == 2);

    const auto back = read_store(dir.path());
    REQUIRE(back.size() == 2);
    CHECK(back[1].values == layers[1].values);
    CHECK(back[1].labels == layers[0].labels);
    CHECK(back[1].layer == 1);
    CHECK(back[0].task_id == "t");

    auto report = validate_manifest(dir.path());
    CHECK(report.ok());
    CHECK(report.files.size() == 3);

    write_layer(dir.path() / manifest.layer_files[1], Matrix::Ones(10, 5));
    report = validate_manifest(dir.path());
    CHECK_FALSE(report.ok());
    int failed = 0;
    for (const auto& f : report.files) {
        if (!f.ok) {
            ++failed;
            CHECK(f.file == manifest.layer_files[1]);
        }
    }
    CHECK(failed == 1);

    std::filesystem::remove(dir.path() / manifest.layer_files[0]);
    report = validate_manifest(dir.path());
    CHECK_FALSE(report.files[0].ok);
    CHECK_FALSE(report.files[1].ok);
    CHECK(to_json(report).at("files").size() == 3);

    testing::TempDir empty("store-empty");
    const auto none = validate_manifest(empty.path());
    CHECK_FALSE(none.manifest_ok);
    CHECK(none.manifest_message.find("manifest missing") != std::string::npos);
}

TEST_CASE("manifest rejects unknown keys and inconsistent counts") {
    Manifest m;
    m.model_id = "a";
    m.task_id = "b";
    m.dim = 2;
    m.example_count = 3;
    m.layers = {0};
    m.layer_files = {"layer-0.emb"};
    auto j = to_json(m);
    CHECK(manifest_from_json(j).layer_files == m.layer_files);
    j["extra"] = 1;
    CHECK_THROWS_AS(manifest_from_json(j), ValidationError);
    j.erase("extra");
    j["layer_count"] = 2;
    CHECK_THROWS_AS(manifest_from_json(j), ValidationError);
}
