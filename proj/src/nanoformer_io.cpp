#include <map>
#include <set>
#include <string>

#include "taskgraph/binary_io.hpp"
#include "taskgraph/error.hpp"
#include "taskgraph/json_util.hpp"
#include "taskgraph/nanoformer.hpp"

namespace taskgraph::nanoformer {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kFlagPreResidual = 1u << 0;
constexpr std::uint32_t kFlagQueryFirst = 1u << 1;

}  // namespace

std::string_view layout_name(InputLayout layout) {
    return layout == InputLayout::QueryFirst ? "query-first" : "sequence-first";
}

InputLayout parse_layout(std::string_view name) {
    if (name == "query-first") return InputLayout::QueryFirst;
    if (name == "sequence-first") return InputLayout::SequenceFirst;
    throw ValidationError("unknown input layout '" + std::string(name) + "' (expected query-first or sequence-first)");
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"symbol_count", c.symbol_count}, {"max_input_len", c.max_input_len},
            {"hidden_dim", c.hidden_dim},     {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},       {"ffn_dim", c.ffn_dim},
            {"init_std", c.init_std},         {"embed_pre_residual", c.embed_pre_residual},
            {"layout", std::string(layout_name(c.layout))}};
}

ModelConfig model_config_from_json(const nlohmann::json& doc, ModelConfig c) {
    ObjectReader r(doc, "model");
    r.optional("symbol_count", c.symbol_count);
    r.optional("max_input_len", c.max_input_len);
    r.optional("hidden_dim", c.hidden_dim);
    r.optional("num_layers", c.num_layers);
    r.optional("num_heads", c.num_heads);
    r.optional("ffn_dim", c.ffn_dim);
    r.optional("init_std", c.init_std);
    r.optional("embed_pre_residual", c.embed_pre_residual);
    std::string layout(layout_name(c.layout));
    r.optional("layout", layout);
    c.layout = parse_layout(layout);
    r.finish();
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},       {"batches_per_epoch", c.batches_per_epoch},
            {"batch_size", c.batch_size},       {"seed", c.seed},           {"clip_norm", c.clip_norm},
            {"freeze_body", c.freeze_body},     {"beta1", c.beta1},         {"beta2", c.beta2},
            {"adam_eps", c.adam_eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig c) {
    ObjectReader r(doc, "training");
    r.optional("learning_rate", c.learning_rate);
    r.optional("epochs", c.epochs);
    r.optional("batches_per_epoch", c.batches_per_epoch);
    r.optional("batch_size", c.batch_size);
    r.optional("seed", c.seed);
    r.optional("clip_norm", c.clip_norm);
    r.optional("freeze_body", c.freeze_body);
    r.optional("beta1", c.beta1);
    r.optional("beta2", c.beta2);
    r.optional("adam_eps", c.adam_eps);
    r.finish();
    c.validate();
    return c;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    const ModelConfig& c = params.config;
    binary::Writer w;
    w.magic("NFM1");
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(c.symbol_count));
    w.u32(static_cast<std::uint32_t>(c.max_input_len));
    w.u32(static_cast<std::uint32_t>(c.hidden_dim));
    w.u32(static_cast<std::uint32_t>(c.num_layers));
    w.u32(static_cast<std::uint32_t>(c.num_heads));
    w.u32(static_cast<std::uint32_t>(c.ffn_dim));
    w.u32(static_cast<std::uint32_t>(params.num_classes));
    std::uint32_t flags = 0;
    if (c.embed_pre_residual) flags |= kFlagPreResidual;
    if (c.layout == InputLayout::QueryFirst) flags |= kFlagQueryFirst;
    w.u32(flags);

    const auto tensors = params.tensors();
    std::uint32_t count = 0;
    for (const auto& [name, t] : tensors) count += t->size() > 0;
    w.u32(count);
    for (const auto& [name, t] : tensors) {
        if (t->size() == 0) continue;
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.u32(static_cast<std::uint32_t>(t->rows()));
        w.u32(static_cast<std::uint32_t>(t->cols()));
        for (Eigen::Index r = 0; r < t->rows(); ++r)
            for (Eigen::Index col = 0; col < t->cols(); ++col) w.f32(static_cast<float>((*t)(r, col)));
    }
    w.save(path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    binary::Reader r(path);
    r.expect_magic("NFM1");
    if (const auto version = r.u32(); version != kCheckpointVersion) {
        r.fail("unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig c;
    c.symbol_count = static_cast<int>(r.u32());
    c.max_input_len = static_cast<int>(r.u32());
    c.hidden_dim = static_cast<int>(r.u32());
    c.num_layers = static_cast<int>(r.u32());
    c.num_heads = static_cast<int>(r.u32());
    c.ffn_dim = static_cast<int>(r.u32());
    const int num_classes = static_cast<int>(r.u32());
    const std::uint32_t flags = r.u32();
    c.embed_pre_residual = (flags & kFlagPreResidual) != 0;
    c.layout = (flags & kFlagQueryFirst) ? InputLayout::QueryFirst : InputLayout::SequenceFirst;
    c.validate();

    // Shapes come from a freshly initialised model; the file must match them.
    ModelParams params = init_params(c, 0);
    if (num_classes > 0) attach_classifier(params, num_classes, 0);
    std::map<std::string, Matrix*, std::less<>> by_name;
    for (auto& [name, t] : params.tensors()) {
        if (t->size() > 0) by_name.emplace(std::string(name), t);
    }

    std::set<std::string, std::less<>> seen;
    const std::uint32_t count = r.u32();
    if (count != by_name.size()) {
        r.fail("expected " + std::to_string(by_name.size()) + " tensors, header says " + std::to_string(count));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        if (name_len > 64) r.fail("tensor name too long");
        const std::string name = r.raw(name_len);
        auto it = by_name.find(name);
        if (it == by_name.end()) r.fail("unknown tensor '" + name + "'");
        if (!seen.insert(name).second) r.fail("duplicate tensor '" + name + "'");
        Matrix& t = *it->second;
        const auto rows = static_cast<Eigen::Index>(r.u32());
        const auto cols = static_cast<Eigen::Index>(r.u32());
        if (rows != t.rows() || cols != t.cols()) {
            r.fail("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                   ", expected " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
        }
        r.require_payload(static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(cols) * 4, "tensor " + name);
        for (Eigen::Index row = 0; row < rows; ++row)
            for (Eigen::Index col = 0; col < cols; ++col) t(row, col) = r.f32();
    }
    if (!params.all_finite()) throw IoError(path.string() + ": checkpoint contains non-finite values");
    return params;
}

}  // namespace taskgraph::nanoformer
