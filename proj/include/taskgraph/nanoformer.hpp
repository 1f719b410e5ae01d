#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "taskgraph/common.hpp"
#include "taskgraph/hmm.hpp"

namespace taskgraph::nanoformer {

/// Where the (c1, c2) query symbols sit relative to the HMM sequence in a
/// classification input. The classifier always reads the final position.
enum class InputLayout {
    QueryFirst,     // BOS c1 c2 SEP s1..sn
    SequenceFirst,  // BOS s1..sn SEP c1 c2
};

std::string_view layout_name(InputLayout layout);
InputLayout parse_layout(std::string_view name);

struct ModelConfig {
    int symbol_count = 10;   // HMM vocabulary; BOS, SEP and PAD are appended
    int max_input_len = 50;
    int hidden_dim = 100;
    int num_layers = 1;
    int num_heads = 1;
    int ffn_dim = 400;
    double init_std = 0.02;
    /// Embed the attention sublayer output before the residual add.
    bool embed_pre_residual = false;
    InputLayout layout = InputLayout::QueryFirst;

    int vocab_size() const { return symbol_count + 3; }
    int bos() const { return symbol_count; }
    int sep() const { return symbol_count + 1; }
    int pad() const { return symbol_count + 2; }
    void validate() const;
};

struct TrainConfig {
    double learning_rate = 2e-3;
    int epochs = 100;
    int batches_per_epoch = 200;
    int batch_size = 64;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;  // global gradient norm clip; 0 disables
    bool freeze_body = false;  // fine-tuning: train only the classification head
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    static TrainConfig pretraining() { return {}; }
    static TrainConfig finetuning() {
        TrainConfig tc;
        tc.learning_rate = 2e-4;
        return tc;
    }
    void validate() const;
};

/// All weights of the one-block pre-norm transformer. Biases and layer-norm
/// vectors are stored as 1 x n matrices so every tensor has the same type.
struct ModelParams {
    ModelConfig config;
    Matrix token_embedding;     // vocab x d
    Matrix position_embedding;  // max_len x d
    Matrix ln1_gain, ln1_bias;
    Matrix w_query, b_query, w_key, b_key, w_value, b_value, w_out, b_out;
    Matrix ln2_gain, ln2_bias;
    Matrix w_ff1, b_ff1, w_ff2, b_ff2;
    Matrix lnf_gain, lnf_bias;
    Matrix w_lm, b_lm;    // d x vocab
    int num_classes = 0;  // 0 when no classification head
    Matrix w_cls, b_cls;  // d x classes

    std::vector<std::pair<std::string_view, Matrix*>> tensors();
    std::vector<std::pair<std::string_view, const Matrix*>> tensors() const;
    bool all_finite() const;
    /// Same shapes, all zeros.
    ModelParams zeros_like() const;
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
void attach_classifier(ModelParams& params, int num_classes, std::uint64_t seed);

/// BOS s1..s_{n-1}; next-token targets are s1..sn.
std::vector<int> encode_lm_input(const ModelConfig& config, const hmm::Sequence& sequence);
/// Classification input per config.layout; throws if longer than max_input_len.
std::vector<int> encode_example(const ModelConfig& config, const hmm::LabeledExample& example);

/// A training batch. lm_targets[b][t] is the token expected after position t
/// (-1 for none); class_targets[b] is the label read at the last position
/// (-1 for none). Loss is mean LM cross-entropy plus mean classification
/// cross-entropy over whichever targets are present.
struct Batch {
    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<int>> lm_targets;
    std::vector<int> class_targets;
};

/// Returns the batch loss; fills `grads` (shaped like params) when non-null.
double loss_and_gradients(const ModelParams& params, const Batch& batch, ModelParams* grads);

/// LM logits (T x vocab) for one input.
Matrix lm_logits(const ModelParams& params, const std::vector<int>& tokens);
/// Attention probabilities (T x T) of one head for one input.
Matrix attention_weights(const ModelParams& params, const std::vector<int>& tokens, int head = 0);

struct TrainResult {
    ModelParams params;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

TrainResult pretrain(const std::vector<hmm::Sequence>& corpus, const ModelConfig& config,
                     const TrainConfig& train);

TrainResult finetune(const ModelParams& base, const std::vector<hmm::LabeledExample>& data,
                     hmm::TaskKind task, const TrainConfig& train);

/// Attention-sublayer output at the last input position, one row per example.
EmbeddingSet embed(const ModelParams& params, const std::vector<hmm::LabeledExample>& data);

struct Metrics {
    double accuracy = 0.0;
    double f1_micro = 0.0;
    double f1_macro = 0.0;
};

/// Macro F1 averages over classes present in truth or predictions.
Metrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted);
/// Argmax class per example, ties to the lowest index.
std::vector<int> predict(const ModelParams& params, const std::vector<hmm::LabeledExample>& data);
Metrics eval_metrics(const ModelParams& params, const std::vector<hmm::LabeledExample>& data);

/// Per-sequence sum of log p(s_t | BOS, s_<t) under the LM head (nats, <= 0).
std::vector<double> sequence_log_likelihood(const ModelParams& params,
                                            const std::vector<hmm::Sequence>& sequences);

/// Configs as JSON objects; readers start from `base` and reject unknown keys.
nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc, ModelConfig base = {});
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

/// "NFM1" checkpoint; layout in docs/formats.md.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace taskgraph::nanoformer
