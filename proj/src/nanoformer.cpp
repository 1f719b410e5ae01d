#include "taskgraph/nanoformer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <limits>
#include <numbers>
#include <set>

#include "taskgraph/error.hpp"

namespace taskgraph::nanoformer {
namespace {

constexpr double kLayerNormEps = 1e-5;

using Array = Eigen::ArrayXXd;

// ---------------------------------------------------------------------------
// Packed batches: all positions of all sequences stacked row-wise, so every
// position-wise layer is a single matrix product.

struct Packed {
    std::vector<int> tokens;
    std::vector<int> positions;
    std::vector<Eigen::Index> offsets;  // size B + 1

    Eigen::Index rows() const { return static_cast<Eigen::Index>(tokens.size()); }
    std::size_t batch() const { return offsets.size() - 1; }
    Eigen::Index length(std::size_t b) const { return offsets[b + 1] - offsets[b]; }
};

Packed pack(const ModelConfig& cfg, const std::vector<std::vector<int>>& inputs) {
    Packed p;
    p.offsets.push_back(0);
    for (const auto& seq : inputs) {
        if (seq.empty()) throw ValidationError("empty model input");
        if (static_cast<int>(seq.size()) > cfg.max_input_len) {
            throw ValidationError("input of length " + std::to_string(seq.size()) + " exceeds max_input_len " +
                                  std::to_string(cfg.max_input_len));
        }
        for (std::size_t t = 0; t < seq.size(); ++t) {
            if (seq[t] < 0 || seq[t] >= cfg.vocab_size()) {
                throw ValidationError("token " + std::to_string(seq[t]) + " outside vocabulary");
            }
            p.tokens.push_back(seq[t]);
            p.positions.push_back(static_cast<int>(t));
        }
        p.offsets.push_back(static_cast<Eigen::Index>(p.tokens.size()));
    }
    return p;
}

struct LnCache {
    Array xhat;
    Eigen::ArrayXd inv_std;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LnCache& c) {
    Eigen::ArrayXd mean = x.array().rowwise().mean();
    Array centered = x.array().colwise() - mean;
    Eigen::ArrayXd var = centered.square().rowwise().mean();
    c.inv_std = (var + kLayerNormEps).rsqrt();
    c.xhat = centered.colwise() * c.inv_std;
    return ((c.xhat.rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array()).matrix();
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LnCache& c, Matrix& dgain,
                           Matrix& dbias) {
    dgain += (dy.array() * c.xhat).colwise().sum().matrix();
    dbias += dy.colwise().sum();
    Array dxhat = dy.array().rowwise() * gain.row(0).array();
    Eigen::ArrayXd m1 = dxhat.rowwise().mean();
    Eigen::ArrayXd m2 = (dxhat * c.xhat).rowwise().mean();
    Array dx = (dxhat.colwise() - m1) - c.xhat.colwise() * m2;
    return (dx.colwise() * c.inv_std).matrix();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

Array gelu(const Array& u) {
    return 0.5 * u * (1.0 + (kGeluC * (u + kGeluA * u.cube())).tanh());
}

Array gelu_grad(const Array& u) {
    Array t = (kGeluC * (u + kGeluA * u.cube())).tanh();
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t.square()) * kGeluC * (1.0 + 3.0 * kGeluA * u.square());
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

struct Forward {
    Packed packed;
    Matrix x0, h1, q, k, v, o, attn_out, x1, x1_sel, h2, u, g, x2, hf;
    LnCache ln1, ln2, lnf;
    std::vector<Matrix> attn;  // index b * heads + h
    std::vector<Eigen::Index> sel;  // rows carried past attention; empty = all rows
};

enum class Depth { AttentionOnly, Full };

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

/// Row index of the last position of every input, in packed order.
std::vector<Eigen::Index> last_rows(const Packed& p) {
    std::vector<Eigen::Index> rows;
    rows.reserve(p.batch());
    for (std::size_t b = 0; b < p.batch(); ++b) rows.push_back(p.offsets[b + 1] - 1);
    return rows;
}

/// Position-wise layers after attention only see the rows in `sel` (all rows
/// when empty); hf row i then belongs to packed row sel[i].
Forward forward(const ModelParams& p, const std::vector<std::vector<int>>& inputs, Depth depth = Depth::Full,
                bool last_only = false) {
    const ModelConfig& cfg = p.config;
    Forward f;
    f.packed = pack(cfg, inputs);
    const Eigen::Index rows = f.packed.rows();
    const int d = cfg.hidden_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    f.x0.resize(rows, d);
    for (Eigen::Index r = 0; r < rows; ++r) {
        f.x0.row(r) = p.token_embedding.row(f.packed.tokens[static_cast<std::size_t>(r)]) +
                      p.position_embedding.row(f.packed.positions[static_cast<std::size_t>(r)]);
    }
    f.h1 = layer_norm(f.x0, p.ln1_gain, p.ln1_bias, f.ln1);
    f.q = affine(f.h1, p.w_query, p.b_query);
    f.k = affine(f.h1, p.w_key, p.b_key);
    f.v = affine(f.h1, p.w_value, p.b_value);
    f.o.resize(rows, d);
    f.attn.resize(f.packed.batch() * static_cast<std::size_t>(heads));
    for (std::size_t b = 0; b < f.packed.batch(); ++b) {
        const Eigen::Index off = f.packed.offsets[b];
        const Eigen::Index len = f.packed.length(b);
        for (int h = 0; h < heads; ++h) {
            Matrix s = f.q.block(off, h * dh, len, dh) * f.k.block(off, h * dh, len, dh).transpose() * scale;
            for (Eigen::Index i = 0; i < len; ++i) {
                const double mx = s.row(i).head(i + 1).maxCoeff();
                double total = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    total += s(i, j);
                }
                for (Eigen::Index j = 0; j <= i; ++j) s(i, j) /= total;
                for (Eigen::Index j = i + 1; j < len; ++j) s(i, j) = 0.0;
            }
            f.o.block(off, h * dh, len, dh).noalias() = s * f.v.block(off, h * dh, len, dh);
            f.attn[b * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)] = std::move(s);
        }
    }
    f.attn_out = affine(f.o, p.w_out, p.b_out);
    f.x1 = f.x0 + f.attn_out;
    if (depth == Depth::AttentionOnly) return f;
    if (last_only) f.sel = last_rows(f.packed);
    const Matrix& x1 = f.sel.empty() ? f.x1 : (f.x1_sel = gather_rows(f.x1, f.sel));
    f.h2 = layer_norm(x1, p.ln2_gain, p.ln2_bias, f.ln2);
    f.u = affine(f.h2, p.w_ff1, p.b_ff1);
    f.g = gelu(f.u.array()).matrix();
    f.x2 = x1 + affine(f.g, p.w_ff2, p.b_ff2);
    f.hf = layer_norm(f.x2, p.lnf_gain, p.lnf_bias, f.lnf);
    return f;
}

/// Mean cross-entropy of `logits` rows against `targets`; writes d(loss)/d(logits).
double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& targets, Matrix* dlogits) {
    const Eigen::Index n = logits.rows();
    double loss = 0.0;
    if (dlogits) dlogits->resize(n, logits.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mx = logits.row(i).maxCoeff();
        Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
        const double z = e.sum();
        const int t = targets[static_cast<std::size_t>(i)];
        loss += -(logits(i, t) - mx - std::log(z));
        if (dlogits) {
            dlogits->row(i) = e / z;
            (*dlogits)(i, t) -= 1.0;
        }
    }
    if (dlogits) *dlogits /= static_cast<double>(n);
    return loss / static_cast<double>(n);
}

void backward(const ModelParams& p, const Forward& f, const Matrix& dhf, ModelParams& g) {
    const ModelConfig& cfg = p.config;
    const int d = cfg.hidden_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix dx2 = layer_norm_backward(dhf, p.lnf_gain, f.lnf, g.lnf_gain, g.lnf_bias);

    // Feed-forward sublayer.
    g.w_ff2.noalias() += f.g.transpose() * dx2;
    g.b_ff2 += dx2.colwise().sum();
    Matrix du = ((dx2 * p.w_ff2.transpose()).array() * gelu_grad(f.u.array())).matrix();
    g.w_ff1.noalias() += f.h2.transpose() * du;
    g.b_ff1 += du.colwise().sum();
    Matrix dh2 = du * p.w_ff1.transpose();
    Matrix dx1_sel = dx2 + layer_norm_backward(dh2, p.ln2_gain, f.ln2, g.ln2_gain, g.ln2_bias);
    Matrix dx1;
    if (f.sel.empty()) {
        dx1 = std::move(dx1_sel);
    } else {
        dx1 = Matrix::Zero(f.x1.rows(), d);
        for (std::size_t i = 0; i < f.sel.size(); ++i) dx1.row(f.sel[i]) = dx1_sel.row(static_cast<Eigen::Index>(i));
    }

    // Attention sublayer.
    g.w_out.noalias() += f.o.transpose() * dx1;
    g.b_out += dx1.colwise().sum();
    Matrix dout = dx1 * p.w_out.transpose();
    Matrix dq = Matrix::Zero(f.q.rows(), d);
    Matrix dk = Matrix::Zero(f.k.rows(), d);
    Matrix dv = Matrix::Zero(f.v.rows(), d);
    for (std::size_t b = 0; b < f.packed.batch(); ++b) {
        const Eigen::Index off = f.packed.offsets[b];
        const Eigen::Index len = f.packed.length(b);
        for (int h = 0; h < heads; ++h) {
            const Matrix& a = f.attn[b * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
            auto dob = dout.block(off, h * dh, len, dh);
            Matrix da = dob * f.v.block(off, h * dh, len, dh).transpose();
            dv.block(off, h * dh, len, dh).noalias() = a.transpose() * dob;
            Eigen::ArrayXd row_dot = (da.array() * a.array()).rowwise().sum();
            Matrix ds = (a.array() * (da.array().colwise() - row_dot)).matrix() * scale;
            dq.block(off, h * dh, len, dh).noalias() = ds * f.k.block(off, h * dh, len, dh);
            dk.block(off, h * dh, len, dh).noalias() = ds.transpose() * f.q.block(off, h * dh, len, dh);
        }
    }
    g.w_query.noalias() += f.h1.transpose() * dq;
    g.b_query += dq.colwise().sum();
    g.w_key.noalias() += f.h1.transpose() * dk;
    g.b_key += dk.colwise().sum();
    g.w_value.noalias() += f.h1.transpose() * dv;
    g.b_value += dv.colwise().sum();
    Matrix dh1 = dq * p.w_query.transpose() + dk * p.w_key.transpose() + dv * p.w_value.transpose();
    Matrix dx0 = dx1 + layer_norm_backward(dh1, p.ln1_gain, f.ln1, g.ln1_gain, g.ln1_bias);

    for (Eigen::Index r = 0; r < dx0.rows(); ++r) {
        g.token_embedding.row(f.packed.tokens[static_cast<std::size_t>(r)]) += dx0.row(r);
        g.position_embedding.row(f.packed.positions[static_cast<std::size_t>(r)]) += dx0.row(r);
    }
}

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
    std::normal_distribution<double> n(0.0, std);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
    return m;
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    int best = 0;
    for (Eigen::Index c = 1; c < row.size(); ++c) {
        if (row(c) > row(best)) best = static_cast<int>(c);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Training loop shared by pre-training and fine-tuning.

using AddItem = std::function<void(std::size_t, Batch&)>;

void adam_step(ModelParams& params, const ModelParams& grads, ModelParams& m, ModelParams& v, long step,
               double lr, const TrainConfig& tc) {
    auto pt = params.tensors();
    auto gt = grads.tensors();
    auto mt = m.tensors();
    auto vt = v.tensors();
    const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < pt.size(); ++i) {
        Matrix& p = *pt[i].second;
        const Matrix& g = *gt[i].second;
        Matrix& mm = *mt[i].second;
        Matrix& vv = *vt[i].second;
        mm = tc.beta1 * mm + (1.0 - tc.beta1) * g;
        vv = tc.beta2 * vv + (1.0 - tc.beta2) * g.cwiseProduct(g);
        p.array() -= lr * (mm.array() / bc1) / ((vv.array() / bc2).sqrt() + tc.adam_eps);
    }
}

TrainResult run_training(ModelParams params, std::size_t item_count, const AddItem& add_item,
                         const TrainConfig& tc) {
    tc.validate();
    if (item_count == 0) throw ValidationError("training set is empty");
    TrainResult result;
    ModelParams m = params.zeros_like();
    ModelParams v = params.zeros_like();
    ModelParams grads = params.zeros_like();

    Rng rng(derive_seed(tc.seed, 2));
    std::vector<std::size_t> order(item_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = item_count;

    const long total_steps = static_cast<long>(tc.epochs) * tc.batches_per_epoch;
    long step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        double epoch_sum = 0.0;
        for (int bi = 0; bi < tc.batches_per_epoch; ++bi) {
            Batch batch;
            for (int k = 0; k < tc.batch_size; ++k) {
                if (cursor == item_count) {
                    std::shuffle(order.begin(), order.end(), rng);
                    cursor = 0;
                }
                add_item(order[cursor++], batch);
            }
            const double loss = loss_and_gradients(params, batch, &grads);
            if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", epoch);
            epoch_sum += loss;

            if (tc.freeze_body) {
                for (auto& [name, t] : grads.tensors()) {
                    if (name != "cls.weight" && name != "cls.bias") t->setZero();
                }
            }
            if (tc.clip_norm > 0.0) {
                double sq = 0.0;
                for (auto& [name, t] : grads.tensors()) sq += t->squaredNorm();
                const double norm = std::sqrt(sq);
                if (norm > tc.clip_norm) {
                    for (auto& [name, t] : grads.tensors()) *t *= tc.clip_norm / norm;
                }
            }
            const double lr = tc.learning_rate * 0.5 *
                              (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                              static_cast<double>(total_steps)));
            ++step;
            adam_step(params, grads, m, v, step, lr, tc);
        }
        if (!params.all_finite()) throw TrainingError("non-finite parameters", epoch);
        result.epoch_loss.push_back(epoch_sum / tc.batches_per_epoch);
    }
    result.params = std::move(params);
    return result;
}

template <class Fn>
void for_chunks(std::size_t n, std::size_t chunk, Fn&& fn) {
    for (std::size_t start = 0; start < n; start += chunk) fn(start, std::min(n, start + chunk));
}

}  // namespace

void ModelConfig::validate() const {
    if (symbol_count < 2) throw ValidationError("symbol_count must be >= 2");
    if (max_input_len < 4) throw ValidationError("max_input_len must be >= 4");
    if (hidden_dim < 1 || ffn_dim < 1) throw ValidationError("hidden_dim and ffn_dim must be positive");
    if (num_heads < 1 || hidden_dim % num_heads != 0) {
        throw ValidationError("hidden_dim must be divisible by num_heads");
    }
    if (num_layers != 1) throw ValidationError("only single-block models are supported (num_layers = 1)");
    if (!(init_std > 0.0)) throw ValidationError("init_std must be positive");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    if (batches_per_epoch < 1) throw ValidationError("batches_per_epoch must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (clip_norm < 0.0) throw ValidationError("clip_norm must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ValidationError("adam_eps must be > 0");
}

std::vector<std::pair<std::string_view, Matrix*>> ModelParams::tensors() {
    return {{"tok_emb", &token_embedding}, {"pos_emb", &position_embedding},
            {"ln1.gain", &ln1_gain},       {"ln1.bias", &ln1_bias},
            {"attn.wq", &w_query},         {"attn.bq", &b_query},
            {"attn.wk", &w_key},           {"attn.bk", &b_key},
            {"attn.wv", &w_value},         {"attn.bv", &b_value},
            {"attn.wo", &w_out},           {"attn.bo", &b_out},
            {"ln2.gain", &ln2_gain},       {"ln2.bias", &ln2_bias},
            {"ff.w1", &w_ff1},             {"ff.b1", &b_ff1},
            {"ff.w2", &w_ff2},             {"ff.b2", &b_ff2},
            {"lnf.gain", &lnf_gain},       {"lnf.bias", &lnf_bias},
            {"lm.weight", &w_lm},          {"lm.bias", &b_lm},
            {"cls.weight", &w_cls},        {"cls.bias", &b_cls}};
}

std::vector<std::pair<std::string_view, const Matrix*>> ModelParams::tensors() const {
    auto mut = const_cast<ModelParams*>(this)->tensors();
    std::vector<std::pair<std::string_view, const Matrix*>> out;
    out.reserve(mut.size());
    for (auto& [name, t] : mut) out.emplace_back(name, t);
    return out;
}

bool ModelParams::all_finite() const {
    for (const auto& [name, t] : tensors()) {
        if (!t->allFinite()) return false;
    }
    return true;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams z = *this;
    for (auto& [name, t] : z.tensors()) t->setZero();
    return z;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const int d = config.hidden_dim;
    const double s = config.init_std;
    ModelParams p;
    p.config = config;
    p.token_embedding = gaussian(config.vocab_size(), d, s, rng);
    p.position_embedding = gaussian(config.max_input_len, d, s, rng);
    p.ln1_gain = Matrix::Ones(1, d);
    p.ln1_bias = Matrix::Zero(1, d);
    p.w_query = gaussian(d, d, s, rng);
    p.b_query = Matrix::Zero(1, d);
    p.w_key = gaussian(d, d, s, rng);
    p.b_key = Matrix::Zero(1, d);
    p.w_value = gaussian(d, d, s, rng);
    p.b_value = Matrix::Zero(1, d);
    p.w_out = gaussian(d, d, s, rng);
    p.b_out = Matrix::Zero(1, d);
    p.ln2_gain = Matrix::Ones(1, d);
    p.ln2_bias = Matrix::Zero(1, d);
    p.w_ff1 = gaussian(d, config.ffn_dim, s, rng);
    p.b_ff1 = Matrix::Zero(1, config.ffn_dim);
    p.w_ff2 = gaussian(config.ffn_dim, d, s, rng);
    p.b_ff2 = Matrix::Zero(1, d);
    p.lnf_gain = Matrix::Ones(1, d);
    p.lnf_bias = Matrix::Zero(1, d);
    p.w_lm = gaussian(d, config.vocab_size(), s, rng);
    p.b_lm = Matrix::Zero(1, config.vocab_size());
    p.w_cls = Matrix(0, 0);
    p.b_cls = Matrix(0, 0);
    return p;
}

void attach_classifier(ModelParams& params, int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw ValidationError("classification head needs >= 2 classes");
    Rng rng(seed);
    params.num_classes = num_classes;
    params.w_cls = gaussian(params.config.hidden_dim, num_classes, params.config.init_std, rng);
    params.b_cls = Matrix::Zero(1, num_classes);
}

std::vector<int> encode_lm_input(const ModelConfig& config, const hmm::Sequence& sequence) {
    std::vector<int> tokens;
    tokens.reserve(sequence.size());
    tokens.push_back(config.bos());
    tokens.insert(tokens.end(), sequence.begin(), sequence.end() - (sequence.empty() ? 0 : 1));
    return tokens;
}

std::vector<int> encode_example(const ModelConfig& config, const hmm::LabeledExample& ex) {
    std::vector<int> tokens;
    tokens.reserve(ex.sequence.size() + 4);
    tokens.push_back(config.bos());
    if (config.layout == InputLayout::QueryFirst) {
        tokens.push_back(ex.c1);
        tokens.push_back(ex.c2);
        tokens.push_back(config.sep());
        tokens.insert(tokens.end(), ex.sequence.begin(), ex.sequence.end());
    } else {
        tokens.insert(tokens.end(), ex.sequence.begin(), ex.sequence.end());
        tokens.push_back(config.sep());
        tokens.push_back(ex.c1);
        tokens.push_back(ex.c2);
    }
    if (static_cast<int>(tokens.size()) > config.max_input_len) {
        throw ValidationError("encoded input length " + std::to_string(tokens.size()) +
                              " exceeds max_input_len " + std::to_string(config.max_input_len));
    }
    for (int s : ex.sequence) {
        if (s < 0 || s >= config.symbol_count) throw ValidationError("sequence symbol outside vocabulary");
    }
    if (ex.c1 < 0 || ex.c1 >= config.symbol_count || ex.c2 < 0 || ex.c2 >= config.symbol_count) {
        throw ValidationError("query symbol outside vocabulary");
    }
    return tokens;
}

double loss_and_gradients(const ModelParams& params, const Batch& batch, ModelParams* grads) {
    // Without LM targets only the last position of each input reaches a loss.
    const bool last_only = batch.lm_targets.empty();
    const Forward f = forward(params, batch.inputs, Depth::Full, last_only);

    // Indices below are rows of f.hf.
    std::vector<Eigen::Index> lm_rows;
    std::vector<int> lm_targets;
    if (!last_only) {
        if (batch.lm_targets.size() != batch.inputs.size()) throw ValidationError("lm_targets size mismatch");
        for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
            const auto& tgt = batch.lm_targets[b];
            if (tgt.size() != batch.inputs[b].size()) throw ValidationError("lm_targets length mismatch");
            for (std::size_t t = 0; t < tgt.size(); ++t) {
                if (tgt[t] < 0) continue;
                if (tgt[t] >= params.config.vocab_size()) throw ValidationError("LM target outside vocabulary");
                lm_rows.push_back(f.packed.offsets[b] + static_cast<Eigen::Index>(t));
                lm_targets.push_back(tgt[t]);
            }
        }
    }
    std::vector<Eigen::Index> cls_rows;
    std::vector<int> cls_targets;
    if (!batch.class_targets.empty()) {
        if (batch.class_targets.size() != batch.inputs.size()) {
            throw ValidationError("class_targets size mismatch");
        }
        for (std::size_t b = 0; b < batch.inputs.size(); ++b) {
            const int y = batch.class_targets[b];
            if (y < 0) continue;
            if (params.num_classes == 0) throw ValidationError("no classification head attached");
            if (y >= params.num_classes) {
                throw ValidationError("label " + std::to_string(y) + " does not fit a " +
                                      std::to_string(params.num_classes) + "-class head");
            }
            cls_rows.push_back(last_only ? static_cast<Eigen::Index>(b) : f.packed.offsets[b + 1] - 1);
            cls_targets.push_back(y);
        }
    }

    Matrix dhf;
    if (grads) {
        *grads = params.zeros_like();
        dhf = Matrix::Zero(f.hf.rows(), params.config.hidden_dim);
    }
    double loss = 0.0;
    if (!lm_rows.empty()) {
        Matrix h = gather_rows(f.hf, lm_rows);
        Matrix dlogits;
        loss += softmax_cross_entropy(affine(h, params.w_lm, params.b_lm), lm_targets, grads ? &dlogits : nullptr);
        if (grads) {
            grads->w_lm.noalias() += h.transpose() * dlogits;
            grads->b_lm += dlogits.colwise().sum();
            Matrix dh = dlogits * params.w_lm.transpose();
            for (std::size_t i = 0; i < lm_rows.size(); ++i) dhf.row(lm_rows[i]) += dh.row(static_cast<Eigen::Index>(i));
        }
    }
    if (!cls_rows.empty()) {
        Matrix h = gather_rows(f.hf, cls_rows);
        Matrix dlogits;
        loss += softmax_cross_entropy(affine(h, params.w_cls, params.b_cls), cls_targets,
                                      grads ? &dlogits : nullptr);
        if (grads) {
            grads->w_cls.noalias() += h.transpose() * dlogits;
            grads->b_cls += dlogits.colwise().sum();
            Matrix dh = dlogits * params.w_cls.transpose();
            for (std::size_t i = 0; i < cls_rows.size(); ++i) dhf.row(cls_rows[i]) += dh.row(static_cast<Eigen::Index>(i));
        }
    }
    if (grads) backward(params, f, dhf, *grads);
    return loss;
}

Matrix lm_logits(const ModelParams& params, const std::vector<int>& tokens) {
    const Forward f = forward(params, {tokens});
    return affine(f.hf, params.w_lm, params.b_lm);
}

Matrix attention_weights(const ModelParams& params, const std::vector<int>& tokens, int head) {
    if (head < 0 || head >= params.config.num_heads) throw ValidationError("head index out of range");
    Forward f = forward(params, {tokens});
    return std::move(f.attn[static_cast<std::size_t>(head)]);
}

TrainResult pretrain(const std::vector<hmm::Sequence>& corpus, const ModelConfig& config, const TrainConfig& tc) {
    config.validate();
    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<int>> targets;
    inputs.reserve(corpus.size());
    targets.reserve(corpus.size());
    for (const auto& seq : corpus) {
        if (seq.empty()) throw ValidationError("pretraining corpus contains an empty sequence");
        for (int s : seq) {
            if (s < 0 || s >= config.symbol_count) throw ValidationError("corpus symbol outside vocabulary");
        }
        inputs.push_back(encode_lm_input(config, seq));
        targets.push_back(seq);
        if (static_cast<int>(inputs.back().size()) > config.max_input_len) {
            throw ValidationError("corpus sequence longer than max_input_len");
        }
    }
    AddItem add = [&](std::size_t i, Batch& batch) {
        batch.inputs.push_back(inputs[i]);
        batch.lm_targets.push_back(targets[i]);
    };
    return run_training(init_params(config, tc.seed), corpus.size(), add, tc);
}

TrainResult finetune(const ModelParams& base, const std::vector<hmm::LabeledExample>& data, hmm::TaskKind task,
                     const TrainConfig& tc) {
    const int arity = hmm::class_count(task);
    std::vector<std::vector<int>> inputs;
    inputs.reserve(data.size());
    for (const auto& ex : data) {
        if (ex.label < 0 || ex.label >= arity) {
            throw ValidationError("label " + std::to_string(ex.label) + " does not fit task " +
                                  std::string(hmm::task_name(task)) + " with " + std::to_string(arity) +
                                  " classes");
        }
        inputs.push_back(encode_example(base.config, ex));
    }
    ModelParams params = base;
    attach_classifier(params, arity, derive_seed(tc.seed, 3));
    AddItem add = [&](std::size_t i, Batch& batch) {
        batch.inputs.push_back(inputs[i]);
        batch.class_targets.push_back(data[i].label);
    };
    return run_training(std::move(params), data.size(), add, tc);
}

EmbeddingSet embed(const ModelParams& params, const std::vector<hmm::LabeledExample>& data) {
    if (!params.all_finite()) throw ValidationError("embed: parameters are not finite");
    EmbeddingSet out;
    out.values.resize(static_cast<Eigen::Index>(data.size()), params.config.hidden_dim);
    out.labels.reserve(data.size());
    for (const auto& ex : data) out.labels.push_back(ex.label);
    for_chunks(data.size(), 256, [&](std::size_t lo, std::size_t hi) {
        std::vector<std::vector<int>> inputs;
        for (std::size_t i = lo; i < hi; ++i) inputs.push_back(encode_example(params.config, data[i]));
        const Forward f = forward(params, inputs, Depth::AttentionOnly);
        const Matrix& src = params.config.embed_pre_residual ? f.attn_out : f.x1;
        for (std::size_t i = lo; i < hi; ++i) {
            out.values.row(static_cast<Eigen::Index>(i)) = src.row(f.packed.offsets[i - lo + 1] - 1);
        }
    });
    return out;
}

std::vector<int> predict(const ModelParams& params, const std::vector<hmm::LabeledExample>& data) {
    if (params.num_classes == 0) throw ValidationError("predict: no classification head");
    std::vector<int> out(data.size());
    for_chunks(data.size(), 256, [&](std::size_t lo, std::size_t hi) {
        std::vector<std::vector<int>> inputs;
        for (std::size_t i = lo; i < hi; ++i) inputs.push_back(encode_example(params.config, data[i]));
        const Forward f = forward(params, inputs, Depth::Full, true);
        Matrix logits = affine(f.hf, params.w_cls, params.b_cls);
        for (std::size_t i = lo; i < hi; ++i) out[i] = argmax_lowest(logits.row(static_cast<Eigen::Index>(i - lo)));
    });
    return out;
}

Metrics classification_metrics(const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.empty()) throw ValidationError("metrics: empty data");
    if (truth.size() != predicted.size()) throw ValidationError("metrics: size mismatch");
    std::set<int> classes(truth.begin(), truth.end());
    classes.insert(predicted.begin(), predicted.end());
    long correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i];
    double macro = 0.0;
    long tp_sum = 0, fp_sum = 0, fn_sum = 0;
    for (int c : classes) {
        long tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            tp += truth[i] == c && predicted[i] == c;
            fp += truth[i] != c && predicted[i] == c;
            fn += truth[i] == c && predicted[i] != c;
        }
        const long denom = 2 * tp + fp + fn;
        macro += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn;
    }
    Metrics m;
    m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
    m.f1_micro = 2.0 * static_cast<double>(tp_sum) / static_cast<double>(2 * tp_sum + fp_sum + fn_sum);
    m.f1_macro = macro / static_cast<double>(classes.size());
    return m;
}

Metrics eval_metrics(const ModelParams& params, const std::vector<hmm::LabeledExample>& data) {
    if (data.empty()) throw ValidationError("eval_metrics: empty data");
    std::vector<int> truth;
    truth.reserve(data.size());
    for (const auto& ex : data) truth.push_back(ex.label);
    return classification_metrics(truth, predict(params, data));
}

std::vector<double> sequence_log_likelihood(const ModelParams& params, const std::vector<hmm::Sequence>& sequences) {
    std::vector<double> out(sequences.size(), 0.0);
    for_chunks(sequences.size(), 256, [&](std::size_t lo, std::size_t hi) {
        std::vector<std::vector<int>> inputs;
        for (std::size_t i = lo; i < hi; ++i) {
            if (sequences[i].empty()) throw ValidationError("sequence_log_likelihood: empty sequence");
            for (int s : sequences[i]) {
                if (s < 0 || s >= params.config.symbol_count) throw ValidationError("symbol outside vocabulary");
            }
            inputs.push_back(encode_lm_input(params.config, sequences[i]));
        }
        const Forward f = forward(params, inputs);
        Matrix logits = affine(f.hf, params.w_lm, params.b_lm);
        for (std::size_t i = lo; i < hi; ++i) {
            const auto& seq = sequences[i];
            double total = 0.0;
            for (std::size_t t = 0; t < seq.size(); ++t) {
                const auto row = logits.row(f.packed.offsets[i - lo] + static_cast<Eigen::Index>(t));
                const double mx = row.maxCoeff();
                total += row(seq[t]) - mx - std::log((row.array() - mx).exp().sum());
            }
            out[i] = total;
        }
    });
    return out;
}

}  // namespace taskgraph::nanoformer
