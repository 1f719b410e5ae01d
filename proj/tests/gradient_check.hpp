#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "taskgraph/nanoformer.hpp"

namespace taskgraph::testing {

struct BlockError {
    std::string name;
    double relative_error = 0.0;
};

/// Central differences over every parameter entry against loss_and_gradients.
inline std::vector<BlockError> gradient_check(const nanoformer::ModelParams& params, const nanoformer::Batch& batch,
                                              double h = 1e-4) {
    nanoformer::ModelParams grads = params.zeros_like();
    nanoformer::loss_and_gradients(params, batch, &grads);
    nanoformer::ModelParams probe = params;
    auto probe_tensors = probe.tensors();
    const auto grad_tensors = std::as_const(grads).tensors();
    std::vector<BlockError> out;
    for (std::size_t k = 0; k < probe_tensors.size(); ++k) {
        Matrix& w = *probe_tensors[k].second;
        const Matrix& g = *grad_tensors[k].second;
        if (w.size() == 0) continue;
        Matrix numeric(w.rows(), w.cols());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double saved = w.data()[i];
            w.data()[i] = saved + h;
            const double up = nanoformer::loss_and_gradients(probe, batch, nullptr);
            w.data()[i] = saved - h;
            const double down = nanoformer::loss_and_gradients(probe, batch, nullptr);
            w.data()[i] = saved;
            numeric.data()[i] = (up - down) / (2 * h);
        }
        // Blocks with an identically zero gradient (the key bias under softmax shift
        // invariance) are judged by absolute error through the floor.
        const double denom = std::max(g.norm() + numeric.norm(), 1e-6);
        out.push_back({std::string(probe_tensors[k].first), (g - numeric).norm() / denom});
    }
    return out;
}

/// Small model and mixed batches used by the gradient check.
struct GradientFixture {
    nanoformer::ModelParams params;
    nanoformer::Batch lm_batch;
    nanoformer::Batch cls_batch;
};

inline GradientFixture gradient_fixture(std::uint64_t seed = 1) {
    nanoformer::ModelConfig cfg;
    cfg.symbol_count = 4;
    cfg.max_input_len = 12;
    cfg.hidden_dim = 8;
    cfg.num_heads = 2;
    cfg.ffn_dim = 16;
    cfg.init_std = 0.5;
    GradientFixture f;
    f.params = nanoformer::init_params(cfg, seed);
    nanoformer::attach_classifier(f.params, 3, seed + 1);
    // Non-trivial layer-norm and bias values so their gradients are exercised.
    Rng rng(seed + 2);
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto& entry : f.params.tensors()) {
        Matrix& t = *entry.second;
        if (t.rows() != 1) continue;
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += n(rng);
    }
    f.lm_batch.inputs = {{4, 0, 1, 2, 3}, {4, 2, 2}, {4, 1, 0, 3, 3, 1, 2}};
    f.lm_batch.lm_targets = {{0, 1, 2, 3, 1}, {2, 2, 0}, {1, 0, 3, 3, 1, 2, 0}};
    f.cls_batch.inputs = {{4, 0, 1, 5, 2, 3}, {4, 2, 2, 5, 1}, {4, 3, 0, 5, 0, 1, 1, 2}};
    f.cls_batch.class_targets = {0, 2, 1};
    return f;
}

}  // namespace taskgraph::testing
