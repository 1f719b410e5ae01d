#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "taskgraph/common.hpp"

namespace taskgraph::density {

/// Hyper-parameters of the Gaussian-mixture entropy estimators.
struct KnifeConfig {
    int num_modes = 8;
    int marginal_epochs = 100;
    double marginal_lr = 1e-4;
    int marginal_batch = 16;
    int conditional_epochs = 100;
    double conditional_lr = 1e-3;
    int conditional_batch = 32;
    int hidden_dim = 128;  // width of both hidden layers of the conditional network
    double variance_floor = 1e-4;
    double eval_fraction = 0.1;
    bool standardize = true;
    /// Which conditional mixture parameters depend on the conditioning input.
    bool cond_weights = true;
    bool cond_means = true;
    bool cond_variances = true;

    void validate() const;
};

nlohmann::json to_json(const KnifeConfig& cfg);
/// Unknown keys are rejected.
KnifeConfig knife_from_json(const nlohmann::json& doc);

/// Diagonal Gaussian mixture. Variances are stored through an unconstrained
/// parameter v with variance = floor + exp(v).
struct GmmModel {
    Vector weights;          // modes
    Matrix means;            // modes x d
    Matrix diag_variances;   // modes x d
    double variance_floor = 1e-4;

    int modes() const { return static_cast<int>(weights.size()); }
    int dim() const { return static_cast<int>(means.cols()); }
};

/// Log-density of every row of `x` (N x d).
Vector log_density(const GmmModel& gmm, const Matrix& x);

/// Maximum-likelihood fit by Adam on minibatches. Means start at training
/// rows, variances at the per-dimension data variance, weights uniform.
/// Throws FitError when every dimension of `train` has zero variance.
GmmModel fit_marginal(const Matrix& train, const KnifeConfig& cfg, std::uint64_t seed);

/// Cross-entropy -(1/N) sum log q(x_i) in nats.
double entropy(const GmmModel& gmm, const Matrix& eval);
double entropy(const GmmModel& gmm, const EmbeddingSet& eval);

/// Conditional mixture q(target | source): a two-hidden-layer tanh network
/// mapping a source row to mixture logits, means and variance parameters.
struct CondGmm {
    int source_dim = 0;
    int target_dim = 0;
    int modes = 0;
    double variance_floor = 1e-4;
    bool cond_weights = true, cond_means = true, cond_variances = true;
    Matrix w1, w2, w3;  // (in x hidden), (hidden x hidden), (hidden x outputs)
    Vector b1, b2, b3;

    int outputs() const { return modes * (1 + 2 * target_dim); }
};

struct MixtureParams {
    Vector weights;         // modes
    Matrix means;           // modes x target_dim
    Matrix diag_variances;  // modes x target_dim
};

/// Mixture emitted for one source row.
MixtureParams conditional_mixture(const CondGmm& model, const Vector& source_row);

/// log q(target_i | source_i) for aligned rows.
Vector conditional_log_density(const CondGmm& model, const Matrix& source, const Matrix& target);

CondGmm fit_conditional(const Matrix& source, const Matrix& target, const KnifeConfig& cfg,
                        std::uint64_t seed);

double conditional_entropy(const CondGmm& model, const Matrix& source, const Matrix& target);

/// Row split and standardization shared by every estimate built from one seed.
struct Split {
    std::vector<Eigen::Index> train, eval;
};
Split make_split(Eigen::Index rows, double eval_fraction, std::uint64_t seed);

/// Per-dimension z-scoring with statistics from the training rows.
/// Zero-variance dimensions are centred only.
struct Standardizer {
    Vector mean, scale;
    static Standardizer fit(const Matrix& train);
    Matrix apply(const Matrix& x) const;
};

Matrix take_rows(const Matrix& x, const std::vector<Eigen::Index>& rows);

struct IsEstimate {
    double value = 0.0;  // marginal_entropy - conditional_entropy
    double marginal_entropy = 0.0;
    double conditional_entropy = 0.0;
    std::string source_id;
    std::string target_id;
    int layer = 0;
    std::uint64_t seed = 0;
    bool negative = false;
};

/// Held-out marginal entropy of `target` under the split derived from `seed`.
double heldout_marginal_entropy(const Matrix& target, const KnifeConfig& cfg, std::uint64_t seed);
/// Held-out conditional entropy of `target` given `source`, same split.
double heldout_conditional_entropy(const Matrix& source, const Matrix& target,
                                   const KnifeConfig& cfg, std::uint64_t seed);

/// IS(source -> target) = h(target) - h(target | source), both on held-out rows.
IsEstimate information_sufficiency(const EmbeddingSet& source, const EmbeddingSet& target,
                                   const KnifeConfig& cfg, std::uint64_t seed);
IsEstimate make_estimate(double marginal, double conditional);

nlohmann::json to_json(const IsEstimate& est);
/// Appends one JSON line per estimate.
void append_ledger(const std::filesystem::path& path, const std::vector<IsEstimate>& rows);

}  // namespace taskgraph::density
