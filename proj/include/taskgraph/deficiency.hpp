#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "taskgraph/common.hpp"

namespace taskgraph::deficiency {

inline constexpr double kStochasticTolerance = 1e-12;

/// Throws ValidationError unless `p` is non-empty, non-negative and sums to 1.
void validate_distribution(const Vector& p, double tolerance = kStochasticTolerance);

/// Row-stochastic matrix: rows are conditioning values, columns are outcomes.
class FiniteKernel {
public:
    FiniteKernel() = default;
    /// Rejects negative entries, all-zero rows and rows not summing to 1.
    explicit FiniteKernel(Matrix m, double tolerance = kStochasticTolerance);

    static FiniteKernel identity(Eigen::Index n);
    /// Every row equals `row`.
    static FiniteKernel constant(Eigen::Index rows, const Vector& row);

    const Matrix& matrix() const { return m_; }
    Eigen::Index inputs() const { return m_.rows(); }
    Eigen::Index outputs() const { return m_.cols(); }

private:
    Matrix m_;
};

/// Half the L1 distance.
double tv_distance(const Vector& p, const Vector& q);

/// (m o k)(z|y) = sum_w m(z|w) k(w|y).
FiniteKernel compose(const FiniteKernel& m, const FiniteKernel& k);

struct DeficiencyResult {
    double delta = 0.0;
    FiniteKernel witness;  // source outcomes -> target outcomes
    std::string status;
    long iterations = 0;
};

/// min over row-stochastic M of max_y TV((M o source)(.|y), target(.|y)).
DeficiencyResult deficiency(const FiniteKernel& source, const FiniteKernel& target);

/// Largest row-wise TV between `witness o source` and `target`.
double sup_tv(const FiniteKernel& witness, const FiniteKernel& source, const FiniteKernel& target);

/// Optimal 0-1 risk when decoding y from one draw of kernel(.|y), y ~ prior.
double bayes_risk_01(const Vector& prior, const FiniteKernel& kernel);

/// Mutual information in nats of a joint probability table.
double discrete_mi(const Matrix& joint);

struct Quantization {
    std::vector<int> assignments;
    Matrix centroids;  // k x d
};

/// k-means with k-means++ seeding and a fixed 50 Lloyd iterations.
Quantization quantize(const Matrix& x, int k, std::uint64_t seed);

/// P(bin | label) from co-occurrence counts. Every label in [0, num_labels) must occur.
FiniteKernel empirical_kernel(const std::vector<int>& labels, const std::vector<int>& bins, int num_labels,
                              int num_bins);

nlohmann::json to_json(const FiniteKernel& k);
FiniteKernel kernel_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DeficiencyResult& r);

}  // namespace taskgraph::deficiency
