#include "taskgraph/deficiency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "taskgraph/error.hpp"
#include "taskgraph/simplex.hpp"

namespace taskgraph::deficiency {
namespace {

double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Eigen::Index distinct_rows(const Matrix& x) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), 0);
    auto less = [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
        }
        return false;
    };
    std::sort(order.begin(), order.end(), less);
    Eigen::Index count = order.empty() ? 0 : 1;
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (less(order[i - 1], order[i])) ++count;
    }
    return count;
}

}  // namespace

void validate_distribution(const Vector& p, double tolerance) {
    if (p.size() == 0) throw ValidationError("distribution is empty");
    if (!p.allFinite()) throw ValidationError("distribution has non-finite entries");
    if (p.minCoeff() < 0.0) throw ValidationError("distribution has negative entries");
    if (std::abs(p.sum() - 1.0) > tolerance) throw ValidationError("distribution does not sum to 1");
}

FiniteKernel::FiniteKernel(Matrix m, double tolerance) : m_(std::move(m)) {
    if (m_.rows() == 0 || m_.cols() == 0) throw ValidationError("kernel must be non-empty");
    for (Eigen::Index r = 0; r < m_.rows(); ++r) {
        const Vector row = m_.row(r).transpose();
        if (row.allFinite() && row.minCoeff() >= 0.0 && row.sum() == 0.0) {
            throw ValidationError("kernel row " + std::to_string(r) + " is all zero");
        }
        try {
            validate_distribution(row, tolerance);
        } catch (const ValidationError& e) {
            throw ValidationError("kernel row " + std::to_string(r) + ": " + e.what());
        }
    }
}

FiniteKernel FiniteKernel::identity(Eigen::Index n) { return FiniteKernel(Matrix::Identity(n, n)); }

FiniteKernel FiniteKernel::constant(Eigen::Index rows, const Vector& row) {
    return FiniteKernel(Matrix(row.transpose().replicate(rows, 1)));
}

double tv_distance(const Vector& p, const Vector& q) {
    if (p.size() != q.size()) throw ValidationError("TV distance needs equal support sizes");
    return 0.5 * (p - q).lpNorm<1>();
}

FiniteKernel compose(const FiniteKernel& m, const FiniteKernel& k) {
    if (m.inputs() != k.outputs()) {
        throw ValidationError("cannot compose: kernel has " + std::to_string(k.outputs()) +
                              " outcomes but the outer kernel expects " + std::to_string(m.inputs()));
    }
    // Rounding can push sums a few ulps away from 1; the product of stochastic matrices is stochastic.
    return FiniteKernel(k.matrix() * m.matrix(), 1e-9);
}

double sup_tv(const FiniteKernel& witness, const FiniteKernel& source, const FiniteKernel& target) {
    const Matrix composed = source.matrix() * witness.matrix();
    if (composed.rows() != target.inputs() || composed.cols() != target.outputs()) {
        throw ValidationError("witness does not map the source onto the target's outcome space");
    }
    double worst = 0.0;
    for (Eigen::Index y = 0; y < composed.rows(); ++y) {
        worst = std::max(worst, 0.5 * (composed.row(y) - target.matrix().row(y)).lpNorm<1>());
    }
    return worst;
}

DeficiencyResult deficiency(const FiniteKernel& source, const FiniteKernel& target) {
    if (source.inputs() != target.inputs()) {
        throw ValidationError("deficiency needs kernels over the same conditioning space");
    }
    const Eigen::Index ny = source.inputs(), nw = source.outputs(), nz = target.outputs();
    const Eigen::Index m_vars = nw * nz, e_vars = ny * nz;
    const Eigen::Index n = m_vars + e_vars + 1;
    const Eigen::Index t_col = n - 1;
    auto m_col = [&](Eigen::Index w, Eigen::Index z) { return w * nz + z; };
    auto e_col = [&](Eigen::Index y, Eigen::Index z) { return m_vars + y * nz + z; };

    const Eigen::Index rows = nw + 2 * e_vars + ny;
    simplex::LinearProgram lp;
    lp.a = Matrix::Zero(rows, n);
    lp.b = Vector::Zero(rows);
    lp.c = Vector::Zero(n);
    lp.c(t_col) = 1.0;
    lp.sense.reserve(static_cast<std::size_t>(rows));

    Eigen::Index r = 0;
    for (Eigen::Index w = 0; w < nw; ++w, ++r) {
        for (Eigen::Index z = 0; z < nz; ++z) lp.a(r, m_col(w, z)) = 1.0;
        lp.b(r) = 1.0;
        lp.sense.push_back(simplex::Sense::Equal);
    }
    const Matrix& k = source.matrix();
    const Matrix& t = target.matrix();
    for (Eigen::Index y = 0; y < ny; ++y) {
        for (Eigen::Index z = 0; z < nz; ++z) {
            for (double sign : {1.0, -1.0}) {
                for (Eigen::Index w = 0; w < nw; ++w) lp.a(r, m_col(w, z)) = sign * k(y, w);
                lp.a(r, e_col(y, z)) = -1.0;
                lp.b(r) = sign * t(y, z);
                lp.sense.push_back(simplex::Sense::LessEqual);
                ++r;
            }
        }
    }
    for (Eigen::Index y = 0; y < ny; ++y, ++r) {
        for (Eigen::Index z = 0; z < nz; ++z) lp.a(r, e_col(y, z)) = 0.5;
        lp.a(r, t_col) = -1.0;
        lp.sense.push_back(simplex::Sense::LessEqual);
    }

    simplex::Solution sol;
    try {
        sol = simplex::solve(lp);
    } catch (const SolverError& e) {
        // Valid kernels always admit a feasible, bounded program.
        throw SolverError(std::string("deficiency program failed: ") + e.what(), e.iterations());
    }

    Matrix witness(nw, nz);
    for (Eigen::Index w = 0; w < nw; ++w) {
        for (Eigen::Index z = 0; z < nz; ++z) witness(w, z) = std::max(0.0, sol.x(m_col(w, z)));
        witness.row(w) /= witness.row(w).sum();
    }
    DeficiencyResult out;
    out.witness = FiniteKernel(std::move(witness), 1e-9);
    out.delta = std::clamp(sup_tv(out.witness, source, target), 0.0, 1.0);
    out.status = "optimal";
    out.iterations = sol.iterations;
    return out;
}

double bayes_risk_01(const Vector& prior, const FiniteKernel& kernel) {
    validate_distribution(prior, 1e-9);
    if (prior.size() != kernel.inputs()) throw ValidationError("prior length must equal the kernel row count");
    const Matrix weighted = prior.asDiagonal() * kernel.matrix();
    return 1.0 - weighted.colwise().maxCoeff().sum();
}

double discrete_mi(const Matrix& joint) {
    if (joint.size() == 0) throw ValidationError("joint table is empty");
    if (!joint.allFinite() || joint.minCoeff() < 0.0) throw ValidationError("joint table has negative entries");
    if (std::abs(joint.sum() - 1.0) > 1e-9) throw ValidationError("joint table does not sum to 1");
    const Vector py = joint.rowwise().sum();
    const Vector pz = joint.colwise().sum().transpose();
    double mi = 0.0;
    for (Eigen::Index y = 0; y < joint.rows(); ++y) {
        for (Eigen::Index z = 0; z < joint.cols(); ++z) {
            const double p = joint(y, z);
            if (p > 0.0) mi += p * std::log(p / (py(y) * pz(z)));
        }
    }
    return std::max(0.0, mi);
}

Quantization quantize(const Matrix& x, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("quantize needs k >= 2");
    if (x.rows() < k) throw ValidationError("quantize needs at least k rows");
    if (!x.allFinite()) throw ValidationError("quantize input has non-finite values");
    if (distinct_rows(x) < k) throw ValidationError("fewer distinct rows than k");

    const Eigen::Index n = x.rows();
    Rng rng(seed);
    Matrix centroids(k, x.cols());
    centroids.row(0) = x.row(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n)));
    Vector d2 = (x.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        double u = unit_uniform(rng) * total;
        Eigen::Index pick = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (d2(i) <= 0.0) continue;
            pick = i;
            u -= d2(i);
            if (u < 0.0) break;
        }
        centroids.row(c) = x.row(pick);
        d2 = d2.cwiseMin((x.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    auto assign_all = [&] {
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best;
            (centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
            assign[static_cast<std::size_t>(i)] = static_cast<int>(best);
        }
    };
    for (int iter = 0; iter < 50; ++iter) {
        assign_all();
        Matrix sums = Matrix::Zero(k, x.cols());
        std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
            ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
            }
        }
    }
    assign_all();
    return {std::move(assign), std::move(centroids)};
}

FiniteKernel empirical_kernel(const std::vector<int>& labels, const std::vector<int>& bins, int num_labels,
                              int num_bins) {
    if (labels.size() != bins.size()) throw ValidationError("labels and bins differ in length");
    if (num_labels < 1 || num_bins < 1) throw ValidationError("kernel needs at least one label and bin");
    Matrix counts = Matrix::Zero(num_labels, num_bins);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_labels) throw ValidationError("label out of range at row " + std::to_string(i));
        if (bins[i] < 0 || bins[i] >= num_bins) throw ValidationError("bin out of range at row " + std::to_string(i));
        counts(labels[i], bins[i]) += 1.0;
    }
    for (int y = 0; y < num_labels; ++y) {
        const double total = counts.row(y).sum();
        if (total == 0.0) throw ValidationError("label " + std::to_string(y) + " never occurs");
        counts.row(y) /= total;
    }
    return FiniteKernel(std::move(counts), 1e-9);
}

nlohmann::json to_json(const FiniteKernel& k) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < k.inputs(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < k.outputs(); ++c) row.push_back(k.matrix()(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

FiniteKernel kernel_from_json(const nlohmann::json& doc) {
    if (!doc.is_array() || doc.empty()) throw ValidationError("kernel must be a non-empty array of rows");
    const std::size_t cols = doc.front().is_array() ? doc.front().size() : 0;
    Matrix m(static_cast<Eigen::Index>(doc.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < doc.size(); ++r) {
        const auto& row = doc[r];
        if (!row.is_array() || row.size() != cols) throw ValidationError("kernel rows must be arrays of equal length");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!row[c].is_number()) throw ValidationError("kernel entries must be numbers");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c].get<double>();
        }
    }
    // Decimal text rarely round-trips sums exactly; accept JSON-precision rows.
    return FiniteKernel(std::move(m), 1e-9);
}

nlohmann::json to_json(const DeficiencyResult& r) {
    return {{"delta", r.delta}, {"witness", to_json(r.witness)}, {"status", r.status}, {"iterations", r.iterations}};
}

}  // namespace taskgraph::deficiency
