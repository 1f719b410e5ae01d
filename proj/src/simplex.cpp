#include "taskgraph/simplex.hpp"

#include <cmath>
#include <limits>

#include "taskgraph/error.hpp"

namespace taskgraph::simplex {
namespace {

constexpr double kPivotTolerance = 1e-9;
constexpr double kFeasibilityTolerance = 1e-9;
constexpr long kReinvertEvery = 50;

/// Dense tableau over [A | b] with an objective row of reduced costs. The
/// original columns are kept so the tableau can be rebuilt from the current
/// basis, which bounds the round-off accumulated by long pivot sequences.
class Tableau {
public:
    Tableau(Matrix a, Vector b, std::vector<Eigen::Index> basis)
        : a0_(std::move(a)), b0_(std::move(b)), t_(Matrix::Zero(a0_.rows() + 1, a0_.cols() + 1)),
          basis_(std::move(basis)) {
        t_.topLeftCorner(rows(), cols()) = a0_;
        t_.col(cols()).head(rows()) = b0_;
    }

    Eigen::Index rows() const { return a0_.rows(); }
    Eigen::Index cols() const { return a0_.cols(); }
    double at(Eigen::Index r, Eigen::Index c) const { return t_(r, c); }
    double rhs(Eigen::Index r) const { return t_(r, cols()); }
    double cost(Eigen::Index c) const { return t_(rows(), c); }
    double objective() const { return -t_(rows(), cols()); }
    const std::vector<Eigen::Index>& basis() const { return basis_; }

    void pivot(Eigen::Index r, Eigen::Index c) {
        t_.row(r) /= t_(r, c);
        for (Eigen::Index i = 0; i <= rows(); ++i) {
            if (i == r) continue;
            const double f = t_(i, c);
            if (f != 0.0) t_.row(i) -= f * t_.row(r);
        }
        basis_[static_cast<std::size_t>(r)] = c;
        clamp_rhs();
    }

    /// Sets the objective row to `costs` and prices out the basic columns.
    void set_objective(const Vector& costs) {
        costs_ = costs;
        price_out();
    }

    /// Rebuilds the tableau as B^-1 [A | b]. Keeps the current one if B is singular.
    void reinvert() {
        Matrix b(rows(), rows());
        for (Eigen::Index r = 0; r < rows(); ++r) b.col(r) = a0_.col(basis_[static_cast<std::size_t>(r)]);
        Eigen::FullPivLU<Matrix> lu(b);
        if (!lu.isInvertible()) return;
        t_.topLeftCorner(rows(), cols()) = lu.solve(a0_);
        t_.col(cols()).head(rows()) = lu.solve(b0_);
        clamp_rhs();
        price_out();
    }

    /// Pivots over columns [0, allowed), entering by Bland's rule. Returns false when unbounded.
    bool optimize(Eigen::Index allowed, long& iterations, long max_iterations, double tol) {
        long since_reinvert = 0;
        while (true) {
            Eigen::Index enter = -1;
            for (Eigen::Index c = 0; c < allowed; ++c) {
                if (cost(c) < -tol) {
                    enter = c;
                    break;
                }
            }
            if (enter < 0) return true;
            if (iterations >= max_iterations) throw SolverError("simplex iteration limit reached", iterations);
            // Harris two-pass ratio test: allow a feasibility slack when bounding
            // the step, then take the largest pivot among the admissible rows.
            double bound = std::numeric_limits<double>::infinity();
            for (Eigen::Index r = 0; r < rows(); ++r) {
                const double a = at(r, enter);
                if (a > kPivotTolerance) bound = std::min(bound, (rhs(r) + kFeasibilityTolerance) / a);
            }
            Eigen::Index leave = -1;
            for (Eigen::Index r = 0; r < rows(); ++r) {
                const double a = at(r, enter);
                if (a <= kPivotTolerance || rhs(r) / a > bound) continue;
                if (leave < 0 || a > at(leave, enter) ||
                    (a == at(leave, enter) &&
                     basis_[static_cast<std::size_t>(r)] < basis_[static_cast<std::size_t>(leave)])) {
                    leave = r;
                }
            }
            if (leave < 0) return false;
            pivot(leave, enter);
            ++iterations;
            if (++since_reinvert == kReinvertEvery) {
                reinvert();
                since_reinvert = 0;
            }
        }
    }

private:
    void price_out() {
        t_.row(rows()).setZero();
        t_.row(rows()).head(costs_.size()) = costs_.transpose();
        for (Eigen::Index r = 0; r < rows(); ++r) {
            const double f = t_(rows(), basis_[static_cast<std::size_t>(r)]);
            if (f != 0.0) t_.row(rows()) -= f * t_.row(r);
        }
    }

    /// Basic values are non-negative in exact arithmetic; drop round-off below zero.
    void clamp_rhs() {
        for (Eigen::Index r = 0; r < rows(); ++r) {
            if (t_(r, cols()) < 0.0) t_(r, cols()) = 0.0;
        }
    }

    Matrix a0_;
    Vector b0_;
    Matrix t_;
    Vector costs_;
    std::vector<Eigen::Index> basis_;
};

}  // namespace

Solution solve(const LinearProgram& lp, long max_iterations, double tolerance) {
    const Eigen::Index m = lp.a.rows();
    const Eigen::Index n = lp.a.cols();
    if (lp.b.size() != m || lp.c.size() != n || static_cast<Eigen::Index>(lp.sense.size()) != m) {
        throw ValidationError("linear program has inconsistent shapes");
    }
    if (!lp.a.allFinite() || !lp.b.allFinite() || !lp.c.allFinite()) {
        throw ValidationError("linear program has non-finite coefficients");
    }

    // Normalise to b >= 0, then count slack and artificial columns.
    Matrix a = lp.a;
    Vector b = lp.b;
    std::vector<Sense> sense = lp.sense;
    Eigen::Index slack_count = 0, art_count = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        if (b(i) < 0) {
            a.row(i) *= -1.0;
            b(i) = -b(i);
            auto& s = sense[static_cast<std::size_t>(i)];
            if (s == Sense::LessEqual) s = Sense::GreaterEqual;
            else if (s == Sense::GreaterEqual) s = Sense::LessEqual;
        }
        const Sense s = sense[static_cast<std::size_t>(i)];
        if (s != Sense::Equal) ++slack_count;
        if (s != Sense::LessEqual) ++art_count;
    }

    const Eigen::Index first_art = n + slack_count;
    Matrix full = Matrix::Zero(m, first_art + art_count);
    full.leftCols(n) = a;
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(m));
    Eigen::Index next_slack = n, next_art = first_art;
    for (Eigen::Index i = 0; i < m; ++i) {
        auto& slot = basis[static_cast<std::size_t>(i)];
        switch (sense[static_cast<std::size_t>(i)]) {
            case Sense::LessEqual:
                full(i, next_slack) = 1.0;
                slot = next_slack++;
                break;
            case Sense::GreaterEqual:
                full(i, next_slack++) = -1.0;
                full(i, next_art) = 1.0;
                slot = next_art++;
                break;
            case Sense::Equal:
                full(i, next_art) = 1.0;
                slot = next_art++;
                break;
        }
    }
    Tableau tab(std::move(full), b, std::move(basis));

    long iterations = 0;
    if (art_count > 0) {
        Vector phase1 = Vector::Zero(tab.cols());
        phase1.tail(art_count).setOnes();
        tab.set_objective(phase1);
        tab.optimize(tab.cols(), iterations, max_iterations, tolerance);
        tab.reinvert();
        if (tab.objective() > 1e-9 * std::max(1.0, b.lpNorm<1>())) {
            throw SolverError("linear program is infeasible", iterations);
        }
        // Drive zero-level artificials out of the basis through their largest entry.
        for (Eigen::Index r = 0; r < m; ++r) {
            if (tab.basis()[static_cast<std::size_t>(r)] < first_art) continue;
            Eigen::Index best = -1;
            double best_abs = kPivotTolerance;
            for (Eigen::Index c = 0; c < first_art; ++c) {
                if (std::abs(tab.at(r, c)) > best_abs) {
                    best_abs = std::abs(tab.at(r, c));
                    best = c;
                }
            }
            // A row with no usable column is redundant; its artificial stays basic at zero.
            if (best >= 0) tab.pivot(r, best);
        }
    }

    Vector phase2 = Vector::Zero(tab.cols());
    phase2.head(n) = lp.c;
    tab.set_objective(phase2);
    if (!tab.optimize(first_art, iterations, max_iterations, tolerance)) {
        throw SolverError("linear program is unbounded", iterations);
    }
    tab.reinvert();

    Solution sol;
    sol.x = Vector::Zero(n);
    for (Eigen::Index r = 0; r < m; ++r) {
        const Eigen::Index col = tab.basis()[static_cast<std::size_t>(r)];
        if (col < n) sol.x(col) = tab.rhs(r);
    }
    sol.objective = lp.c.dot(sol.x);
    sol.iterations = iterations;
    return sol;
}

}  // namespace taskgraph::simplex
