#pragma once

#include <vector>

#include "taskgraph/common.hpp"

namespace taskgraph::simplex {

enum class Sense { LessEqual, Equal, GreaterEqual };

/// minimize c^T x subject to A x (sense) b, x >= 0.
struct LinearProgram {
    Matrix a;
    Vector b;
    Vector c;
    std::vector<Sense> sense;  // one per row of a
};

struct Solution {
    Vector x;
    double objective = 0.0;
    long iterations = 0;
};

/// Dense two-phase tableau simplex with Bland's anti-cycling rule.
/// Throws SolverError when infeasible, unbounded, or out of iterations.
Solution solve(const LinearProgram& lp, long max_iterations = 200000, double tolerance = 1e-10);

}  // namespace taskgraph::simplex
