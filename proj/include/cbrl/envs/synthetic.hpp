#pragma once

#include <cstdint>

#include "cbrl/problem.hpp"

namespace cbrl {

// Small randomized CMDP family with closed-form derivative tables: transition
// logits and rewards affine in x inside a softmax/linear parameterization, so
// every d_* table is exact by construction. Used for estimator validation and
// stationarity experiments.
struct SyntheticSpec {
    int n_states = 3;
    int n_actions = 2;
    int dim = 2;
    int n_contexts = 2;
    double gamma = 0.9;
    double lambda = 1.0;
    std::uint64_t instance_seed = 12345;
    bool x_dep_transitions = true;
    bool x_dep_init = false;   // keep false for baselines that ignore d_x mu
    double coupling = 0.3;     // scale of the x -> transition-logit coupling
    double rho = 0.1;          // quadratic weight of the native upper loss
};

TabularCmdp make_synthetic_cmdp(const SyntheticSpec& spec, const Vec& x, int ctx);

// Native smooth upper loss f(x,pi,xi) = rho/2 |x|^2 + sum_{s,a} C_xi(s,a) pi(a|s).
BilevelProblem make_synthetic_problem(const SyntheticSpec& spec);

// Decomposable variant: leader reward rbar affine in x, upper loss induced.
BilevelProblem make_synthetic_decomposable(const SyntheticSpec& spec);

}  // namespace cbrl
