#pragma once

#include <functional>
#include <optional>
#include <utility>

#include "cbrl/types.hpp"

namespace cbrl {

// General-form upper-level loss f(x, pi, xi) with partial derivatives in x and
// in the policy table. d_pi returns an S*A table of df/dpi(a|s). The library's
// outer loop canonically *maximizes* leader return, and a loss is its
// negation; the sign is applied once inside the optimizers.
struct UpperLoss {
    std::function<double(const Vec& x, const Policy& pi, int ctx)> eval;
    std::function<Vec(const Vec& x, const Policy& pi, int ctx)> d_x;
    std::function<Vec(const Vec& x, const Policy& pi, int ctx)> d_pi;
};

// A contextual bilevel problem instance: finitely many contexts xi with
// sampling weights, a factory producing the realized lower-level MDP for
// (x, xi), and an upper loss. Decomposable problems additionally expose the
// leader reward table rbar(s,a) and its x-Jacobian, enabling the
// trajectory-only estimators; for these, `upper` is typically the induced
// loss f = -E[sum_t gamma^t rbar].
struct BilevelProblem {
    int d = 0;
    Vec context_weights;  // sums to 1
    std::function<TabularCmdp(const Vec& x, int ctx)> make_cmdp;

    // Decomposable structure (optional): S*A and S*A*d tables.
    std::function<Vec(const Vec& x, int ctx)> leader_reward;
    std::function<Vec(const Vec& x, int ctx)> d_leader_reward;

    UpperLoss upper;

    Vec x0;
    std::optional<std::pair<Vec, Vec>> box;  // coordinate-wise projection bounds

    bool decomposable() const { return static_cast<bool>(leader_reward); }
    int num_contexts() const { return static_cast<int>(context_weights.size()); }
};

}  // namespace cbrl
