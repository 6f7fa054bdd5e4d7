#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cbrl/cmdp_core.hpp"

namespace cbrl {

struct SoftViResult {
    Vec v;        // final value iterate
    Vec q;        // r + gamma P v
    Policy policy;  // softmax(q / lambda)
    int iterations = 0;
};

// Soft value iteration from V = 0; error after T sweeps is bounded by
// gamma^T (Rmax + lambda log A) / (1 - gamma).
SoftViResult soft_value_iteration(const TabularCmdp& m, int iterations);

// Iterations needed so that the induced policy is within delta of pi* in
// sup norm, via |pi - pi*| <= |Q - Q*| / lambda and the soft-VI rate.
int soft_vi_iterations_for(const TabularCmdp& m, double delta);

struct SoftQConfig {
    long iterations = 0;
    double h = 0.0;    // step size alpha_t = h / (t + t0); defaults derived from m if 0
    double t0 = 0.0;
    // checkpoints at which to snapshot the greedy policy (global step counts)
    std::vector<long> checkpoints;
    int start_state = -1;  // -1: sample from init
};

struct SoftQResult {
    Vec q;
    Policy policy;
    std::vector<Policy> checkpoint_policies;  // one per requested checkpoint
    long iterations = 0;
};

// Asynchronous soft Q-learning under a uniform behavior policy with TD update
//   Q(s,a) += alpha_t (r + gamma lambda logsumexp(Q(s',.)/lambda) - Q(s,a)).
SoftQResult soft_q_learning(const TabularCmdp& m, const SoftQConfig& cfg, Rng& rng);

struct NpgConfig {
    int iterations = 0;
    double eta = 0.0;  // 0: use the largest admissible step (1-gamma)/lambda
    double eval_tol = 1e-10;
};

struct NpgResult {
    Policy policy;
    std::vector<double> log_policy_gap;  // sup-norm log-policy distance to pi*, per iterate
    int iterations = 0;
};

// Entropy-regularized natural policy gradient (multiplicative weights form):
//   pi_{t+1}(a|s) proportional to pi_t(a|s)^{1 - eta lambda/(1-gamma)}
//                                 * exp(eta Q_t(s,a)/(1-gamma)),
// with Q_t from exact soft policy evaluation. Converges linearly at rate
// (1 - eta lambda). The gap trace is recorded against a high-accuracy pi*.
NpgResult npg(const TabularCmdp& m, const NpgConfig& cfg);

enum class PgEntropyMode { Regularized, Raw };

struct VanillaPgConfig {
    long iterations = 0;
    double alpha = 0.05;
    bool inv_step_schedule = false;  // alpha_t = alpha / (t+1)
    PgEntropyMode entropy_mode = PgEntropyMode::Regularized;
    bool exact_gradient = false;  // dense DP gradient instead of sampling
};

struct VanillaPgResult {
    Vec theta;  // S*A softmax logits
    Policy policy;
    long iterations = 0;
};

// Monte-Carlo softmax policy gradient on the entropy-regularized return.
// Sampled form: roll to (s_T, a_T) with T ~ Geo(1-gamma), estimate the tail
// with T' ~ Geo(1-sqrt(gamma)) and weights gamma^{t'/2} starting from the
// immediate reward at (s_T, a_T); ascend
//   g = grad log pi(a_T|s_T) * tail / (1-gamma)  [+ lambda-entropy terms].
// In Regularized mode downstream rewards include lambda H(pi; s) and the
// update adds the closed-form lambda/(1-gamma) * grad H(pi; s_T) term, so the
// iteration ascends the regularized objective; Raw mode ascends the plain
// return. exact_gradient switches to the dense gradient
//   dJ/dtheta(s,a) = d_mu(s) pi(a|s) (A(s,a) - lambda(log pi(a|s) + H(pi;s))).
VanillaPgResult vanilla_pg(const TabularCmdp& m, const VanillaPgConfig& cfg, Rng& rng);

// Exact gradient of the regularized (or raw) objective w.r.t. softmax logits.
Vec pg_exact_gradient(const TabularCmdp& m, const Vec& theta, PgEntropyMode mode);

struct LowerOracle {
    TabularCmdp cmdp;        // owned copy of the realized context's MDP
    Policy policy;           // approximately optimal regularized policy
    double accuracy_hint = 0.0;  // targeted sup-norm policy error, if known
    long iterations_used = 0;
};

enum class OracleVariant { SoftVi, SoftQ, Npg, VanillaPg };

struct OracleBudget {
    std::optional<double> target_delta;  // accuracy-driven budget
    std::optional<long> iterations;      // or an explicit iteration count
    double soft_q_c = 50.0;              // scale for the soft-Q delta->T rule
};

// Builds a delta-approximate oracle for the given realized context MDP.
// Exactly one of target_delta / iterations must be set; VanillaPg only
// supports explicit iteration budgets (no finite-time rate is available).
LowerOracle make_oracle(const TabularCmdp& m, OracleVariant variant, const OracleBudget& budget,
                        Rng& rng);

}  // namespace cbrl
