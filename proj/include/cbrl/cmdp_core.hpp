#pragma once

#include "cbrl/rng.hpp"
#include "cbrl/types.hpp"

namespace cbrl {

// log(sum_i exp(v_i)) with max subtraction; safe for widely spread inputs.
double logsumexp(const double* v, int n);
inline double logsumexp(const Vec& v) { return logsumexp(v.data(), (int)v.size()); }

// Shannon entropy -sum_i p_i log p_i with the 0 log 0 = 0 convention.
double entropy(const double* p, int n);
inline double entropy(const Vec& p) { return entropy(p.data(), (int)p.size()); }

// pi(a|s) proportional to exp(q(s,a)/lambda), computed row-wise in log space.
Policy softmax_policy(const Vec& q, int S, int A, double lambda);

// One application of the soft value Bellman operator:
//   (T V)(s) = lambda * log sum_a exp((r(s,a) + gamma E_{s'}[V(s')]) / lambda).
Vec soft_bellman_v(const TabularCmdp& m, const Vec& v);

// Q(s,a) = r(s,a) + gamma E_{s'|s,a}[V(s')].
Vec soft_bellman_q(const TabularCmdp& m, const Vec& v);

// Entropy-regularized policy evaluation: fixed point of
//   V(s) = sum_a pi(a|s) Q(s,a) + lambda H(pi(.|s)),  Q = r + gamma P V.
// Iterates until the sup-norm step is below tol*(1-gamma) or an a-priori cap
// derived from the contraction rate is hit.
SoftValues evaluate_soft(const TabularCmdp& m, const Policy& pi, double tol = 1e-10);

// J_lambda(pi) = E_{s ~ mu}[V_lambda^pi(s)].
double lower_objective(const TabularCmdp& m, const Policy& pi, double tol = 1e-10);

// A(s,a) = Q(s,a) - sum_{a'} pi(a'|s) Q(s,a'); the soft advantage used by the
// policy-sensitivity identity d pi(a|s)/dx = (1/lambda) pi(a|s) dA(s,a)/dx.
Vec soft_advantage(const TabularCmdp& m, const Policy& pi, const SoftValues& sv);

struct Start {
    enum Kind { FromInit, FromState, FromStateAction } kind = FromInit;
    int s = -1;
    int a = -1;

    static Start init() { return Start{}; }
    static Start state(int s) { return Start{FromState, s, -1}; }
    static Start state_action(int s, int a) { return Start{FromStateAction, s, a}; }
};

// Rolls out (s_t, a_t, r_t) for t = 0..t_max under pi (r_t is the follower
// reward). Start determines s_0 (and a_0 for the state-action variant).
Trajectory sample_trajectory(const TabularCmdp& m, const Policy& pi, const Start& start,
                             int t_max, Rng& rng);

// Unnormalized discounted state occupancy d(s) = sum_t gamma^t P(s_t = s),
// solved to fixed tolerance. Sums to 1/(1-gamma).
Vec discounted_occupancy(const TabularCmdp& m, const Policy& pi, double tol = 1e-12);

// Policy evaluation without entropy for an arbitrary reward table rbar (S*A):
// returns Q(s,a) = rbar + gamma P Vbar, Vbar(s) = sum_a pi Q.
SoftValues evaluate_plain(const TabularCmdp& m, const Policy& pi, const Vec& rbar,
                          double tol = 1e-10);

}  // namespace cbrl
