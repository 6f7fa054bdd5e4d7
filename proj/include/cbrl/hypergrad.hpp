#pragma once

#include "cbrl/cmdp_core.hpp"
#include "cbrl/lower_solvers.hpp"
#include "cbrl/problem.hpp"

namespace cbrl {

// Fixed-policy derivative of the regularized action values: the unique fixed
// point G (S*A*d) of the gamma-contraction
//   G(s,a) = d_x r(s,a)
//          + gamma sum_{s'} P(s'|s,a) [ d_x log P(s'|s,a) v(s')
//                                       + sum_{a'} pi(a'|s') G(s',a') ].
// With v = V^pi_lambda this is d_x Q^pi_lambda at fixed pi; evaluated at
// pi = pi*, the envelope identity makes it the total derivative d_x Q*.
Vec exact_dx_q(const TabularCmdp& m, const Policy& pi, const Vec& v, double tol = 1e-12);

// Same recursion with caller-supplied reward derivative table (S*A*d) and
// value table; used for unregularized leader returns.
Vec exact_dx_q_table(const TabularCmdp& m, const Policy& pi, const Vec& v, const Vec& d_r_table,
                     double tol = 1e-12);

// d pi*(a|s)/dx = (1/lambda) pi*(a|s) [G(s,a) - sum_{a'} pi*(a'|s) G(s,a')],
// returned as an S*A*d table. G = exact_dx_q at pi*.
Vec exact_best_response_jacobian(const TabularCmdp& m, const Policy& pi_star, const Vec& g,
                                 Vec* d_advantage = nullptr);

// Exact hypergradient of F(x) = sum_xi w_xi f(x, pi*_{x,xi}, xi) by dynamic
// programming through each context's best response (lower_tol controls the
// inner solves). This is the gradient of the *loss* form.
Vec exact_hypergradient(const BilevelProblem& prob, const Vec& x, double lower_tol = 1e-12);

// Exact gradient of the expected leader return for decomposable problems
// (independent of the UpperLoss plumbing); equals -exact_hypergradient when
// the upper loss is the induced one.
Vec exact_return_gradient(const BilevelProblem& prob, const Vec& x, double lower_tol = 1e-12);

// Builds the general-form loss induced by decomposable data:
//   f(x, pi, xi) = -E_{mu}[ sum_t gamma^t rbar_{x,xi}(s_t, a_t) ]  (pi fixed),
//   d_pi f(a|s)  = -dbar(s) Qbar(s,a)  with dbar the unnormalized discounted
//                  occupancy and Qbar plain policy evaluation of rbar,
//   d_x f        = -( sum_s d_x mu(s) Vbar(s) + fixed-pi DP term ).
UpperLoss induced_upper_loss(const BilevelProblem& prob, double tol = 1e-10);

// Single-sample estimator of d_x A^{pi_o}(s,a) from trajectories only:
// two geometric-horizon rollouts (from (s,a) and from s), reward-derivative
// partial sums plus a log-transition score term weighted by the regularized
// tail return. Unbiased for the fixed-policy derivative at pi_o. If env_steps
// is given, the number of sampled trajectory triples is added to it.
Vec grad_estimator(const TabularCmdp& m, const Policy& pi_o, int s, int a, Rng& rng,
                   long* env_steps = nullptr);

// One HPGD gradient sample for a general-form loss: s ~ nu, a ~ pi_o(.|s),
//   g = d_x f(x, pi_o, xi) + d_pi f(s,a) / (lambda nu(s)) * grad_estimator.
// Estimates the gradient of the loss F at the oracle policy.
Vec hpgd_gradient_sample(const UpperLoss& loss, const TabularCmdp& m, const Policy& pi_o,
                         const Vec& nu, const Vec& x, int ctx, Rng& rng,
                         long* env_steps = nullptr);

// One trajectory-only gradient sample for decomposable problems; unbiased for
// the gradient of the expected leader *return* at the oracle policy (ascent
// direction). rbar/d_rbar are the S*A and S*A*d leader reward tables.
Vec decomposable_gradient_sample(const TabularCmdp& m, const Policy& pi_o, const Vec& rbar,
                                 const Vec& d_rbar, Rng& rng, long* env_steps = nullptr);

struct RtqConfig {
    int K = 3;          // maximum sampled level; k ~ p_k on {1..K}, p_k prop. 2^-k
    double c = 50.0;    // checkpoint scale t_j = ceil(c j 2^j)
    int batch_base = 1; // grad_estimator draws at level k: batch_base * 2^k
};

struct RtqSample {
    Vec grad;                  // estimate of the loss gradient dF/dx
    long inner_iterations = 0; // Q-learning steps consumed
    int level = 0;             // sampled k
};

// Probability weights p_k = 2^-k / (1 - 2^-K), k = 1..K.
Vec rtq_level_probabilities(int K);

// Checkpoint schedule t_j = ceil(c j 2^j).
long rtq_checkpoint(double c, int j);

// Expected Q-learning steps per sample, sum_k p_k t_{k+1}.
double rtq_expected_inner_iterations(const RtqConfig& cfg);

// Randomly-truncated multilevel estimator: draws level k, trains soft
// Q-learning to t_{k+1} capturing policies at t_1, t_k, t_{k+1}, and combines
// a base-level sample with an importance-weighted telescoping correction
// divided by p_k. Unbiased (over k and the draws) for the hypergradient at
// the t_{K+1}-checkpoint policy family. Returns the loss-gradient estimate.
RtqSample rtq_gradient_sample(const UpperLoss& loss, const TabularCmdp& m, const RtqConfig& cfg,
                              const Vec& nu, const Vec& x, int ctx, Rng& rng);

// Comparator: single-level estimator that trains to t_{K+1} and applies the
// plain HPGD sample there (same inner Q-learning configuration).
RtqSample vanilla_q_gradient_sample(const UpperLoss& loss, const TabularCmdp& m,
                                    const RtqConfig& cfg, const Vec& nu, const Vec& x, int ctx,
                                    Rng& rng);

}  // namespace cbrl
