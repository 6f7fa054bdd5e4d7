#pragma once

#include <functional>
#include <optional>

#include "cbrl/hypergrad.hpp"
#include "cbrl/problem.hpp"

namespace cbrl {

enum class StepSchedule { Constant, InvSqrtTotal };  // alpha or alpha/sqrt(T)

enum class EstimatorVariant { Decomposable, Stochastic, Rtq, VanillaQ };

struct OuterConfig {
    long iterations = 1000;
    double alpha = 0.1;
    StepSchedule schedule = StepSchedule::Constant;
    double clip = 1.0;  // gradient clipped to this 2-norm before stepping

    OracleVariant oracle_variant = OracleVariant::SoftVi;
    std::optional<double> oracle_delta;    // fixed accuracy
    bool oracle_delta_inv_sqrt_T = false;  // delta = delta0 / sqrt(T)
    double oracle_delta0 = 0.1;
    std::optional<long> oracle_iterations; // explicit inner budget instead

    EstimatorVariant estimator = EstimatorVariant::Decomposable;
    long batch_env_steps = 0;  // >0: average draws until this many env steps are consumed
    RtqConfig rtq;

    int amd_inner_k = 10;

    double zo_c = 1.0;  // perturbation u_t = zo_c / (t+1)

    long eval_every = 100;
    bool eval_exact_grad = false;
    double eval_tol = 1e-10;
};

struct EvalPoint {
    long iteration = 0;
    double upper_return = 0.0;
    std::optional<double> exact_grad_norm_sq;
    long inner_iterations = 0;  // cumulative lower-level iterations so far
    double wall_ms = 0.0;
    Vec x;  // iterate snapshot at this evaluation
};

struct RunRecord {
    Vec x_final;
    Vec x_hat;  // uniform draw over the iterate sequence (theory output)
    long x_hat_iteration = 0;  // 1-based step count of x_hat (0 = initial point)
    std::vector<EvalPoint> evals;
    long oracle_solves = 0;
    long inner_iterations = 0;
    double max_applied_step = 0.0;  // max ||x_{t+1} - x_t||_2 over the run
};

// Expected upper objective at x: for decomposable problems, the expected
// discounted leader return under each context's near-exact regularized best
// response; otherwise the negated upper loss. Higher is better.
double evaluate_upper_return(const BilevelProblem& prob, const Vec& x, double tol = 1e-10);

// Hypergradient policy gradient descent (outer SGD with the chosen
// single-sample estimator; one lower-level oracle solve per iteration, shared
// by every draw in the batch). Maximizes the leader return.
RunRecord run_hpgd(const BilevelProblem& prob, const OuterConfig& cfg, Rng& rng);

// Adaptive model design baseline: K exact smoothed value/derivative sweeps
// per outer iteration with warm-started tables, ascent on mu-weighted
// Q-tilde values. Requires decomposable structure.
RunRecord run_amd(const BilevelProblem& prob, const OuterConfig& cfg, Rng& rng);

// Two-point zero-order baseline: per iteration draws z ~ N(0, I), solves the
// lower level at x and x + u_t z (exactly two oracle solves), and steps along
// z scaled by the smoothed finite difference of the upper objective.
RunRecord run_zero_order(const BilevelProblem& prob, const OuterConfig& cfg, Rng& rng);

}  // namespace cbrl
