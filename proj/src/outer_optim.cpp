#include "cbrl/outer_optim.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace cbrl {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void project_box(const BilevelProblem& prob, Vec& x) {
    if (!prob.box) return;
    const Vec& lo = prob.box->first;
    const Vec& hi = prob.box->second;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < lo[i]) x[i] = lo[i];
        if (x[i] > hi[i]) x[i] = hi[i];
    }
}

// scales g to 2-norm at most clip (no-op for clip <= 0)
void clip_norm(Vec& g, double clip) {
    if (clip <= 0.0) return;
    double n = std::sqrt(norm2sq(g));
    if (n > clip)
        for (auto& v : g) v *= clip / n;
}

double step_size(const OuterConfig& cfg) {
    if (cfg.schedule == StepSchedule::InvSqrtTotal)
        return cfg.alpha / std::sqrt(double(std::max<long>(cfg.iterations, 1)));
    return cfg.alpha;
}

double oracle_delta_for(const OuterConfig& cfg) {
    if (cfg.oracle_delta) return *cfg.oracle_delta;
    if (cfg.oracle_delta_inv_sqrt_T)
        return cfg.oracle_delta0 / std::sqrt(double(std::max<long>(cfg.iterations, 1)));
    return 0.01;
}

// Warm-startable soft value iteration: sweeps v in place until the Bellman
// residual certifies a delta-accurate softmax policy, then returns it.
struct WarmOracle {
    Vec v;  // persisted across outer iterations per context

    Policy solve(const TabularCmdp& m, double delta, long& sweeps_out) {
        if (v.size() != std::size_t(m.S)) v.assign(m.S, 0.0);
        // |pi - pi*| <= |Q - Q*|/lambda <= gamma |v - v*|/lambda and
        // |v - v*| <= residual/(1 - gamma) after a sweep
        double target =
            std::max(delta * m.lambda * (1.0 - m.gamma) / std::max(m.gamma, 1e-12), 1e-300);
        double vmax = (m.reward_bound() + m.lambda * std::log(double(m.A))) /
                      (1.0 - m.gamma);
        long cap = 10 + long(std::ceil(std::log(std::max(target / (4.0 * vmax + 1.0), 1e-300)) /
                                       std::log(std::max(m.gamma, 1e-12))));
        if (m.gamma <= 0.0) cap = 2;
        long sweeps = 0;
        for (; sweeps < cap; ++sweeps) {
            Vec next = soft_bellman_v(m, v);
            double res = 0.0;
            for (int s = 0; s < m.S; ++s) res = std::max(res, std::abs(next[s] - v[s]));
            v.swap(next);
            if (res <= target) break;
        }
        sweeps_out += sweeps + 1;
        Vec q = soft_bellman_q(m, v);
        return softmax_policy(q, m.S, m.A, m.lambda);
    }
};

struct EvalSink {
    const BilevelProblem* prob;
    const OuterConfig* cfg;
    RunRecord* rec;
    Clock::time_point t0;

    void maybe_record(long t, const Vec& x, long oracle_iters, bool force = false) {
        bool due = t == 0 || (cfg->eval_every > 0 && t % cfg->eval_every == 0);
        if (!due && !force) return;
        if (!rec->evals.empty() && rec->evals.back().iteration == t) return;
        EvalPoint pt;
        pt.iteration = t;
        pt.upper_return = evaluate_upper_return(*prob, x, cfg->eval_tol);
        if (cfg->eval_exact_grad)
            pt.exact_grad_norm_sq = norm2sq(exact_hypergradient(*prob, x, cfg->eval_tol));
        pt.inner_iterations = oracle_iters;
        pt.wall_ms = ms_since(t0);
        pt.x = x;
        rec->evals.push_back(pt);
    }
};

}  // namespace

double evaluate_upper_return(const BilevelProblem& prob, const Vec& x, double tol) {
    double total = 0.0;
    for (int ctx = 0; ctx < prob.num_contexts(); ++ctx) {
        double w = prob.context_weights[ctx];
        if (w == 0.0) continue;
        TabularCmdp m = prob.make_cmdp(x, ctx);
        Policy pi = soft_value_iteration(m, soft_vi_iterations_for(m, tol)).policy;
        if (prob.decomposable()) {
            SoftValues sv = evaluate_plain(m, pi, prob.leader_reward(x, ctx), tol);
            double ret = 0.0;
            for (int s = 0; s < m.S; ++s) ret += m.init[s] * sv.v[s];
            total += w * ret;
        } else {
            total -= w * prob.upper.eval(x, pi, ctx);
        }
    }
    return total;
}

RunRecord run_hpgd(const BilevelProblem& prob, const OuterConfig& cfg, Rng& rng) {
    const bool decomp = cfg.estimator == EstimatorVariant::Decomposable;
    const bool rtq_like =
        cfg.estimator == EstimatorVariant::Rtq || cfg.estimator == EstimatorVariant::VanillaQ;
    if (decomp && !prob.decomposable())
        throw std::invalid_argument("run_hpgd: decomposable estimator needs leader rewards");

    RunRecord rec;
    Vec x = prob.x0;
    project_box(prob, x);
    const double alpha = step_size(cfg);
    const double delta = oracle_delta_for(cfg);
    long hat = cfg.iterations > 0 ? rng.uniform_int(cfg.iterations) : -1;

    std::vector<WarmOracle> warm(prob.num_contexts());
    EvalSink sink{&prob, &cfg, &rec, Clock::now()};
    sink.maybe_record(0, x, 0);
    rec.x_hat = x;
    rec.x_hat_iteration = 0;

    for (long t = 0; t < cfg.iterations; ++t) {
        int ctx = rng.categorical(prob.context_weights.data(), prob.num_contexts());
        TabularCmdp m = prob.make_cmdp(x, ctx);
        Vec g(prob.d, 0.0);

        if (rtq_like) {
            Vec nu(m.S, 1.0 / m.S);
            RtqSample s = cfg.estimator == EstimatorVariant::Rtq
                              ? rtq_gradient_sample(prob.upper, m, cfg.rtq, nu, x, ctx, rng)
                              : vanilla_q_gradient_sample(prob.upper, m, cfg.rtq, nu, x, ctx,
                                                          rng);
            rec.inner_iterations += s.inner_iterations;
            rec.oracle_solves += 1;
            for (int j = 0; j < prob.d; ++j) g[j] = -s.grad[j];  // loss -> ascent
        } else {
            Policy pio;
            if (cfg.oracle_iterations || cfg.oracle_variant != OracleVariant::SoftVi) {
                OracleBudget budget;
                if (cfg.oracle_iterations)
                    budget.iterations = *cfg.oracle_iterations;
                else
                    budget.target_delta = delta;
                LowerOracle oracle = make_oracle(m, cfg.oracle_variant, budget, rng);
                rec.inner_iterations += oracle.iterations_used;
                pio = oracle.policy;
            } else {
                pio = warm[ctx].solve(m, delta, rec.inner_iterations);
            }
            rec.oracle_solves += 1;

            long steps = 0, draws = 0;
            if (decomp) {
                Vec rbar = prob.leader_reward(x, ctx);
                Vec drbar = prob.d_leader_reward(x, ctx);
                do {
                    Vec e = decomposable_gradient_sample(m, pio, rbar, drbar, rng, &steps);
                    axpy(1.0, e, g);
                    ++draws;
                } while (steps < cfg.batch_env_steps);
            } else {
                // d_x / d_pi depend only on (x, pi, ctx): hoist out of the batch
                Vec nu(m.S, 1.0 / m.S);
                Vec dx = prob.upper.d_x(x, pio, ctx);
                Vec dpi = prob.upper.d_pi(x, pio, ctx);
                do {
                    int s = rng.categorical(nu.data(), m.S);
                    int a = rng.categorical(pio.row(s), m.A);
                    double coef = dpi[m.sa(s, a)] / (m.lambda * nu[s]);
                    Vec e = dx;
                    if (coef != 0.0) {
                        Vec adv = grad_estimator(m, pio, s, a, rng, &steps);
                        axpy(coef, adv, e);
                    } else {
                        ++steps;  // guarantee progress when the coefficient vanishes
                    }
                    for (int j = 0; j < prob.d; ++j) g[j] -= e[j];  // loss -> ascent
                    ++draws;
                } while (steps < cfg.batch_env_steps);
            }
            for (auto& v : g) v /= double(draws);
        }

        clip_norm(g, cfg.clip);
        Vec xprev = x;
        axpy(alpha, g, x);
        project_box(prob, x);
        double applied = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            applied += (x[i] - xprev[i]) * (x[i] - xprev[i]);
        rec.max_applied_step = std::max(rec.max_applied_step, std::sqrt(applied));

        if (t == hat) {
            rec.x_hat = x;
            rec.x_hat_iteration = t + 1;
        }
        sink.maybe_record(t + 1, x, rec.inner_iterations, t + 1 == cfg.iterations);
    }
    rec.x_final = x;
    return rec;
}

RunRecord run_amd(const BilevelProblem& prob, const OuterConfig& cfg, Rng& rng) {
    if (!prob.decomposable())
        throw std::invalid_argument("run_amd: requires decomposable leader rewards");

    RunRecord rec;
    Vec x = prob.x0;
    project_box(prob, x);
    const double alpha = step_size(cfg);
    long hat = cfg.iterations > 0 ? rng.uniform_int(cfg.iterations) : -1;

    EvalSink sink{&prob, &cfg, &rec, Clock::now()};
    sink.maybe_record(0, x, 0);
    rec.x_hat = x;
    rec.x_hat_iteration = 0;

    // warm-started value/derivative tables, shared across contexts
    Vec q, dq, qu, qt;
    for (long t = 0; t < cfg.iterations; ++t) {
        int ctx = rng.categorical(prob.context_weights.data(), prob.num_contexts());
        TabularCmdp m = prob.make_cmdp(x, ctx);
        Vec rbar = prob.leader_reward(x, ctx);
        Vec drbar = prob.d_leader_reward(x, ctx);
        const int S = m.S, A = m.A, d = m.d;
        const std::size_t SA = std::size_t(S) * A;
        if (q.size() != SA) {
            q.assign(SA, 0.0);
            dq.assign(SA * d, 0.0);
            qu.assign(SA, 0.0);
            qt.assign(SA * d, 0.0);
        }

        Vec pi(SA), vsoft(S), dv(std::size_t(S) * d), vu(S), vt(std::size_t(S) * d);
        Vec q2(SA), dq2(SA * d), qu2(SA), qt2(SA * d);
        for (int k = 0; k < cfg.amd_inner_k; ++k) {
            // policy and state aggregates from the current tables
            for (int s = 0; s < S; ++s) {
                double lse = 0.0;
                {
                    // softmax over q(s,.)/lambda, computed in log space
                    double mx = q[m.sa(s, 0)];
                    for (int a = 1; a < A; ++a) mx = std::max(mx, q[m.sa(s, a)]);
                    double z = 0.0;
                    for (int a = 0; a < A; ++a) z += std::exp((q[m.sa(s, a)] - mx) / m.lambda);
                    for (int a = 0; a < A; ++a)
                        pi[m.sa(s, a)] = std::exp((q[m.sa(s, a)] - mx) / m.lambda) / z;
                    lse = mx + m.lambda * std::log(z);
                }
                vsoft[s] = lse;
                double acc_u = 0.0;
                for (int a = 0; a < A; ++a) acc_u += pi[m.sa(s, a)] * qu[m.sa(s, a)];
                vu[s] = acc_u;
                for (int j = 0; j < d; ++j) {
                    double acc_dv = 0.0, acc_vt = 0.0;
                    for (int a = 0; a < A; ++a) {
                        acc_dv += pi[m.sa(s, a)] * dq[std::size_t(m.sa(s, a)) * d + j];
                        acc_vt += pi[m.sa(s, a)] * qt[std::size_t(m.sa(s, a)) * d + j];
                    }
                    dv[std::size_t(s) * d + j] = acc_dv;
                    vt[std::size_t(s) * d + j] = acc_vt;
                }
            }
            // synchronous sweeps of the four coupled operators
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) {
                    const int sa = m.sa(s, a);
                    const double* p = m.p_row(s, a);
                    double accq = 0.0, accu = 0.0;
                    q2[sa] = m.r(s, a);
                    qu2[sa] = rbar[sa];
                    for (int j = 0; j < d; ++j) {
                        dq2[std::size_t(sa) * d + j] =
                            m.has_d_reward() ? m.d_r(s, a)[j] : 0.0;
                        double au = qu[sa] - vu[s];
                        double dadv = dq[std::size_t(sa) * d + j] - dv[std::size_t(s) * d + j];
                        qt2[std::size_t(sa) * d + j] =
                            drbar[std::size_t(sa) * d + j] + au * dadv / m.lambda;
                    }
                    for (int s2 = 0; s2 < S; ++s2) {
                        double pp = p[s2];
                        if (pp <= 0.0) continue;
                        accq += pp * vsoft[s2];
                        accu += pp * vu[s2];
                        const double* dlp =
                            m.has_d_log_transition() ? m.d_log_p(s, a, s2) : nullptr;
                        for (int j = 0; j < d; ++j) {
                            double dterm = dv[std::size_t(s2) * d + j];
                            double tterm = vt[std::size_t(s2) * d + j];
                            if (dlp) {
                                dterm += vsoft[s2] * dlp[j];
                                tterm += vu[s2] * dlp[j];
                            }
                            dq2[std::size_t(sa) * d + j] += m.gamma * pp * dterm;
                            qt2[std::size_t(sa) * d + j] += m.gamma * pp * tterm;
                        }
                    }
                    q2[sa] += m.gamma * accq;
                    qu2[sa] += m.gamma * accu;
                }
            q.swap(q2);
            dq.swap(dq2);
            qu.swap(qu2);
            qt.swap(qt2);
            rec.inner_iterations += 1;
        }
        rec.oracle_solves += 1;

        // gradient estimate: mu-weighted policy average of the final qt
        Vec g(d, 0.0);
        {
            Policy pol(S, A);
            for (int s = 0; s < S; ++s) {
                double mx = q[m.sa(s, 0)];
                for (int a = 1; a < A; ++a) mx = std::max(mx, q[m.sa(s, a)]);
                double z = 0.0;
                for (int a = 0; a < A; ++a) z += std::exp((q[m.sa(s, a)] - mx) / m.lambda);
                for (int a = 0; a < A; ++a)
                    pol.at(s, a) = std::exp((q[m.sa(s, a)] - mx) / m.lambda) / z;
            }
            for (int s = 0; s < S; ++s) {
                if (m.init[s] <= 0.0) continue;
                for (int a = 0; a < A; ++a) {
                    double w = m.init[s] * pol(s, a);
                    if (w == 0.0) continue;
                    for (int j = 0; j < d; ++j)
                        g[j] += w * qt[std::size_t(m.sa(s, a)) * d + j];
                }
            }
        }

        clip_norm(g, cfg.clip);
        Vec xprev = x;
        axpy(alpha, g, x);
        project_box(prob, x);
        double applied = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            applied += (x[i] - xprev[i]) * (x[i] - xprev[i]);
        rec.max_applied_step = std::max(rec.max_applied_step, std::sqrt(applied));

        if (t == hat) {
            rec.x_hat = x;
            rec.x_hat_iteration = t + 1;
        }
        sink.maybe_record(t + 1, x, rec.inner_iterations, t + 1 == cfg.iterations);
    }
    rec.x_final = x;
    return rec;
}

RunRecord run_zero_order(const BilevelProblem& prob, const OuterConfig& cfg, Rng& rng) {
    RunRecord rec;
    Vec x = prob.x0;
    project_box(prob, x);
    const double alpha = step_size(cfg);
    const double delta = cfg.oracle_delta.value_or(1e-8);
    long hat = cfg.iterations > 0 ? rng.uniform_int(cfg.iterations) : -1;

    EvalSink sink{&prob, &cfg, &rec, Clock::now()};
    sink.maybe_record(0, x, 0);
    rec.x_hat = x;
    rec.x_hat_iteration = 0;

    // single-context objective at the realized xi (higher is better)
    auto objective = [&](const Vec& xx, int ctx) {
        TabularCmdp m = prob.make_cmdp(xx, ctx);
        int iters = soft_vi_iterations_for(m, delta);
        Policy pi = soft_value_iteration(m, iters).policy;
        rec.inner_iterations += iters;
        rec.oracle_solves += 1;
        if (prob.decomposable()) {
            SoftValues sv = evaluate_plain(m, pi, prob.leader_reward(xx, ctx), cfg.eval_tol);
            double ret = 0.0;
            for (int s = 0; s < m.S; ++s) ret += m.init[s] * sv.v[s];
            return ret;
        }
        return -prob.upper.eval(xx, pi, ctx);
    };

    for (long t = 0; t < cfg.iterations; ++t) {
        int ctx = rng.categorical(prob.context_weights.data(), prob.num_contexts());
        Vec z(prob.d);
        for (auto& v : z) v = rng.normal();
        double u = cfg.zo_c / double(t + 1);
        Vec xp = x;
        axpy(u, z, xp);
        double f0 = objective(x, ctx);
        double f1 = objective(xp, ctx);
        Vec g = z;
        for (auto& v : g) v *= (f1 - f0) / u;

        clip_norm(g, cfg.clip);
        Vec xprev = x;
        axpy(alpha, g, x);
        project_box(prob, x);
        double applied = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            applied += (x[i] - xprev[i]) * (x[i] - xprev[i]);
        rec.max_applied_step = std::max(rec.max_applied_step, std::sqrt(applied));

        if (t == hat) {
            rec.x_hat = x;
            rec.x_hat_iteration = t + 1;
        }
        sink.maybe_record(t + 1, x, rec.inner_iterations, t + 1 == cfg.iterations);
    }
    rec.x_final = x;
    return rec;
}

}  // namespace cbrl
