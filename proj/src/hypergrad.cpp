#include "cbrl/hypergrad.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cbrl {

namespace {

// iteration cap for a gamma-contraction whose iterates are bounded by mag
int contraction_cap(double gamma, double tol, double mag) {
    if (gamma <= 0.0) return 2;
    double target = tol * (1.0 - gamma) / std::max(mag, 1e-300);
    if (target >= 1.0) return 2;
    return int(std::ceil(std::log(target) / std::log(gamma))) + 10;
}

Vec dx_q_recursion(const TabularCmdp& m, const Policy& pi, const Vec& v, const double* d_r,
                   double tol) {
    const int S = m.S, A = m.A, d = m.d;
    Vec g(std::size_t(S) * A * d, 0.0);
    if (d == 0) return g;
    Vec vbar(std::size_t(S) * d, 0.0);  // sum_a pi(a|s) G(s,a,:)
    double dr_max = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dr_max = std::max(dr_max, std::abs(d_r[i]));
    double dlp_max = 0.0;
    if (m.has_d_log_transition())
        for (double w : m.d_log_transition) dlp_max = std::max(dlp_max, std::abs(w));
    double v_max = 0.0;
    for (double w : v) v_max = std::max(v_max, std::abs(w));
    double mag = (dr_max + m.gamma * dlp_max * v_max) / std::max(1.0 - m.gamma, 1e-12) + 1.0;
    int cap = contraction_cap(m.gamma, tol, mag);

    Vec next(g.size());
    for (int it = 0; it < cap; ++it) {
        double diff = 0.0;
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                const int sa = m.sa(s, a);
                const double* p = m.p_row(s, a);
                for (int j = 0; j < d; ++j) {
                    double acc = d_r[std::size_t(sa) * d + j];
                    if (m.gamma > 0.0) {
                        double t = 0.0;
                        for (int s2 = 0; s2 < S; ++s2) {
                            double pp = p[s2];
                            if (pp <= 0.0) continue;
                            double inner = vbar[std::size_t(s2) * d + j];
                            if (m.has_d_log_transition())
                                inner += m.d_log_p(s, a, s2)[j] * v[s2];
                            t += pp * inner;
                        }
                        acc += m.gamma * t;
                    }
                    std::size_t idx = std::size_t(sa) * d + j;
                    next[idx] = acc;
                    diff = std::max(diff, std::abs(acc - g[idx]));
                }
            }
        g.swap(next);
        for (int s = 0; s < S; ++s)
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int a = 0; a < A; ++a) acc += pi(s, a) * g[std::size_t(m.sa(s, a)) * d + j];
                vbar[std::size_t(s) * d + j] = acc;
            }
        if (diff <= tol * std::max(1.0 - m.gamma, 1e-12)) break;
    }
    return g;
}

}  // namespace

Vec exact_dx_q(const TabularCmdp& m, const Policy& pi, const Vec& v, double tol) {
    if (!m.has_d_reward() && !m.has_d_log_transition())
        return Vec(std::size_t(m.S) * m.A * m.d, 0.0);
    Vec zeros;
    const double* dr;
    if (m.has_d_reward()) {
        dr = m.d_reward.data();
    } else {
        zeros.assign(std::size_t(m.S) * m.A * m.d, 0.0);
        dr = zeros.data();
    }
    return dx_q_recursion(m, pi, v, dr, tol);
}

Vec exact_dx_q_table(const TabularCmdp& m, const Policy& pi, const Vec& v, const Vec& d_r_table,
                     double tol) {
    if (d_r_table.size() != std::size_t(m.S) * m.A * m.d)
        throw std::invalid_argument("exact_dx_q_table: d_r_table has wrong size");
    return dx_q_recursion(m, pi, v, d_r_table.data(), tol);
}

Vec exact_best_response_jacobian(const TabularCmdp& m, const Policy& pi_star, const Vec& g,
                                 Vec* d_advantage) {
    const int S = m.S, A = m.A, d = m.d;
    Vec jac(std::size_t(S) * A * d, 0.0);
    if (d_advantage) d_advantage->assign(std::size_t(S) * A * d, 0.0);
    for (int s = 0; s < S; ++s)
        for (int j = 0; j < d; ++j) {
            double gbar = 0.0;
            for (int a = 0; a < A; ++a) gbar += pi_star(s, a) * g[std::size_t(m.sa(s, a)) * d + j];
            for (int a = 0; a < A; ++a) {
                std::size_t idx = std::size_t(m.sa(s, a)) * d + j;
                double da = g[idx] - gbar;
                if (d_advantage) (*d_advantage)[idx] = da;
                jac[idx] = pi_star(s, a) * da / m.lambda;
            }
        }
    return jac;
}

Vec exact_hypergradient(const BilevelProblem& prob, const Vec& x, double lower_tol) {
    Vec out(prob.d, 0.0);
    for (int ctx = 0; ctx < prob.num_contexts(); ++ctx) {
        double w = prob.context_weights[ctx];
        if (w == 0.0) continue;
        TabularCmdp m = prob.make_cmdp(x, ctx);
        Policy pistar = soft_value_iteration(m, soft_vi_iterations_for(m, lower_tol)).policy;
        SoftValues sv = evaluate_soft(m, pistar, lower_tol);
        Vec g = exact_dx_q(m, pistar, sv.v, lower_tol);
        Vec da;
        exact_best_response_jacobian(m, pistar, g, &da);
        Vec term = prob.upper.d_x(x, pistar, ctx);
        Vec dpi = prob.upper.d_pi(x, pistar, ctx);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) {
                double coef = dpi[m.sa(s, a)] * pistar(s, a) / m.lambda;
                if (coef == 0.0) continue;
                for (int j = 0; j < m.d; ++j)
                    term[j] += coef * da[std::size_t(m.sa(s, a)) * m.d + j];
            }
        for (int j = 0; j < prob.d; ++j) out[j] += w * term[j];
    }
    return out;
}

Vec exact_return_gradient(const BilevelProblem& prob, const Vec& x, double lower_tol) {
    if (!prob.decomposable())
        throw std::invalid_argument("exact_return_gradient: problem has no leader reward tables");
    Vec out(prob.d, 0.0);
    for (int ctx = 0; ctx < prob.num_contexts(); ++ctx) {
        double w = prob.context_weights[ctx];
        if (w == 0.0) continue;
        TabularCmdp m = prob.make_cmdp(x, ctx);
        Policy pistar = soft_value_iteration(m, soft_vi_iterations_for(m, lower_tol)).policy;
        SoftValues soft = evaluate_soft(m, pistar, lower_tol);
        Vec rbar = prob.leader_reward(x, ctx);
        Vec drbar = prob.d_leader_reward(x, ctx);
        SoftValues plain = evaluate_plain(m, pistar, rbar, lower_tol);
        // fixed-policy part plus initial-distribution score
        Vec gr = exact_dx_q_table(m, pistar, plain.v, drbar, lower_tol);
        for (int s = 0; s < m.S; ++s) {
            if (m.init[s] <= 0.0 && !m.has_d_log_init()) continue;
            for (int j = 0; j < m.d; ++j) {
                double acc = 0.0;
                for (int a = 0; a < m.A; ++a)
                    acc += pistar(s, a) * gr[std::size_t(m.sa(s, a)) * m.d + j];
                double term = m.init[s] * acc;
                if (m.has_d_log_init()) term += m.init[s] * m.d_log_mu(s)[j] * plain.v[s];
                out[j] += w * term;
            }
        }
        // policy-sensitivity part through the best-response Jacobian
        Vec gsoft = exact_dx_q(m, pistar, soft.v, lower_tol);
        Vec jac = exact_best_response_jacobian(m, pistar, gsoft);
        Vec occ = discounted_occupancy(m, pistar, lower_tol);
        for (int s = 0; s < m.S; ++s) {
            if (occ[s] <= 0.0) continue;
            for (int a = 0; a < m.A; ++a) {
                double coef = occ[s] * plain.q[m.sa(s, a)];
                if (coef == 0.0) continue;
                for (int j = 0; j < m.d; ++j)
                    out[j] += w * coef * jac[std::size_t(m.sa(s, a)) * m.d + j];
            }
        }
    }
    return out;
}

UpperLoss induced_upper_loss(const BilevelProblem& prob, double tol) {
    if (!prob.decomposable())
        throw std::invalid_argument("induced_upper_loss: problem has no leader reward tables");
    auto make = prob.make_cmdp;
    auto rbar_of = prob.leader_reward;
    auto drbar_of = prob.d_leader_reward;
    UpperLoss loss;
    loss.eval = [make, rbar_of, tol](const Vec& x, const Policy& pi, int ctx) {
        TabularCmdp m = make(x, ctx);
        SoftValues sv = evaluate_plain(m, pi, rbar_of(x, ctx), tol);
        double total = 0.0;
        for (int s = 0; s < m.S; ++s) total += m.init[s] * sv.v[s];
        return -total;
    };
    loss.d_x = [make, rbar_of, drbar_of, tol](const Vec& x, const Policy& pi, int ctx) {
        // The fixed-policy part unrolls into an occupancy average of the
        // auxiliary generator g(s,a) = d_x rbar + gamma sum_{s'} P dlogP Vbar;
        // one occupancy solve and (when transitions depend on x) one plain
        // evaluation replace the dense S*A*d recursion.
        TabularCmdp m = make(x, ctx);
        Vec out(m.d, 0.0);
        Vec occ = discounted_occupancy(m, pi, tol);
        Vec drbar = drbar_of(x, ctx);
        Vec vbar;
        if (m.has_d_log_transition() || m.has_d_log_init())
            vbar = evaluate_plain(m, pi, rbar_of(x, ctx), tol).v;
        for (int s = 0; s < m.S; ++s) {
            if (occ[s] <= 0.0) continue;
            for (int a = 0; a < m.A; ++a) {
                double w = occ[s] * pi(s, a);
                if (w == 0.0) continue;
                const double* dr = &drbar[std::size_t(m.sa(s, a)) * m.d];
                for (int j = 0; j < m.d; ++j) out[j] -= w * dr[j];
                if (m.has_d_log_transition() && m.gamma > 0.0) {
                    const double* p = m.p_row(s, a);
                    for (int s2 = 0; s2 < m.S; ++s2) {
                        if (p[s2] <= 0.0) continue;
                        double coef = w * m.gamma * p[s2] * vbar[s2];
                        if (coef == 0.0) continue;
                        const double* dlp = m.d_log_p(s, a, s2);
                        for (int j = 0; j < m.d; ++j) out[j] -= coef * dlp[j];
                    }
                }
            }
        }
        if (m.has_d_log_init())
            for (int s = 0; s < m.S; ++s) {
                if (m.init[s] <= 0.0) continue;
                const double* dlm = m.d_log_mu(s);
                for (int j = 0; j < m.d; ++j) out[j] -= m.init[s] * dlm[j] * vbar[s];
            }
        return out;
    };
    loss.d_pi = [make, rbar_of, tol](const Vec& x, const Policy& pi, int ctx) {
        TabularCmdp m = make(x, ctx);
        SoftValues sv = evaluate_plain(m, pi, rbar_of(x, ctx), tol);
        Vec occ = discounted_occupancy(m, pi, tol);
        Vec out(std::size_t(m.S) * m.A, 0.0);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) out[m.sa(s, a)] = -occ[s] * sv.q[m.sa(s, a)];
        return out;
    };
    return loss;
}

namespace {

// adds the reward-derivative head sum and score-weighted regularized tail of
// one rollout into out (sign +1/-1); head length T ~ Geo(1-gamma), tail
// length T' ~ Geo(1-sqrt(gamma)).
void accumulate_rollout(const TabularCmdp& m, const Policy& pi, const Start& start, double sign,
                        Vec& out, Rng& rng, long* env_steps) {
    const double gamma = m.gamma;
    long T = rng.geometric_gamma(gamma);
    long Tp = rng.geometric_gamma(std::sqrt(gamma));
    Trajectory tr = sample_trajectory(m, pi, start, int(T + Tp + 1), rng);
    if (env_steps) *env_steps += tr.length();
    if (m.has_d_reward())
        for (long t = 0; t <= T; ++t) {
            const double* dr = m.d_r(tr.states[t], tr.actions[t]);
            for (int j = 0; j < m.d; ++j) out[j] += sign * dr[j];
        }
    if (m.has_d_log_transition() && gamma > 0.0) {
        double tail = 0.0;
        double sg = std::sqrt(gamma);
        double wgt = 1.0;
        for (long t = T + 1; t <= T + Tp + 1; ++t) {
            tail += wgt * (tr.rewards[t] + m.lambda * entropy(pi.row(tr.states[t]), m.A));
            wgt *= sg;
        }
        double coef = sign * tail * gamma / (1.0 - gamma);
        const double* dlp = m.d_log_p(tr.states[T], tr.actions[T], tr.states[T + 1]);
        for (int j = 0; j < m.d; ++j) out[j] += coef * dlp[j];
    }
}

}  // namespace

Vec grad_estimator(const TabularCmdp& m, const Policy& pi_o, int s, int a, Rng& rng,
                   long* env_steps) {
    Vec out(m.d, 0.0);
    accumulate_rollout(m, pi_o, Start::state_action(s, a), +1.0, out, rng, env_steps);
    accumulate_rollout(m, pi_o, Start::state(s), -1.0, out, rng, env_steps);
    return out;
}

Vec hpgd_gradient_sample(const UpperLoss& loss, const TabularCmdp& m, const Policy& pi_o,
                         const Vec& nu, const Vec& x, int ctx, Rng& rng, long* env_steps) {
    int s = rng.categorical(nu.data(), m.S);
    int a = rng.categorical(pi_o.row(s), m.A);
    Vec g = loss.d_x(x, pi_o, ctx);
    Vec dpi = loss.d_pi(x, pi_o, ctx);
    double coef = dpi[m.sa(s, a)] / (m.lambda * nu[s]);
    if (coef != 0.0) {
        Vec e = grad_estimator(m, pi_o, s, a, rng, env_steps);
        axpy(coef, e, g);
    }
    return g;
}

Vec decomposable_gradient_sample(const TabularCmdp& m, const Policy& pi_o, const Vec& rbar,
                                 const Vec& d_rbar, Rng& rng, long* env_steps) {
    const double gamma = m.gamma;
    Vec out(m.d, 0.0);
    long T = rng.geometric_gamma(gamma);
    long Tp = rng.geometric_gamma(std::sqrt(gamma));
    Trajectory tr = sample_trajectory(m, pi_o, Start::init(), int(T + Tp), rng);
    if (env_steps) *env_steps += tr.length();
    for (long t = 0; t <= T; ++t) {
        const double* dr = &d_rbar[std::size_t(m.sa(tr.states[t], tr.actions[t])) * m.d];
        for (int j = 0; j < m.d; ++j) out[j] += dr[j];
    }
    double tail = 0.0;
    {
        double sg = std::sqrt(gamma);
        double wgt = 1.0;
        for (long t = T; t <= T + Tp; ++t) {
            tail += wgt * rbar[m.sa(tr.states[t], tr.actions[t])];
            wgt *= sg;
        }
    }
    int sT = tr.states[T], aT = tr.actions[T];
    Vec adv = grad_estimator(m, pi_o, sT, aT, rng, env_steps);
    double coef = tail / (m.lambda * (1.0 - gamma));
    for (int j = 0; j < m.d; ++j) out[j] += coef * adv[j];
    double score_coef = tail / (1.0 - gamma);
    if (T >= 1) {
        if (m.has_d_log_transition()) {
            const double* dlp = m.d_log_p(tr.states[T - 1], tr.actions[T - 1], sT);
            for (int j = 0; j < m.d; ++j) out[j] += score_coef * dlp[j];
        }
    } else if (m.has_d_log_init()) {
        const double* dlm = m.d_log_mu(sT);
        for (int j = 0; j < m.d; ++j) out[j] += score_coef * dlm[j];
    }
    return out;
}

Vec rtq_level_probabilities(int K) {
    if (K < 1) throw std::invalid_argument("rtq_level_probabilities: K must be >= 1");
    Vec p(K);
    double z = 1.0 - std::pow(2.0, -double(K));
    for (int k = 1; k <= K; ++k) p[k - 1] = std::pow(2.0, -double(k)) / z;
    return p;
}

long rtq_checkpoint(double c, int j) {
    return long(std::ceil(c * double(j) * std::pow(2.0, double(j))));
}

double rtq_expected_inner_iterations(const RtqConfig& cfg) {
    Vec p = rtq_level_probabilities(cfg.K);
    double e = 0.0;
    for (int k = 1; k <= cfg.K; ++k) e += p[k - 1] * double(rtq_checkpoint(cfg.c, k + 1));
    return e;
}

namespace {

// one HPGD-form combination at a given checkpoint policy; `a` was drawn from
// pi_draw, and the estimate targets pi_eval (importance ratio corrects the
// action draw when they differ).
Vec level_gradient(const UpperLoss& loss, const TabularCmdp& m, const Policy& pi_eval,
                   const Policy& pi_draw, const Vec& nu, const Vec& x, int ctx, int s, int a,
                   const Vec& adv_mean) {
    Vec g = loss.d_x(x, pi_eval, ctx);
    Vec dpi = loss.d_pi(x, pi_eval, ctx);
    double ratio = (&pi_eval == &pi_draw) ? 1.0 : pi_eval(s, a) / pi_draw(s, a);
    double coef = ratio * dpi[m.sa(s, a)] / (m.lambda * nu[s]);
    axpy(coef, adv_mean, g);
    return g;
}

Vec mean_grad_estimator(const TabularCmdp& m, const Policy& pi, int s, int a, long n, Rng& rng) {
    Vec acc(m.d, 0.0);
    for (long i = 0; i < n; ++i) {
        Vec e = grad_estimator(m, pi, s, a, rng);
        axpy(1.0, e, acc);
    }
    for (auto& v : acc) v /= double(n);
    return acc;
}

}  // namespace

RtqSample rtq_gradient_sample(const UpperLoss& loss, const TabularCmdp& m, const RtqConfig& cfg,
                              const Vec& nu, const Vec& x, int ctx, Rng& rng) {
    Vec pk = rtq_level_probabilities(cfg.K);
    int k = rng.categorical(pk.data(), cfg.K) + 1;
    long t1 = rtq_checkpoint(cfg.c, 1);
    long tk = rtq_checkpoint(cfg.c, k);
    long tk1 = rtq_checkpoint(cfg.c, k + 1);

    SoftQConfig qc;
    qc.iterations = tk1;
    qc.checkpoints = {t1, tk, tk1};
    std::sort(qc.checkpoints.begin(), qc.checkpoints.end());
    qc.checkpoints.erase(std::unique(qc.checkpoints.begin(), qc.checkpoints.end()),
                         qc.checkpoints.end());
    SoftQResult qr = soft_q_learning(m, qc, rng);
    auto policy_at = [&](long t) -> const Policy& {
        for (std::size_t i = 0; i < qc.checkpoints.size(); ++i)
            if (qc.checkpoints[i] == t) return qr.checkpoint_policies[i];
        throw std::logic_error("rtq_gradient_sample: missing checkpoint");
    };
    const Policy& pi_t1 = policy_at(t1);
    const Policy& pi_tk = policy_at(tk);
    const Policy& pi_tk1 = policy_at(tk1);

    int s = rng.categorical(nu.data(), m.S);
    int a = rng.categorical(pi_tk1.row(s), m.A);
    int a_base = rng.categorical(pi_t1.row(s), m.A);

    long batch = long(cfg.batch_base) << k;
    Vec adv_hi = mean_grad_estimator(m, pi_tk1, s, a, batch, rng);
    Vec adv_lo = mean_grad_estimator(m, pi_tk, s, a, batch, rng);
    Vec adv_base = grad_estimator(m, pi_t1, s, a_base, rng);

    Vec base = level_gradient(loss, m, pi_t1, pi_t1, nu, x, ctx, s, a_base, adv_base);
    Vec hi = level_gradient(loss, m, pi_tk1, pi_tk1, nu, x, ctx, s, a, adv_hi);
    Vec lo = level_gradient(loss, m, pi_tk, pi_tk1, nu, x, ctx, s, a, adv_lo);

    RtqSample out;
    out.grad = base;
    double inv_p = 1.0 / pk[k - 1];
    for (int j = 0; j < m.d; ++j) out.grad[j] += inv_p * (hi[j] - lo[j]);
    out.inner_iterations = tk1;
    out.level = k;
    return out;
}

RtqSample vanilla_q_gradient_sample(const UpperLoss& loss, const TabularCmdp& m,
                                    const RtqConfig& cfg, const Vec& nu, const Vec& x, int ctx,
                                    Rng& rng) {
    long tend = rtq_checkpoint(cfg.c, cfg.K + 1);
    SoftQConfig qc;
    qc.iterations = tend;
    SoftQResult qr = soft_q_learning(m, qc, rng);
    RtqSample out;
    out.grad = hpgd_gradient_sample(loss, m, qr.policy, nu, x, ctx, rng);
    out.inner_iterations = tend;
    out.level = cfg.K;
    return out;
}

}  // namespace cbrl
