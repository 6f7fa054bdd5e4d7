#include "cbrl/lower_solvers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cbrl {

SoftViResult soft_value_iteration(const TabularCmdp& m, int iterations) {
    Vec v(m.S, 0.0);
    std::vector<double> z(m.A);
    for (int it = 0; it < iterations; ++it) {
        Vec q = soft_bellman_q(m, v);
        for (int s = 0; s < m.S; ++s) {
            for (int a = 0; a < m.A; ++a) z[a] = q[m.sa(s, a)] / m.lambda;
            v[s] = m.lambda * logsumexp(z.data(), m.A);
        }
    }
    SoftViResult res;
    res.v = v;
    res.q = soft_bellman_q(m, v);
    res.policy = softmax_policy(res.q, m.S, m.A, m.lambda);
    res.iterations = iterations;
    return res;
}

int soft_vi_iterations_for(const TabularCmdp& m, double delta) {
    if (m.gamma <= 0.0) return 1;
    double vmax = (m.reward_bound() + m.lambda * std::log((double)m.A)) / (1.0 - m.gamma);
    double target = delta * m.lambda / vmax;
    if (target >= 1.0) return 1;
    return std::max(1, (int)std::ceil(std::log(target) / std::log(m.gamma)));
}

SoftQResult soft_q_learning(const TabularCmdp& m, const SoftQConfig& cfg, Rng& rng) {
    double mu_min = 1.0 / (2.0 * m.S * m.A);
    double h = cfg.h > 0.0 ? cfg.h : 4.0 / (mu_min * (1.0 - m.gamma));
    double t0 = cfg.t0 > 0.0 ? cfg.t0 : std::max(4.0 * h, 100.0);

    std::vector<long> cps = cfg.checkpoints;
    std::sort(cps.begin(), cps.end());

    SoftQResult res;
    res.q.assign((std::size_t)m.S * m.A, 0.0);
    res.checkpoint_policies.reserve(cps.size());
    std::vector<double> z(m.A);

    int s = cfg.start_state >= 0 ? cfg.start_state : rng.categorical(m.init.data(), m.S);
    std::size_t next_cp = 0;
    while (next_cp < cps.size() && cps[next_cp] == 0) {
        res.checkpoint_policies.push_back(softmax_policy(res.q, m.S, m.A, m.lambda));
        ++next_cp;
    }
    for (long t = 0; t < cfg.iterations; ++t) {
        int a = rng.uniform_int(m.A);  // uniform behavior policy
        int s2 = rng.categorical(m.p_row(s, a), m.S);
        for (int b = 0; b < m.A; ++b) z[b] = res.q[m.sa(s2, b)] / m.lambda;
        double target = m.r(s, a) + m.gamma * m.lambda * logsumexp(z.data(), m.A);
        double alpha = h / (double(t) + t0);
        double& q = res.q[m.sa(s, a)];
        q += alpha * (target - q);
        s = s2;
        while (next_cp < cps.size() && cps[next_cp] == t + 1) {
            res.checkpoint_policies.push_back(softmax_policy(res.q, m.S, m.A, m.lambda));
            ++next_cp;
        }
    }
    res.policy = softmax_policy(res.q, m.S, m.A, m.lambda);
    res.iterations = cfg.iterations;
    return res;
}

NpgResult npg(const TabularCmdp& m, const NpgConfig& cfg) {
    double eta = cfg.eta > 0.0 ? cfg.eta : (1.0 - m.gamma) / m.lambda;
    if (eta > (1.0 - m.gamma) / m.lambda + 1e-12)
        throw std::invalid_argument("npg: eta exceeds (1-gamma)/lambda");

    // high-accuracy reference for the gap trace
    SoftViResult ref = soft_value_iteration(m, soft_vi_iterations_for(m, 1e-12));
    Vec log_pi_star((std::size_t)m.S * m.A);
    std::vector<double> z(m.A);
    for (int s = 0; s < m.S; ++s) {
        for (int a = 0; a < m.A; ++a) z[a] = ref.q[m.sa(s, a)] / m.lambda;
        double lse = logsumexp(z.data(), m.A);
        for (int a = 0; a < m.A; ++a) log_pi_star[m.sa(s, a)] = z[a] - lse;
    }

    Vec log_pi((std::size_t)m.S * m.A, -std::log((double)m.A));
    NpgResult res;
    auto gap = [&]() {
        double g = 0.0;
        for (std::size_t i = 0; i < log_pi.size(); ++i)
            g = std::max(g, std::abs(log_pi[i] - log_pi_star[i]));
        return g;
    };
    res.log_policy_gap.push_back(gap());

    double w_old = 1.0 - eta * m.lambda / (1.0 - m.gamma);
    double w_q = eta / (1.0 - m.gamma);
    Policy pi(m.S, m.A);
    for (int it = 0; it < cfg.iterations; ++it) {
        for (std::size_t i = 0; i < log_pi.size(); ++i) pi.prob[i] = std::exp(log_pi[i]);
        SoftValues sv = evaluate_soft(m, pi, cfg.eval_tol);
        for (int s = 0; s < m.S; ++s) {
            for (int a = 0; a < m.A; ++a)
                z[a] = w_old * log_pi[m.sa(s, a)] + w_q * sv.q[m.sa(s, a)];
            double lse = logsumexp(z.data(), m.A);
            for (int a = 0; a < m.A; ++a) log_pi[m.sa(s, a)] = z[a] - lse;
        }
        res.log_policy_gap.push_back(gap());
    }
    for (std::size_t i = 0; i < log_pi.size(); ++i) log_pi[i] = std::exp(log_pi[i]);
    res.policy = Policy(m.S, m.A);
    res.policy.prob = log_pi;
    res.iterations = cfg.iterations;
    return res;
}

Vec pg_exact_gradient(const TabularCmdp& m, const Vec& theta, PgEntropyMode mode) {
    Policy pi = softmax_policy(theta, m.S, m.A, 1.0);
    Vec log_pi((std::size_t)m.S * m.A);
    std::vector<double> z(m.A);
    for (int s = 0; s < m.S; ++s) {
        for (int a = 0; a < m.A; ++a) z[a] = theta[m.sa(s, a)];
        double lse = logsumexp(z.data(), m.A);
        for (int a = 0; a < m.A; ++a) log_pi[m.sa(s, a)] = z[a] - lse;
    }
    Vec occ = discounted_occupancy(m, pi, 1e-13);
    Vec grad((std::size_t)m.S * m.A, 0.0);
    if (mode == PgEntropyMode::Regularized) {
        SoftValues sv = evaluate_soft(m, pi, 1e-12);
        Vec adv = soft_advantage(m, pi, sv);
        for (int s = 0; s < m.S; ++s) {
            double hs = entropy(pi.row(s), m.A);
            for (int a = 0; a < m.A; ++a) {
                int i = m.sa(s, a);
                grad[i] = occ[s] * pi(s, a) * (adv[i] - m.lambda * (log_pi[i] + hs));
            }
        }
    } else {
        SoftValues sv = evaluate_plain(m, pi, m.reward, 1e-12);
        for (int s = 0; s < m.S; ++s) {
            double qbar = 0.0;
            for (int a = 0; a < m.A; ++a) qbar += pi(s, a) * sv.q[m.sa(s, a)];
            for (int a = 0; a < m.A; ++a) {
                int i = m.sa(s, a);
                grad[i] = occ[s] * pi(s, a) * (sv.q[i] - qbar);
            }
        }
    }
    return grad;
}

VanillaPgResult vanilla_pg(const TabularCmdp& m, const VanillaPgConfig& cfg, Rng& rng) {
    Vec theta((std::size_t)m.S * m.A, 0.0);
    double inv1mg = 1.0 / (1.0 - m.gamma);
    double sqg = std::sqrt(m.gamma);
    bool reg = cfg.entropy_mode == PgEntropyMode::Regularized;

    for (long it = 0; it < cfg.iterations; ++it) {
        double alpha = cfg.inv_step_schedule ? cfg.alpha / double(it + 1) : cfg.alpha;
        if (cfg.exact_gradient) {
            Vec g = pg_exact_gradient(m, theta, cfg.entropy_mode);
            axpy(alpha, g, theta);
            continue;
        }
        Policy pi = softmax_policy(theta, m.S, m.A, 1.0);
        long T = rng.geometric_gamma(m.gamma);
        Trajectory head = sample_trajectory(m, pi, Start::init(), (int)T, rng);
        int sT = head.states.back(), aT = head.actions.back();
        long Tp = rng.geometric_gamma(sqg);
        Trajectory tail = sample_trajectory(m, pi, Start::state_action(sT, aT), (int)Tp, rng);
        double ret = 0.0, w = 1.0;
        for (int t = 0; t < tail.length(); ++t) {
            double rt = tail.rewards[t];
            if (reg && t >= 1) rt += m.lambda * entropy(pi.row(tail.states[t]), m.A);
            ret += w * rt;
            w *= sqg;
        }
        double scale = alpha * inv1mg;
        double h_sT = reg ? entropy(pi.row(sT), m.A) : 0.0;
        for (int b = 0; b < m.A; ++b) {
            double glog = (b == aT ? 1.0 : 0.0) - pi(sT, b);
            double upd = scale * glog * ret;
            if (reg) {
                double lp = std::log(std::max(pi(sT, b), 1e-300));
                upd -= scale * m.lambda * pi(sT, b) * (lp + h_sT);
            }
            theta[m.sa(sT, b)] += upd;
        }
    }
    VanillaPgResult res;
    res.theta = theta;
    res.policy = softmax_policy(theta, m.S, m.A, 1.0);
    res.iterations = cfg.iterations;
    return res;
}

LowerOracle make_oracle(const TabularCmdp& m, OracleVariant variant, const OracleBudget& budget,
                        Rng& rng) {
    if (!budget.target_delta && !budget.iterations)
        throw std::invalid_argument("make_oracle: budget is empty");
    LowerOracle o;
    o.cmdp = m;
    switch (variant) {
        case OracleVariant::SoftVi: {
            int T = budget.iterations ? (int)*budget.iterations
                                      : soft_vi_iterations_for(m, *budget.target_delta);
            SoftViResult r = soft_value_iteration(m, T);
            o.policy = std::move(r.policy);
            o.iterations_used = T;
            if (budget.target_delta)
                o.accuracy_hint = *budget.target_delta;
            else {
                double vmax =
                    (m.reward_bound() + m.lambda * std::log((double)m.A)) / (1.0 - m.gamma);
                o.accuracy_hint = std::pow(m.gamma, T) * vmax / m.lambda;
            }
            break;
        }
        case OracleVariant::SoftQ: {
            long T;
            if (budget.iterations) {
                T = *budget.iterations;
                o.accuracy_hint = 0.0;
            } else {
                double delta = *budget.target_delta;
                double k = std::max(1.0, std::log2(1.0 / (delta * delta)));
                T = (long)std::ceil(budget.soft_q_c * k / (delta * delta));
                o.accuracy_hint = delta;
            }
            SoftQConfig cfg;
            cfg.iterations = T;
            SoftQResult r = soft_q_learning(m, cfg, rng);
            o.policy = std::move(r.policy);
            o.iterations_used = T;
            break;
        }
        case OracleVariant::Npg: {
            NpgConfig cfg;
            if (budget.iterations) {
                cfg.iterations = (int)*budget.iterations;
                o.accuracy_hint = 0.0;
            } else {
                double delta = *budget.target_delta;
                double eta = (1.0 - m.gamma) / m.lambda;
                double c1 = (m.reward_bound() + m.lambda * std::log((double)m.A)) /
                            (1.0 - m.gamma);
                double rate = 1.0 - eta * m.lambda;  // = gamma
                double target = delta * m.lambda / (2.0 * c1);
                cfg.iterations =
                    rate <= 0.0 || target >= 1.0
                        ? 1
                        : std::max(1, (int)std::ceil(std::log(target) / std::log(rate)));
                o.accuracy_hint = delta;
            }
            NpgResult r = npg(m, cfg);
            o.policy = std::move(r.policy);
            o.iterations_used = cfg.iterations;
            break;
        }
        case OracleVariant::VanillaPg: {
            if (!budget.iterations)
                throw std::invalid_argument(
                    "make_oracle: vanilla policy gradient needs an iteration budget");
            VanillaPgConfig cfg;
            cfg.iterations = *budget.iterations;
            VanillaPgResult r = vanilla_pg(m, cfg, rng);
            o.policy = std::move(r.policy);
            o.iterations_used = cfg.iterations;
            o.accuracy_hint = 0.0;
            break;
        }
    }
    return o;
}

}  // namespace cbrl
