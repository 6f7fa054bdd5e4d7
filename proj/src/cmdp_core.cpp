#include "cbrl/cmdp_core.hpp"

#include <algorithm>
#include <cmath>

namespace cbrl {

double logsumexp(const double* v, int n) {
    double m = v[0];
    for (int i = 1; i < n; ++i) m = std::max(m, v[i]);
    if (!std::isfinite(m)) return m;  // all -inf (or a +inf entry) dominates
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

double entropy(const double* p, int n) {
    double h = 0.0;
    for (int i = 0; i < n; ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

Policy softmax_policy(const Vec& q, int S, int A, double lambda) {
    Policy pi(S, A);
    std::vector<double> z(A);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) z[a] = q[(std::size_t)s * A + a] / lambda;
        double lse = logsumexp(z.data(), A);
        for (int a = 0; a < A; ++a) pi.at(s, a) = std::exp(z[a] - lse);
    }
    return pi;
}

Vec soft_bellman_q(const TabularCmdp& m, const Vec& v) {
    Vec q((std::size_t)m.S * m.A);
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
            const double* row = m.p_row(s, a);
            double ev = 0.0;
            for (int s2 = 0; s2 < m.S; ++s2) ev += row[s2] * v[s2];
            q[m.sa(s, a)] = m.r(s, a) + m.gamma * ev;
        }
    return q;
}

Vec soft_bellman_v(const TabularCmdp& m, const Vec& v) {
    Vec q = soft_bellman_q(m, v);
    Vec out(m.S);
    std::vector<double> z(m.A);
    for (int s = 0; s < m.S; ++s) {
        for (int a = 0; a < m.A; ++a) z[a] = q[m.sa(s, a)] / m.lambda;
        out[s] = m.lambda * logsumexp(z.data(), m.A);
    }
    return out;
}

namespace {

// a-priori sweep cap for fixed-point iteration at accuracy tol*(1-gamma)
int sweep_cap(const TabularCmdp& m, double tol) {
    double vmax = (m.reward_bound() + m.lambda * std::log((double)m.A)) /
                  std::max(1e-12, 1.0 - m.gamma);
    if (vmax <= tol || m.gamma <= 0.0) return 1;
    double t = std::log(tol * (1.0 - m.gamma) / vmax) / std::log(m.gamma);
    return (int)std::ceil(std::max(1.0, t)) + 10;
}

}  // namespace

SoftValues evaluate_soft(const TabularCmdp& m, const Policy& pi, double tol) {
    Vec v(m.S, 0.0);
    Vec hs(m.S);
    for (int s = 0; s < m.S; ++s) hs[s] = entropy(pi.row(s), m.A);
    int cap = sweep_cap(m, tol);
    Vec vn(m.S);
    for (int it = 0; it < cap; ++it) {
        double diff = 0.0;
        for (int s = 0; s < m.S; ++s) {
            double x = m.lambda * hs[s];
            for (int a = 0; a < m.A; ++a) {
                const double* row = m.p_row(s, a);
                double ev = 0.0;
                for (int s2 = 0; s2 < m.S; ++s2) ev += row[s2] * v[s2];
                x += pi(s, a) * (m.r(s, a) + m.gamma * ev);
            }
            vn[s] = x;
            diff = std::max(diff, std::abs(x - v[s]));
        }
        v.swap(vn);
        if (diff <= tol * (1.0 - m.gamma)) break;
    }
    SoftValues sv;
    sv.q = soft_bellman_q(m, v);
    sv.v.assign(m.S, 0.0);
    for (int s = 0; s < m.S; ++s) {
        double x = m.lambda * hs[s];
        for (int a = 0; a < m.A; ++a) x += pi(s, a) * sv.q[m.sa(s, a)];
        sv.v[s] = x;
    }
    return sv;
}

SoftValues evaluate_plain(const TabularCmdp& m, const Policy& pi, const Vec& rbar, double tol) {
    Vec v(m.S, 0.0);
    int cap = sweep_cap(m, tol);
    Vec vn(m.S);
    for (int it = 0; it < cap; ++it) {
        double diff = 0.0;
        for (int s = 0; s < m.S; ++s) {
            double x = 0.0;
            for (int a = 0; a < m.A; ++a) {
                const double* row = m.p_row(s, a);
                double ev = 0.0;
                for (int s2 = 0; s2 < m.S; ++s2) ev += row[s2] * v[s2];
                x += pi(s, a) * (rbar[m.sa(s, a)] + m.gamma * ev);
            }
            vn[s] = x;
            diff = std::max(diff, std::abs(x - v[s]));
        }
        v.swap(vn);
        if (diff <= tol * (1.0 - m.gamma)) break;
    }
    SoftValues sv;
    sv.q.assign((std::size_t)m.S * m.A, 0.0);
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
            const double* row = m.p_row(s, a);
            double ev = 0.0;
            for (int s2 = 0; s2 < m.S; ++s2) ev += row[s2] * v[s2];
            sv.q[m.sa(s, a)] = rbar[m.sa(s, a)] + m.gamma * ev;
        }
    sv.v.assign(m.S, 0.0);
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) sv.v[s] += pi(s, a) * sv.q[m.sa(s, a)];
    return sv;
}

double lower_objective(const TabularCmdp& m, const Policy& pi, double tol) {
    SoftValues sv = evaluate_soft(m, pi, tol);
    double j = 0.0;
    for (int s = 0; s < m.S; ++s) j += m.init[s] * sv.v[s];
    return j;
}

Vec soft_advantage(const TabularCmdp& m, const Policy& pi, const SoftValues& sv) {
    Vec adv((std::size_t)m.S * m.A);
    for (int s = 0; s < m.S; ++s) {
        double qbar = 0.0;
        for (int a = 0; a < m.A; ++a) qbar += pi(s, a) * sv.q[m.sa(s, a)];
        for (int a = 0; a < m.A; ++a) adv[m.sa(s, a)] = sv.q[m.sa(s, a)] - qbar;
    }
    return adv;
}

Trajectory sample_trajectory(const TabularCmdp& m, const Policy& pi, const Start& start,
                             int t_max, Rng& rng) {
    Trajectory tr;
    tr.states.reserve(t_max + 1);
    tr.actions.reserve(t_max + 1);
    tr.rewards.reserve(t_max + 1);
    int s;
    switch (start.kind) {
        case Start::FromInit: s = rng.categorical(m.init.data(), m.S); break;
        default: s = start.s; break;
    }
    for (int t = 0; t <= t_max; ++t) {
        int a;
        if (t == 0 && start.kind == Start::FromStateAction)
            a = start.a;
        else
            a = rng.categorical(pi.row(s), m.A);
        tr.states.push_back(s);
        tr.actions.push_back(a);
        tr.rewards.push_back(m.r(s, a));
        if (t < t_max) s = rng.categorical(m.p_row(s, a), m.S);
    }
    return tr;
}

Vec discounted_occupancy(const TabularCmdp& m, const Policy& pi, double tol) {
    Vec d = m.init;
    Vec dn(m.S);
    // d_{k+1} = mu + gamma P_pi^T d_k, contraction in l1
    int cap = sweep_cap(m, tol);
    for (int it = 0; it < cap; ++it) {
        for (int s2 = 0; s2 < m.S; ++s2) dn[s2] = m.init[s2];
        for (int s = 0; s < m.S; ++s) {
            if (d[s] == 0.0) continue;
            for (int a = 0; a < m.A; ++a) {
                double w = m.gamma * d[s] * pi(s, a);
                if (w == 0.0) continue;
                const double* row = m.p_row(s, a);
                for (int s2 = 0; s2 < m.S; ++s2) dn[s2] += w * row[s2];
            }
        }
        double diff = 0.0;
        for (int s2 = 0; s2 < m.S; ++s2) diff += std::abs(dn[s2] - d[s2]);
        d.swap(dn);
        if (diff <= tol) break;
    }
    return d;
}

void validate(const TabularCmdp& m, double tol) {
    auto fail = [](const std::string& msg) { throw ValidationError(msg); };
    if (m.S <= 0 || m.A <= 0) fail("empty state or action space");
    if (!(m.gamma >= 0.0 && m.gamma < 1.0)) fail("gamma must lie in [0,1)");
    if (!(m.lambda > 0.0)) fail("lambda must be positive");
    if ((int)m.reward.size() != m.S * m.A) fail("reward table shape");
    if (m.transition.size() != (std::size_t)m.S * m.A * m.S) fail("transition tensor shape");
    if ((int)m.init.size() != m.S) fail("init distribution shape");
    for (double v : m.reward)
        if (!std::isfinite(v)) fail("non-finite reward");
    for (int sa = 0; sa < m.S * m.A; ++sa) {
        double tot = 0.0;
        for (int s2 = 0; s2 < m.S; ++s2) {
            double p = m.transition[(std::size_t)sa * m.S + s2];
            if (!(p >= 0.0)) fail("negative transition probability");
            tot += p;
        }
        if (std::abs(tot - 1.0) > tol) fail("transition row does not sum to 1");
    }
    double mtot = 0.0;
    for (double p : m.init) {
        if (!(p >= 0.0)) fail("negative init probability");
        mtot += p;
    }
    if (std::abs(mtot - 1.0) > tol) fail("init distribution does not sum to 1");
    if (m.has_d_reward() && m.d_reward.size() != (std::size_t)m.S * m.A * m.d)
        fail("d_reward table shape");
    if (m.has_d_log_init() && m.d_log_init.size() != (std::size_t)m.S * m.d)
        fail("d_log_init table shape");
    if (m.has_d_log_transition()) {
        if (m.d_log_transition.size() != (std::size_t)m.S * m.A * m.S * m.d)
            fail("d_log_transition tensor shape");
        // normalization of P cannot depend on x: sum_s' P dlogP = 0
        for (int sa = 0; sa < m.S * m.A; ++sa)
            for (int j = 0; j < m.d; ++j) {
                double acc = 0.0;
                for (int s2 = 0; s2 < m.S; ++s2)
                    acc += m.transition[(std::size_t)sa * m.S + s2] *
                           m.d_log_transition[((std::size_t)sa * m.S + s2) * m.d + j];
                if (std::abs(acc) > tol) fail("P-weighted dlogP row sum is nonzero");
            }
    }
    if (m.has_d_log_init()) {
        for (int j = 0; j < m.d; ++j) {
            double acc = 0.0;
            for (int s = 0; s < m.S; ++s) acc += m.init[s] * m.d_log_init[(std::size_t)s * m.d + j];
            if (std::abs(acc) > tol) fail("mu-weighted dlogmu sum is nonzero");
        }
    }
}

}  // namespace cbrl
