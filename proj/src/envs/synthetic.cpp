#include "cbrl/envs/synthetic.hpp"

#include <cmath>

#include "cbrl/cmdp_core.hpp"
#include "cbrl/hypergrad.hpp"

namespace cbrl {

namespace {

// deterministic per-instance coefficient tables drawn from a seeded stream
struct SynthTables {
    int S, A, d;
    Vec l0, lw;      // transition logits: base S*A*S, coupling S*A*S*d
    Vec r0, rw;      // follower reward: base S*A, linear S*A*d
    Vec m0, mw;      // init logits: base S, coupling S*d
    Vec c;           // native upper-loss policy coefficients, S*A
    Vec b0, bw;      // leader reward: base S*A, linear S*A*d

    SynthTables(const SyntheticSpec& spec, int ctx) {
        S = spec.n_states;
        A = spec.n_actions;
        d = spec.dim;
        Rng rng(splitmix64(spec.instance_seed) + 0x51a5u * std::uint64_t(ctx + 1));
        auto fill = [&rng](Vec& v, std::size_t n, double scale) {
            v.resize(n);
            for (auto& e : v) e = scale * rng.normal();
        };
        fill(l0, std::size_t(S) * A * S, 1.0);
        fill(lw, std::size_t(S) * A * S * d, 0.7);
        fill(r0, std::size_t(S) * A, 1.0);
        fill(rw, std::size_t(S) * A * d, 0.5);
        fill(m0, std::size_t(S), 0.5);
        fill(mw, std::size_t(S) * d, 0.5);
        fill(c, std::size_t(S) * A, 1.0);
        fill(b0, std::size_t(S) * A, 1.0);
        fill(bw, std::size_t(S) * A * d, 0.5);
    }
};

SynthTables tables_for(const SyntheticSpec& spec, int ctx) { return SynthTables(spec, ctx); }

}  // namespace

TabularCmdp make_synthetic_cmdp(const SyntheticSpec& spec, const Vec& x, int ctx) {
    SynthTables t = tables_for(spec, ctx);
    const int S = t.S, A = t.A, d = t.d;
    const double kappa = spec.coupling;
    TabularCmdp m;
    m.S = S;
    m.A = A;
    m.d = d;
    m.gamma = spec.gamma;
    m.lambda = spec.lambda;

    m.reward.resize(std::size_t(S) * A);
    m.d_reward = t.rw;
    for (int i = 0; i < S * A; ++i) {
        m.reward[i] = t.r0[i];
        for (int j = 0; j < d; ++j) m.reward[i] += t.rw[std::size_t(i) * d + j] * x[j];
    }

    m.transition.resize(std::size_t(S) * A * S);
    if (spec.x_dep_transitions) m.d_log_transition.assign(std::size_t(S) * A * S * d, 0.0);
    Vec logits(S);
    for (int sa = 0; sa < S * A; ++sa) {
        for (int s2 = 0; s2 < S; ++s2) {
            logits[s2] = t.l0[std::size_t(sa) * S + s2];
            if (spec.x_dep_transitions)
                for (int j = 0; j < d; ++j)
                    logits[s2] += kappa * t.lw[(std::size_t(sa) * S + s2) * d + j] * x[j];
        }
        double lse = logsumexp(logits.data(), S);
        for (int s2 = 0; s2 < S; ++s2)
            m.transition[std::size_t(sa) * S + s2] = std::exp(logits[s2] - lse);
        if (spec.x_dep_transitions)
            for (int j = 0; j < d; ++j) {
                double wbar = 0.0;
                for (int s2 = 0; s2 < S; ++s2)
                    wbar += m.transition[std::size_t(sa) * S + s2] *
                            t.lw[(std::size_t(sa) * S + s2) * d + j];
                for (int s2 = 0; s2 < S; ++s2)
                    m.d_log_transition[(std::size_t(sa) * S + s2) * d + j] =
                        kappa * (t.lw[(std::size_t(sa) * S + s2) * d + j] - wbar);
            }
    }

    m.init.resize(S);
    {
        Vec il(S);
        for (int s = 0; s < S; ++s) {
            il[s] = t.m0[s];
            if (spec.x_dep_init)
                for (int j = 0; j < d; ++j) il[s] += kappa * t.mw[std::size_t(s) * d + j] * x[j];
        }
        double lse = logsumexp(il.data(), S);
        for (int s = 0; s < S; ++s) m.init[s] = std::exp(il[s] - lse);
        if (spec.x_dep_init) {
            m.d_log_init.assign(std::size_t(S) * d, 0.0);
            for (int j = 0; j < d; ++j) {
                double wbar = 0.0;
                for (int s = 0; s < S; ++s) wbar += m.init[s] * t.mw[std::size_t(s) * d + j];
                for (int s = 0; s < S; ++s)
                    m.d_log_init[std::size_t(s) * d + j] =
                        kappa * (t.mw[std::size_t(s) * d + j] - wbar);
            }
        }
    }
    return m;
}

BilevelProblem make_synthetic_problem(const SyntheticSpec& spec) {
    BilevelProblem p;
    p.d = spec.dim;
    p.context_weights.assign(spec.n_contexts, 1.0 / spec.n_contexts);
    SyntheticSpec sp = spec;
    p.make_cmdp = [sp](const Vec& x, int ctx) { return make_synthetic_cmdp(sp, x, ctx); };
    double rho = spec.rho;
    std::vector<Vec> cs;
    for (int ctx = 0; ctx < spec.n_contexts; ++ctx) cs.push_back(tables_for(spec, ctx).c);
    p.upper.eval = [cs, rho](const Vec& x, const Policy& pi, int ctx) {
        double f = 0.5 * rho * norm2sq(x);
        const Vec& c = cs[ctx];
        for (std::size_t i = 0; i < c.size(); ++i) f += c[i] * pi.prob[i];
        return f;
    };
    p.upper.d_x = [rho](const Vec& x, const Policy&, int) {
        Vec g = x;
        for (auto& v : g) v *= rho;
        return g;
    };
    p.upper.d_pi = [cs](const Vec&, const Policy&, int ctx) { return cs[ctx]; };
    p.x0.assign(spec.dim, 0.0);
    return p;
}

BilevelProblem make_synthetic_decomposable(const SyntheticSpec& spec) {
    BilevelProblem p;
    p.d = spec.dim;
    p.context_weights.assign(spec.n_contexts, 1.0 / spec.n_contexts);
    SyntheticSpec sp = spec;
    p.make_cmdp = [sp](const Vec& x, int ctx) { return make_synthetic_cmdp(sp, x, ctx); };
    int d = spec.dim;
    std::vector<Vec> base, lin;
    for (int ctx = 0; ctx < spec.n_contexts; ++ctx) {
        SynthTables t = tables_for(spec, ctx);
        base.push_back(t.b0);
        lin.push_back(t.bw);
    }
    p.leader_reward = [base, lin, d](const Vec& x, int ctx) {
        Vec r = base[ctx];
        for (std::size_t i = 0; i < r.size(); ++i)
            for (int j = 0; j < d; ++j) r[i] += lin[ctx][i * d + j] * x[j];
        return r;
    };
    p.d_leader_reward = [lin](const Vec&, int ctx) { return lin[ctx]; };
    p.x0.assign(spec.dim, 0.0);
    p.upper = induced_upper_loss(p, 1e-10);
    return p;
}

}  // namespace cbrl
