#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "cbrl/cmdp_core.hpp"

using namespace cbrl;

namespace {

// Independent in-test linear-solve oracle for soft policy evaluation:
// V = (I - gamma P_pi)^{-1} (r_pi + lambda H_pi), dense Gaussian elimination.
std::vector<double> solve_linear(std::vector<std::vector<double>> A, std::vector<double> b) {
    const int n = (int)b.size();
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
        std::swap(A[col], A[piv]);
        std::swap(b[col], b[piv]);
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = A[r][col] / A[col][col];
            for (int c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (int i = 0; i < n; ++i) x[i] = b[i] / A[i][i];
    return x;
}

double entropy_ref(const double* p, int n) {
    double h = 0.0;
    for (int i = 0; i < n; ++i)
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    return h;
}

Vec soft_eval_oracle(const TabularCmdp& m, const Policy& pi) {
    std::vector<std::vector<double>> A(m.S, std::vector<double>(m.S, 0.0));
    std::vector<double> b(m.S, 0.0);
    for (int s = 0; s < m.S; ++s) {
        A[s][s] = 1.0;
        b[s] = m.lambda * entropy_ref(pi.row(s), m.A);
        for (int a = 0; a < m.A; ++a) {
            b[s] += pi(s, a) * m.r(s, a);
            for (int s2 = 0; s2 < m.S; ++s2) A[s][s2] -= m.gamma * pi(s, a) * m.p(s, a, s2);
        }
    }
    return solve_linear(A, b);
}

// Seeded 3-state 2-action instance with dense random structure.
TabularCmdp make_test_cmdp(std::uint64_t seed, double gamma = 0.9, double lambda = 0.7) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    TabularCmdp m;
    m.S = 3;
    m.A = 2;
    m.d = 0;
    m.gamma = gamma;
    m.lambda = lambda;
    m.reward.resize(m.S * m.A);
    for (auto& r : m.reward) r = 2.0 * unif(eng) - 1.0;
    m.transition.resize((std::size_t)m.S * m.A * m.S);
    for (int sa = 0; sa < m.S * m.A; ++sa) {
        double tot = 0.0;
        for (int s2 = 0; s2 < m.S; ++s2) {
            double w = std::exp(unif(eng));
            m.transition[(std::size_t)sa * m.S + s2] = w;
            tot += w;
        }
        for (int s2 = 0; s2 < m.S; ++s2) m.transition[(std::size_t)sa * m.S + s2] /= tot;
    }
    m.init = {0.5, 0.3, 0.2};
    return m;
}

Policy make_test_policy(std::uint64_t seed, int S, int A) {
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> unif(0.1, 1.0);
    Policy pi(S, A);
    for (int s = 0; s < S; ++s) {
        double tot = 0.0;
        for (int a = 0; a < A; ++a) {
            pi.at(s, a) = unif(eng);
            tot += pi.at(s, a);
        }
        for (int a = 0; a < A; ++a) pi.at(s, a) /= tot;
    }
    return pi;
}

}  // namespace

TEST_CASE("entropy values") {
    Vec p1 = {0.75, 0.25};
    CHECK(entropy(p1) == doctest::Approx(0.5623351446188083).epsilon(1e-9));
    Vec p2 = {0.25, 0.25, 0.25, 0.25};
    CHECK(entropy(p2) == doctest::Approx(1.3862943611198906).epsilon(1e-12));
    Vec p3 = {1.0, 0.0};
    CHECK(entropy(p3) == 0.0);  // 0 log 0 = 0
    Vec p4 = {0.5, 0.5, 0.0, 0.0};
    CHECK(entropy(p4) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("logsumexp is shift-stable") {
    Vec v1 = {3.0};
    CHECK(logsumexp(v1) == doctest::Approx(3.0));
    Vec v2 = {1.0, 2.0, 3.0};
    double direct = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
    CHECK(logsumexp(v2) == doctest::Approx(direct).epsilon(1e-12));
    Vec v3 = {1000.0, 1000.0};
    CHECK(logsumexp(v3) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
    Vec v4 = {1000.0, 999.0};
    CHECK(logsumexp(v4) == doctest::Approx(1000.0 + std::log1p(std::exp(-1.0))).epsilon(1e-12));
    Vec v5 = {-1e9, -1e9 + 1.0};
    CHECK(std::isfinite(logsumexp(v5)));
}

TEST_CASE("softmax_policy rows") {
    Vec q = {1.0, 0.0};
    Policy pi = softmax_policy(q, 1, 2, 1.0);
    CHECK(pi(0, 0) == doctest::Approx(0.7310585786300049).epsilon(1e-9));
    CHECK(pi(0, 1) == doctest::Approx(0.2689414213699951).epsilon(1e-9));
    // tiny temperature: no NaN, near-deterministic, rows normalized
    Policy pi2 = softmax_policy(q, 1, 2, 1e-4);
    CHECK(std::isfinite(pi2(0, 0)));
    CHECK(pi2(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pi2(0, 0) + pi2(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    // multi-state rows normalize independently
    Vec q3 = {1.0, 0.0, -2.0, 5.0, 5.0, 5.0};
    Policy pi3 = softmax_policy(q3, 2, 3, 0.5);
    for (int s = 0; s < 2; ++s) {
        double tot = 0.0;
        for (int a = 0; a < 3; ++a) tot += pi3(s, a);
        CHECK(tot == doctest::Approx(1.0).epsilon(1e-12));
    }
    for (int a = 0; a < 3; ++a) CHECK(pi3(1, a) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("bandit policy evaluation frozen value") {
    // one state, two actions, r=(1,0), gamma=0.5, lambda=1, uniform policy:
    // V = (<pi,r> + log 2) / (1 - gamma) = 2.3862943611...
    TabularCmdp m;
    m.S = 1;
    m.A = 2;
    m.gamma = 0.5;
    m.lambda = 1.0;
    m.reward = {1.0, 0.0};
    m.transition = {1.0, 1.0};  // self-loops
    m.init = {1.0};
    Policy pi(1, 2);
    SoftValues sv = evaluate_soft(m, pi, 1e-12);
    CHECK(sv.v[0] == doctest::Approx(2.3862943611198906).epsilon(1e-9));
    CHECK(sv.q[0] == doctest::Approx(1.0 + 0.5 * sv.v[0]).epsilon(1e-9));
    CHECK(sv.q[1] == doctest::Approx(0.5 * sv.v[0]).epsilon(1e-9));
    CHECK(lower_objective(m, pi) == doctest::Approx(sv.v[0]).epsilon(1e-10));
}

TEST_CASE("evaluate_soft matches an independent linear solve") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        TabularCmdp m = make_test_cmdp(seed);
        Policy pi = make_test_policy(seed + 100, m.S, m.A);
        Vec v_ref = soft_eval_oracle(m, pi);
        SoftValues sv = evaluate_soft(m, pi, 1e-11);
        for (int s = 0; s < m.S; ++s) CHECK(sv.v[s] == doctest::Approx(v_ref[s]).epsilon(1e-8));
        // Q consistency: Q = r + gamma P V
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) {
                double q = m.r(s, a);
                for (int s2 = 0; s2 < m.S; ++s2) q += m.gamma * m.p(s, a, s2) * v_ref[s2];
                CHECK(sv.q[m.sa(s, a)] == doctest::Approx(q).epsilon(1e-8));
            }
    }
}

TEST_CASE("evaluate_plain matches the linear solve without entropy") {
    TabularCmdp m = make_test_cmdp(9);
    Policy pi = make_test_policy(10, m.S, m.A);
    // oracle: same system with lambda H dropped
    std::vector<std::vector<double>> A(m.S, std::vector<double>(m.S, 0.0));
    std::vector<double> b(m.S, 0.0);
    for (int s = 0; s < m.S; ++s) {
        A[s][s] = 1.0;
        for (int a = 0; a < m.A; ++a) {
            b[s] += pi(s, a) * m.r(s, a);
            for (int s2 = 0; s2 < m.S; ++s2) A[s][s2] -= m.gamma * pi(s, a) * m.p(s, a, s2);
        }
    }
    Vec v_ref = solve_linear(A, b);
    SoftValues sv = evaluate_plain(m, pi, m.reward, 1e-11);
    for (int s = 0; s < m.S; ++s) CHECK(sv.v[s] == doctest::Approx(v_ref[s]).epsilon(1e-8));
}

TEST_CASE("lower_objective agrees with Monte-Carlo rollouts") {
    TabularCmdp m = make_test_cmdp(4, 0.9, 0.7);
    Policy pi = make_test_policy(5, m.S, m.A);
    double j = lower_objective(m, pi, 1e-12);

    // Independent MC oracle: unbiased geometric-tail estimate
    //   R = sum_{t=0}^{T} gamma^{t/2} (r_t + lambda H(pi;s_t)),  T ~ Geo(1-sqrt(gamma))
    std::mt19937_64 eng(777);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vec hs(m.S);
    for (int s = 0; s < m.S; ++s) hs[s] = entropy_ref(pi.row(s), m.A);
    const long N = 1000000;
    double sum = 0.0, sumsq = 0.0;
    double sq = std::sqrt(m.gamma);
    for (long i = 0; i < N; ++i) {
        double u = std::max(unif(eng), 1e-300);
        long T = (long)std::floor(std::log(u) / std::log(sq));
        // initial state
        double us = unif(eng);
        int s = us < 0.5 ? 0 : (us < 0.8 ? 1 : 2);
        double ret = 0.0, w = 1.0;
        for (long t = 0; t <= T; ++t) {
            double ua = unif(eng);
            int a = 0;
            double c = 0.0;
            for (; a < m.A - 1; ++a) {
                c += pi(s, a);
                if (ua < c) break;
            }
            ret += w * (m.r(s, a) + m.lambda * hs[s]);
            w *= sq;
            double u2 = unif(eng);
            double cc = 0.0;
            int s2 = m.S - 1;
            for (int k = 0; k < m.S; ++k) {
                cc += m.p(s, a, k);
                if (u2 < cc) {
                    s2 = k;
                    break;
                }
            }
            s = s2;
        }
        sum += ret;
        sumsq += ret * ret;
    }
    double mean = sum / N;
    double se = std::sqrt((sumsq / N - mean * mean) / N);
    CHECK(std::abs(mean - j) < 3.0 * se + 1e-9);
}

TEST_CASE("two-step Bellman expansion by hand") {
    // deterministic chain: action a moves to state a; r(s,a) = s + 0.1 a
    TabularCmdp m;
    m.S = 2;
    m.A = 2;
    m.gamma = 0.8;
    m.lambda = 0.6;
    m.reward = {0.0, 0.1, 1.0, 1.1};
    m.transition = {1, 0, 0, 1, 1, 0, 0, 1};
    m.init = {1.0, 0.0};
    Vec v0(m.S, 0.0);
    Vec v1 = soft_bellman_v(m, v0);
    for (int s = 0; s < 2; ++s) {
        double ref = 0.6 * std::log(std::exp((s + 0.0) / 0.6) + std::exp((s + 0.1) / 0.6));
        CHECK(v1[s] == doctest::Approx(ref).epsilon(1e-12));
    }
    Vec v2 = soft_bellman_v(m, v1);
    for (int s = 0; s < 2; ++s) {
        double q0 = s + 0.0 + 0.8 * v1[0];
        double q1 = s + 0.1 + 0.8 * v1[1];
        double ref = 0.6 * std::log(std::exp(q0 / 0.6) + std::exp(q1 / 0.6));
        CHECK(v2[s] == doctest::Approx(ref).epsilon(1e-12));
    }
    Vec q2 = soft_bellman_q(m, v1);
    CHECK(q2[m.sa(1, 1)] == doctest::Approx(1.1 + 0.8 * v1[1]).epsilon(1e-12));
}

TEST_CASE("soft advantage centers to zero under the policy") {
    TabularCmdp m = make_test_cmdp(6);
    Policy pi = make_test_policy(7, m.S, m.A);
    SoftValues sv = evaluate_soft(m, pi, 1e-11);
    Vec adv = soft_advantage(m, pi, sv);
    for (int s = 0; s < m.S; ++s) {
        double c = 0.0;
        for (int a = 0; a < m.A; ++a) c += pi(s, a) * adv[m.sa(s, a)];
        CHECK(std::abs(c) < 1e-12);
        // definition: A = Q - sum_a' pi Q
        double qbar = 0.0;
        for (int a = 0; a < m.A; ++a) qbar += pi(s, a) * sv.q[m.sa(s, a)];
        for (int a = 0; a < m.A; ++a)
            CHECK(adv[m.sa(s, a)] == doctest::Approx(sv.q[m.sa(s, a)] - qbar).epsilon(1e-12));
    }
}

TEST_CASE("sample_trajectory semantics and state frequencies") {
    TabularCmdp m = make_test_cmdp(8);
    Policy pi = make_test_policy(9, m.S, m.A);
    Rng rng(314);

    Trajectory tr = sample_trajectory(m, pi, Start::state_action(2, 1), 5, rng);
    REQUIRE(tr.length() == 6);
    CHECK(tr.states[0] == 2);
    CHECK(tr.actions[0] == 1);
    for (int t = 0; t < tr.length(); ++t)
        CHECK(tr.rewards[t] == doctest::Approx(m.r(tr.states[t], tr.actions[t])));

    Trajectory tr2 = sample_trajectory(m, pi, Start::state(1), 3, rng);
    CHECK(tr2.states[0] == 1);
    REQUIRE(tr2.length() == 4);

    // empirical state frequencies over a long rollout match the stationary
    // distribution of P_pi (computed by in-test power iteration)
    std::vector<double> mu(m.S, 1.0 / m.S);
    for (int it = 0; it < 10000; ++it) {
        std::vector<double> nxt(m.S, 0.0);
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a)
                for (int s2 = 0; s2 < m.S; ++s2) nxt[s2] += mu[s] * pi(s, a) * m.p(s, a, s2);
        mu = nxt;
    }
    const int Tlen = 200000;
    Trajectory big = sample_trajectory(m, pi, Start::init(), Tlen, rng);
    std::vector<double> freq(m.S, 0.0);
    for (int s : big.states) freq[s] += 1.0 / (Tlen + 1);
    for (int s = 0; s < m.S; ++s) CHECK(std::abs(freq[s] - mu[s]) < 0.02);
}

TEST_CASE("discounted occupancy solves its linear system") {
    TabularCmdp m = make_test_cmdp(12);
    Policy pi = make_test_policy(13, m.S, m.A);
    Vec occ = discounted_occupancy(m, pi, 1e-13);
    double tot = 0.0;
    for (double v : occ) tot += v;
    CHECK(tot == doctest::Approx(1.0 / (1.0 - m.gamma)).epsilon(1e-9));
    // d = mu + gamma P_pi^T d
    for (int s2 = 0; s2 < m.S; ++s2) {
        double rhs = m.init[s2];
        for (int s = 0; s < m.S; ++s)
            for (int a = 0; a < m.A; ++a) rhs += m.gamma * occ[s] * pi(s, a) * m.p(s, a, s2);
        CHECK(occ[s2] == doctest::Approx(rhs).epsilon(1e-8));
    }
}

TEST_CASE("validate rejects malformed models") {
    TabularCmdp m = make_test_cmdp(20);
    CHECK_NOTHROW(validate(m));
    TabularCmdp bad = m;
    bad.transition[0] += 0.1;  // row no longer sums to 1
    CHECK_THROWS_AS(validate(bad), ValidationError);
    TabularCmdp bad2 = m;
    bad2.init = {0.7, 0.2, 0.2};
    CHECK_THROWS_AS(validate(bad2), ValidationError);
    TabularCmdp bad3 = m;
    bad3.gamma = 1.0;
    CHECK_THROWS_AS(validate(bad3), ValidationError);
    // dlogP whose P-weighted row sum is nonzero violates normalization
    TabularCmdp bad4 = m;
    bad4.d = 1;
    bad4.d_log_transition.assign((std::size_t)m.S * m.A * m.S, 1.0);
    CHECK_THROWS_AS(validate(bad4), ValidationError);
    bad4.d_reward.assign((std::size_t)m.S * m.A, 0.0);
    CHECK_THROWS_AS(validate(bad4), ValidationError);
}
