#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbrl {

using Vec = std::vector<double>;

inline void axpy(double a, const Vec& x, Vec& y) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2sq(const Vec& a) { return dot(a, a); }

inline double max_abs(const Vec& a) {
    double m = 0.0;
    for (double v : a)
        if (std::abs(v) > m) m = std::abs(v);
    return m;
}

// Tabular contextual MDP for one realized context: follower reward r(s,a),
// transition kernel P(s'|s,a), initial distribution mu(s), discount gamma,
// entropy temperature lambda, and derivative tables with respect to the
// d-dimensional leader decision x. Derivative tables may be empty, meaning
// identically zero. By convention d_log_transition entries on zero-probability
// transitions are stored as 0 and never sampled.
struct TabularCmdp {
    int S = 0;
    int A = 0;
    int d = 0;
    double gamma = 0.0;
    double lambda = 1.0;

    Vec reward;            // S*A
    Vec transition;        // S*A*S, row-stochastic over the last index
    Vec init;              // S
    Vec d_reward;          // S*A*d or empty
    Vec d_log_transition;  // S*A*S*d or empty
    Vec d_log_init;        // S*d or empty

    int sa(int s, int a) const { return s * A + a; }
    double r(int s, int a) const { return reward[sa(s, a)]; }
    double p(int s, int a, int s2) const { return transition[(std::size_t)sa(s, a) * S + s2]; }
    const double* p_row(int s, int a) const { return &transition[(std::size_t)sa(s, a) * S]; }

    bool has_d_reward() const { return !d_reward.empty(); }
    bool has_d_log_transition() const { return !d_log_transition.empty(); }
    bool has_d_log_init() const { return !d_log_init.empty(); }

    const double* d_r(int s, int a) const { return &d_reward[(std::size_t)sa(s, a) * d]; }
    const double* d_log_p(int s, int a, int s2) const {
        return &d_log_transition[((std::size_t)sa(s, a) * S + s2) * d];
    }
    const double* d_log_mu(int s) const { return &d_log_init[(std::size_t)s * d]; }

    // max_{s,a} |r(s,a)|
    double reward_bound() const {
        double m = 0.0;
        for (double v : reward)
            if (std::abs(v) > m) m = std::abs(v);
        return m;
    }
};

// Stochastic policy, S*A row-stochastic.
struct Policy {
    int S = 0;
    int A = 0;
    Vec prob;  // S*A

    Policy() = default;
    Policy(int S_, int A_) : S(S_), A(A_), prob((std::size_t)S_ * A_, 1.0 / A_) {}

    double operator()(int s, int a) const { return prob[(std::size_t)s * A + a]; }
    double& at(int s, int a) { return prob[(std::size_t)s * A + a]; }
    const double* row(int s) const { return &prob[(std::size_t)s * A]; }
};

struct SoftValues {
    Vec v;  // S
    Vec q;  // S*A
};

// (s_t, a_t, r_t) triples for t = 0..T; r_t = r(s_t, a_t).
struct Trajectory {
    std::vector<int> states;
    std::vector<int> actions;
    Vec rewards;

    int length() const { return static_cast<int>(states.size()); }
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structural checks: shapes, stochasticity of P and mu, gamma/lambda ranges,
// and sum_{s'} P(s'|s,a) dlogP(s'|s,a) = 0 per coordinate (normalization of the
// transition family cannot depend on x). Throws ValidationError.
void validate(const TabularCmdp& m, double tol = 1e-6);

}  // namespace cbrl
