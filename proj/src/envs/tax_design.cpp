#include "cbrl/envs/tax_design.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cbrl/cmdp_core.hpp"
#include "cbrl/hypergrad.hpp"

namespace cbrl {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.7071067811865476); }
double normal_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

const double kAlphaGroups[2][3] = {{0.6, 0.3, 0.1}, {0.1, 0.7, 0.2}};

struct Bins {
    int n;
    double lo, hi, width;
    std::vector<double> centers;

    Bins(int n_, double lo_, double hi_) : n(n_), lo(lo_), hi(hi_) {
        width = (hi - lo) / double(n - 1);
        centers.resize(n);
        for (int i = 0; i < n; ++i) centers[i] = lo + width * i;
    }
    double lower_edge(int i) const { return centers[i] - 0.5 * width; }
    double upper_edge(int i) const { return centers[i] + 0.5 * width; }

    // Phi(zu) - Phi(zl) without cancellation: in the far tails the mass is a
    // difference of same-side tail probabilities, which erfc gives to full
    // relative precision.
    static double interval_mass(double zl, double zu) {
        if (zl >= 0.0)
            return 0.5 * (std::erfc(zl * 0.7071067811865476) -
                          std::erfc(zu * 0.7071067811865476));
        if (zu <= 0.0)
            return 0.5 * (std::erfc(-zu * 0.7071067811865476) -
                          std::erfc(-zl * 0.7071067811865476));
        return normal_cdf(zu) - normal_cdf(zl);
    }

    // bin masses of N(mean, std^2); boundary bins absorb the tails.
    // Optionally writes dP/dmean into dp.
    void gaussian_masses(double mean, double std, double* p, double* dp) const {
        for (int i = 0; i < n; ++i) {
            double zl = (lower_edge(i) - mean) / std;
            double zu = (upper_edge(i) - mean) / std;
            if (i == 0)
                p[i] = normal_cdf(zu);
            else if (i == n - 1)
                p[i] = 0.5 * std::erfc(zl * 0.7071067811865476);
            else
                p[i] = interval_mass(zl, zu);
            if (p[i] < 0.0) p[i] = 0.0;
            if (dp) {
                double fl = i == 0 ? 0.0 : normal_pdf(zl);
                double fu = i == n - 1 ? 0.0 : normal_pdf(zu);
                dp[i] = (fl - fu) / std;
            }
        }
    }
};

double sigma_utility(double s) { return s > 0.0 ? std::log(s / 20.0 + 1.0) : 0.0; }

}  // namespace

void TaxActionGrid::decode(int a, int& hi, int ci[3]) const {
    int nc = int(consumption.size());
    ci[2] = a % nc;
    a /= nc;
    ci[1] = a % nc;
    a /= nc;
    ci[0] = a % nc;
    hi = a / nc;
}

TaxActionGrid make_tax_action_grid(const TaxDesignSpec& spec) {
    TaxActionGrid g;
    int hp = spec.full_grid ? 10 : spec.hours_points;
    int cp = spec.full_grid ? 5 : spec.consumption_points;
    g.hours.resize(hp);
    for (int i = 0; i < hp; ++i) g.hours[i] = spec.hours_max * double(i) / double(hp - 1);
    g.consumption.resize(cp);
    for (int i = 0; i < cp; ++i)
        g.consumption[i] = spec.consumption_max * double(i) / double(cp - 1);
    g.n_actions = hp * cp * cp * cp;
    return g;
}

TabularCmdp make_tax_cmdp(const TaxDesignSpec& spec, const Vec& x, int ctx) {
    if (x.size() != 4) throw std::invalid_argument("tax design: x must have dimension 4");
    if (ctx < 0 || ctx > 1) throw std::invalid_argument("tax design: context out of range");
    const double* alpha = kAlphaGroups[ctx];
    TaxActionGrid grid = make_tax_action_grid(spec);
    Bins bins(spec.wealth_bins, spec.wealth_min, spec.wealth_max);
    const int S = bins.n, A = grid.n_actions, d = 4;
    const double tax = x[0], w = spec.wage, vs = spec.noise_std;
    const double y[3] = {x[1], x[2], x[3]};

    TabularCmdp m;
    m.S = S;
    m.A = A;
    m.d = d;
    m.gamma = spec.gamma;
    m.lambda = spec.lambda;
    m.reward.resize(std::size_t(S) * A);
    m.d_reward.assign(std::size_t(S) * A * d, 0.0);
    m.transition.assign(std::size_t(S) * A * S, 0.0);
    m.d_log_transition.assign(std::size_t(S) * A * S * d, 0.0);

    // rows depend on s and a only through mean = center_s + shift(a), and
    // shift depends on a only through (hours index, sum of consumption
    // indices): cache the (S x S) probability/derivative blocks per shift key.
    int nc = int(grid.consumption.size());
    int nkeys = int(grid.hours.size()) * (3 * (nc - 1) + 1);
    std::vector<std::vector<double>> pcache(nkeys), dcache(nkeys);

    for (int a = 0; a < A; ++a) {
        int hi, ci[3];
        grid.decode(a, hi, ci);
        double n = grid.hours[hi];
        double csum = grid.consumption[ci[0]] + grid.consumption[ci[1]] + grid.consumption[ci[2]];
        int key = hi * (3 * (nc - 1) + 1) + (ci[0] + ci[1] + ci[2]);
        if (pcache[key].empty()) {
            pcache[key].resize(std::size_t(S) * S);
            dcache[key].resize(std::size_t(S) * S);
            double shift = (1.0 - tax) * w * n - csum;
            for (int s = 0; s < S; ++s)
                bins.gaussian_masses(bins.centers[s] + shift, vs, &pcache[key][std::size_t(s) * S],
                                     &dcache[key][std::size_t(s) * S]);
        }
        const double dmean_dtax = -w * n;
        for (int s = 0; s < S; ++s) {
            double* row = &m.transition[std::size_t(m.sa(s, a)) * S];
            const double* pc = &pcache[key][std::size_t(s) * S];
            const double* dc = &dcache[key][std::size_t(s) * S];
            for (int s2 = 0; s2 < S; ++s2) {
                row[s2] = pc[s2];
                if (pc[s2] > 0.0)
                    m.d_log_transition[(std::size_t(m.sa(s, a)) * S + s2) * d + 0] =
                        dc[s2] * dmean_dtax / pc[s2];
            }
        }

        // household utility: sigma(s) - theta n^2 + prod_i (c_i/(1+y_i))^alpha_i
        double bundle = 1.0;
        bool zero = false;
        for (int i = 0; i < 3; ++i) {
            double c = grid.consumption[ci[i]];
            if (c <= 0.0) {
                zero = true;
                break;
            }
            bundle *= std::pow(c / (1.0 + y[i]), alpha[i]);
        }
        if (zero) bundle = 0.0;
        double base = -spec.theta * n * n + bundle;
        for (int s = 0; s < S; ++s) {
            m.reward[m.sa(s, a)] = sigma_utility(bins.centers[s]) + base;
            if (bundle > 0.0) {
                double* dr = &m.d_reward[std::size_t(m.sa(s, a)) * d];
                for (int i = 0; i < 3; ++i) dr[1 + i] = -alpha[i] / (1.0 + y[i]) * bundle;
            }
        }
    }

    m.init.resize(S);
    bins.gaussian_masses(0.0, spec.init_std, m.init.data(), nullptr);
    return m;
}

BilevelProblem make_tax_problem(const TaxDesignSpec& spec) {
    BilevelProblem p;
    p.d = 4;
    p.context_weights = {0.5, 0.5};
    TaxDesignSpec sp = spec;
    p.make_cmdp = [sp](const Vec& x, int ctx) { return make_tax_cmdp(sp, x, ctx); };
    TaxActionGrid grid = make_tax_action_grid(spec);
    Bins bins(spec.wealth_bins, spec.wealth_min, spec.wealth_max);
    const int S = bins.n, A = grid.n_actions;

    // leader: omega(s) + sum_i c_i/(1+y_i) + phi log(revenue + eps0),
    // revenue = sum_i c_i y_i/(1+y_i) + w x n.
    auto leader_tables = [sp, grid, bins, S, A](const Vec& x, bool want_grad, Vec& r, Vec& g) {
        const double w = sp.wage, phi = sp.phi;
        const double y[3] = {x[1], x[2], x[3]};
        r.assign(std::size_t(S) * A, 0.0);
        if (want_grad) g.assign(std::size_t(S) * A * 4, 0.0);
        for (int a = 0; a < A; ++a) {
            int hi, ci[3];
            grid.decode(a, hi, ci);
            double n = grid.hours[hi];
            double net = 0.0, rev = 0.0;
            double c[3];
            for (int i = 0; i < 3; ++i) {
                c[i] = grid.consumption[ci[i]];
                net += c[i] / (1.0 + y[i]);
                rev += c[i] * y[i] / (1.0 + y[i]);
            }
            double z = rev + w * x[0] * n + sp.epsilon0;
            double base = net + phi * std::log(z);
            double dd[4] = {0, 0, 0, 0};
            if (want_grad) {
                dd[0] = phi * w * n / z;
                for (int i = 0; i < 3; ++i) {
                    double q = c[i] / ((1.0 + y[i]) * (1.0 + y[i]));
                    dd[1 + i] = -q + phi * q / z;
                }
            }
            for (int s = 0; s < S; ++s) {
                double omega = std::min(bins.centers[s], 0.0);
                r[std::size_t(s) * A + a] = omega + base;
                if (want_grad)
                    for (int j = 0; j < 4; ++j)
                        g[(std::size_t(s) * A + a) * 4 + j] = dd[j];
            }
        }
    };
    p.leader_reward = [leader_tables](const Vec& x, int) {
        Vec r, g;
        leader_tables(x, false, r, g);
        return r;
    };
    p.d_leader_reward = [leader_tables](const Vec& x, int) {
        Vec r, g;
        leader_tables(x, true, r, g);
        return g;
    };
    p.x0.assign(4, 0.3);
    p.box = std::make_pair(Vec(4, spec.box_lo), Vec(4, spec.box_hi));
    p.upper = induced_upper_loss(p, 1e-9);
    return p;
}

}  // namespace cbrl
