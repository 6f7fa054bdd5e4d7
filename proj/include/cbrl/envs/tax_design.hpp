#pragma once

#include <vector>

#include "cbrl/problem.hpp"

namespace cbrl {

// Dynamic tax design: a household with binned wealth chooses hours worked and
// consumption of three goods; the leader sets an income tax x and VAT rates
// y1..y3 (d = 4). Wealth evolves by after-tax income minus spending plus
// Gaussian noise, discretized over the bins with absorbing boundary bins.
// Contexts are household preference groups (Cobb-Douglas exponents).
struct TaxDesignSpec {
    int wealth_bins = 41;
    double wealth_min = -100.0;
    double wealth_max = 100.0;
    int hours_points = 5;        // grid over [0, hours_max]
    int consumption_points = 3;  // per-good grid over [0, consumption_max]
    bool full_grid = false;      // 10 hours points, 5 consumption points
    double hours_max = 8.0;
    double consumption_max = 5.0;
    double gamma = 0.99;
    double lambda = 0.2;
    double theta = 0.1;      // disutility of hours^2
    double phi = 5.0;        // leader's weight on log revenue
    double wage = 1.0;
    double noise_std = 5.0;  // transition noise varsigma
    double init_std = 1.189207115002721;  // sqrt of variance sqrt(2)
    double epsilon0 = 1e-3;  // revenue log offset
    double box_lo = 0.0;
    double box_hi = 2.0;
    int episode_truncation = 200;  // rollout metadata; estimators use geometric horizons
};

struct TaxActionGrid {
    std::vector<double> hours;
    std::vector<double> consumption;  // per-good levels
    int n_actions = 0;                // hours * consumption^3
    // decode a into (hours index, consumption indices)
    void decode(int a, int& hi, int ci[3]) const;
};

TaxActionGrid make_tax_action_grid(const TaxDesignSpec& spec);

TabularCmdp make_tax_cmdp(const TaxDesignSpec& spec, const Vec& x, int ctx);

// x0 = (0.3, 0.3, 0.3, 0.3), box [box_lo, box_hi]^4, two equal-weight groups.
BilevelProblem make_tax_problem(const TaxDesignSpec& spec);

}  // namespace cbrl
