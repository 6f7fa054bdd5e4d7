#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbrl {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct CheckParams {
    long samples = 100000;        // Monte-Carlo sample counts
    std::uint64_t seed = 2026;
    double fd_eps = 1e-5;
    long rtq_draws = 1000;        // draws for the cost-accounting check
    long rtq_mean_samples = 60000;
    int rtq_variance_samples = 4000;
};

// Estimator-correctness suites on the seeded synthetic family. Each returns
// one result per property; all are deterministic given params.seed.
std::vector<CheckResult> check_gradients(const CheckParams& p);     // exact DP vs FD
std::vector<CheckResult> check_unbiasedness(const CheckParams& p);  // grad_estimator & hpgd sample
std::vector<CheckResult> check_decomposable(const CheckParams& p);  // trajectory-only estimator
std::vector<CheckResult> check_rtq(const CheckParams& p);           // mean equality + cost accounting
std::vector<CheckResult> check_contraction(const CheckParams& p);   // Bellman/dx_q residual decay
std::vector<CheckResult> check_rates(const CheckParams& p);         // soft-VI / NPG convergence rates

std::vector<CheckResult> run_check_suite(const std::string& name, const CheckParams& p);

}  // namespace cbrl
