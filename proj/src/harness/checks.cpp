#include "cbrl/harness/checks.hpp"

#include <cmath>
#include <sstream>

#include "cbrl/envs/synthetic.hpp"
#include "cbrl/harness/config.hpp"
#include "cbrl/harness/metrics.hpp"
#include "cbrl/hypergrad.hpp"
#include "cbrl/outer_optim.hpp"

namespace cbrl {

namespace {

struct MeanVar {
    Vec mean, se;
};

// per-coordinate mean and standard error of a stream of Vec samples
MeanVar summarize(const std::vector<Vec>& samples) {
    MeanVar mv;
    std::size_t d = samples.front().size();
    std::size_t n = samples.size();
    mv.mean.assign(d, 0.0);
    mv.se.assign(d, 0.0);
    for (const auto& s : samples)
        for (std::size_t j = 0; j < d; ++j) mv.mean[j] += s[j];
    for (std::size_t j = 0; j < d; ++j) mv.mean[j] /= double(n);
    for (const auto& s : samples)
        for (std::size_t j = 0; j < d; ++j) {
            double dev = s[j] - mv.mean[j];
            mv.se[j] += dev * dev;
        }
    for (std::size_t j = 0; j < d; ++j)
        mv.se[j] = std::sqrt(mv.se[j] / double(n - 1) / double(n)) + 1e-12;
    return mv;
}

// worst |mean - target| / se over coordinates
double worst_sigma(const MeanVar& mv, const Vec& target) {
    double worst = 0.0;
    for (std::size_t j = 0; j < mv.mean.size(); ++j)
        worst = std::max(worst, std::abs(mv.mean[j] - target[j]) / mv.se[j]);
    return worst;
}

Vec random_x(int d, Rng& rng, double scale = 0.5) {
    Vec x(d);
    for (auto& v : x) v = scale * rng.normal();
    return x;
}

std::string sigma_detail(double sigma, double bound) {
    std::ostringstream out;
    out << "worst |mean-ref|/se = " << format_double(sigma) << " (bound " << format_double(bound)
        << ")";
    return out.str();
}

double rel_err(const Vec& a, const Vec& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        num += (a[j] - b[j]) * (a[j] - b[j]);
        den += b[j] * b[j];
    }
    return std::sqrt(num) / (std::sqrt(den) + 1e-300);
}

// central finite difference of a scalar function of x
template <class F>
Vec central_fd(const Vec& x, double eps, F&& f) {
    Vec g(x.size());
    Vec xp = x;
    for (std::size_t j = 0; j < x.size(); ++j) {
        xp[j] = x[j] + eps;
        double hi = f(xp);
        xp[j] = x[j] - eps;
        double lo = f(xp);
        xp[j] = x[j];
        g[j] = (hi - lo) / (2.0 * eps);
    }
    return g;
}

double loss_at(const BilevelProblem& p, const Vec& x, double tol) {
    double total = 0.0;
    for (int ctx = 0; ctx < p.num_contexts(); ++ctx) {
        TabularCmdp m = p.make_cmdp(x, ctx);
        Policy pi = soft_value_iteration(m, soft_vi_iterations_for(m, tol)).policy;
        total += p.context_weights[ctx] * p.upper.eval(x, pi, ctx);
    }
    return total;
}

}  // namespace

std::vector<CheckResult> check_gradients(const CheckParams& p) {
    std::vector<CheckResult> results;
    Rng rng(p.seed);

    SyntheticSpec spec;
    spec.x_dep_init = true;
    BilevelProblem native = make_synthetic_problem(spec);
    BilevelProblem decomp = make_synthetic_decomposable(spec);

    double worst_native = 0.0, worst_decomp = 0.0, worst_consistency = 0.0;
    for (int trial = 0; trial < 3; ++trial) {
        Vec x = random_x(native.d, rng);
        Vec hg = exact_hypergradient(native, x, 1e-12);
        Vec fd = central_fd(x, p.fd_eps, [&](const Vec& z) { return loss_at(native, z, 1e-12); });
        worst_native = std::max(worst_native, rel_err(hg, fd));

        Vec rg = exact_return_gradient(decomp, x, 1e-12);
        Vec fdr = central_fd(x, p.fd_eps,
                             [&](const Vec& z) { return evaluate_upper_return(decomp, z, 1e-12); });
        worst_decomp = std::max(worst_decomp, rel_err(rg, fdr));

        Vec hgd = exact_hypergradient(decomp, x, 1e-12);
        for (int j = 0; j < decomp.d; ++j) hgd[j] += rg[j];
        double n = std::sqrt(norm2sq(hgd)) / (std::sqrt(norm2sq(rg)) + 1e-300);
        worst_consistency = std::max(worst_consistency, n);
    }
    results.push_back({"exact-hypergradient-vs-fd", worst_native <= 1e-3,
                       "max rel err " + format_double(worst_native) + " (bound 0.001)"});
    results.push_back({"exact-return-gradient-vs-fd", worst_decomp <= 1e-3,
                       "max rel err " + format_double(worst_decomp) + " (bound 0.001)"});
    results.push_back({"induced-loss-consistency", worst_consistency <= 1e-6,
                       "max rel norm of hg + rg = " + format_double(worst_consistency) +
                           " (bound 1e-06)"});
    return results;
}

std::vector<CheckResult> check_unbiasedness(const CheckParams& p) {
    std::vector<CheckResult> results;
    Rng rng(p.seed);

    SyntheticSpec spec;
    BilevelProblem prob = make_synthetic_problem(spec);
    Vec x = random_x(prob.d, rng, 0.3);
    TabularCmdp m = prob.make_cmdp(x, 0);

    // rough oracle policy: the estimator is unbiased at any fixed pi_o
    Policy pi_o = soft_value_iteration(m, 3).policy;
    SoftValues sv = evaluate_soft(m, pi_o, 1e-13);
    Vec g = exact_dx_q(m, pi_o, sv.v, 1e-13);
    Vec dadv(std::size_t(m.S) * m.A * prob.d, 0.0);
    for (int s = 0; s < m.S; ++s)
        for (int j = 0; j < prob.d; ++j) {
            double avg = 0.0;
            for (int a = 0; a < m.A; ++a)
                avg += pi_o(s, a) * g[(std::size_t(s) * m.A + a) * prob.d + j];
            for (int a = 0; a < m.A; ++a)
                dadv[(std::size_t(s) * m.A + a) * prob.d + j] =
                    g[(std::size_t(s) * m.A + a) * prob.d + j] - avg;
        }

    long per_pair = std::max<long>(p.samples / (m.S * m.A), 200);
    double worst = 0.0;
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a) {
            std::vector<Vec> samples;
            samples.reserve(per_pair);
            for (long i = 0; i < per_pair; ++i)
                samples.push_back(grad_estimator(m, pi_o, s, a, rng));
            MeanVar mv = summarize(samples);
            Vec target(prob.d);
            for (int j = 0; j < prob.d; ++j)
                target[j] = dadv[(std::size_t(s) * m.A + a) * prob.d + j];
            worst = std::max(worst, worst_sigma(mv, target));
        }
    results.push_back({"grad-estimator-unbiased", worst <= 4.0, sigma_detail(worst, 4.0)});

    // full HPGD sample against the analytic loss gradient at pi_o
    Vec nu(m.S, 1.0 / m.S);
    Vec ref = prob.upper.d_x(x, pi_o, 0);
    Vec dpi = prob.upper.d_pi(x, pi_o, 0);
    for (int s = 0; s < m.S; ++s)
        for (int a = 0; a < m.A; ++a)
            for (int j = 0; j < prob.d; ++j)
                ref[j] += dpi[std::size_t(s) * m.A + a] / m.lambda * pi_o(s, a) *
                          dadv[(std::size_t(s) * m.A + a) * prob.d + j];
    long n_full = std::max<long>(p.samples / 2, 1000);
    std::vector<Vec> samples;
    samples.reserve(n_full);
    for (long i = 0; i < n_full; ++i)
        samples.push_back(hpgd_gradient_sample(prob.upper, m, pi_o, nu, x, 0, rng));
    MeanVar mv = summarize(samples);
    double sig = worst_sigma(mv, ref);
    results.push_back({"hpgd-sample-unbiased", sig <= 4.0, sigma_detail(sig, 4.0)});
    return results;
}

std::vector<CheckResult> check_decomposable(const CheckParams& p) {
    std::vector<CheckResult> results;
    Rng rng(p.seed);

    SyntheticSpec spec;
    spec.x_dep_init = true;
    BilevelProblem prob = make_synthetic_decomposable(spec);
    Vec x = random_x(prob.d, rng, 0.3);
    TabularCmdp m = prob.make_cmdp(x, 1);
    Policy pi = soft_value_iteration(m, soft_vi_iterations_for(m, 1e-12)).policy;
    Vec rbar = prob.leader_reward(x, 1);
    Vec drbar = prob.d_leader_reward(x, 1);

    // single-context reference at the exact best response
    BilevelProblem sub = prob;
    sub.context_weights = {0.0, 1.0};
    Vec ref = exact_return_gradient(sub, x, 1e-12);

    std::vector<Vec> samples;
    samples.reserve(p.samples);
    for (long i = 0; i < p.samples; ++i)
        samples.push_back(decomposable_gradient_sample(m, pi, rbar, drbar, rng));
    MeanVar mv = summarize(samples);
    double sig = worst_sigma(mv, ref);
    results.push_back({"decomposable-sample-unbiased", sig <= 4.0, sigma_detail(sig, 4.0)});
    return results;
}

std::vector<CheckResult> check_rtq(const CheckParams& p) {
    std::vector<CheckResult> results;
    Rng rng(p.seed);

    RtqConfig rc;
    rc.c = 1.0;
    rc.K = 3;
    {
        // expected cost: direct summation over levels
        Vec probs = rtq_level_probabilities(rc.K);
        double direct = 0.0;
        for (int k = 1; k <= rc.K; ++k) direct += probs[k - 1] * double(rtq_checkpoint(rc.c, k + 1));
        double closed = rtq_expected_inner_iterations(rc);
        bool pass = std::abs(direct - closed) <= 1e-12 * std::max(1.0, std::abs(direct));
        results.push_back({"rtq-expected-cost-formula", pass,
                           "direct " + format_double(direct) + " vs closed " +
                               format_double(closed)});
    }

    SyntheticSpec spec;
    spec.n_contexts = 1;
    BilevelProblem prob = make_synthetic_problem(spec);
    Vec x = random_x(prob.d, rng, 0.3);
    TabularCmdp m = prob.make_cmdp(x, 0);
    Vec nu(m.S, 1.0 / m.S);

    RtqConfig rq;
    rq.c = 20.0;
    rq.K = 3;

    // measured mean cost within 5% of the expectation
    {
        double total = 0.0;
        for (long i = 0; i < p.rtq_draws; ++i) {
            RtqSample s = rtq_gradient_sample(prob.upper, m, rq, nu, x, 0, rng);
            total += double(s.inner_iterations);
        }
        double mean = total / double(p.rtq_draws);
        double expect = rtq_expected_inner_iterations(rq);
        double rel = std::abs(mean - expect) / expect;
        results.push_back({"rtq-cost-accounting", rel <= 0.05,
                           "mean " + format_double(mean) + " vs expected " +
                               format_double(expect) + ", rel err " + format_double(rel) +
                               " (bound 0.05)"});
    }

    // mean equality against the vanilla single-level estimator, pooled SE
    {
        long n = p.rtq_mean_samples;
        std::vector<Vec> rt, va;
        rt.reserve(n);
        va.reserve(n);
        for (long i = 0; i < n; ++i)
            rt.push_back(rtq_gradient_sample(prob.upper, m, rq, nu, x, 0, rng).grad);
        for (long i = 0; i < n; ++i)
            va.push_back(vanilla_q_gradient_sample(prob.upper, m, rq, nu, x, 0, rng).grad);
        MeanVar mr = summarize(rt);
        MeanVar mv = summarize(va);
        double worst = 0.0;
        for (int j = 0; j < prob.d; ++j) {
            double pooled = std::sqrt(mr.se[j] * mr.se[j] + mv.se[j] * mv.se[j]);
            worst = std::max(worst, std::abs(mr.mean[j] - mv.mean[j]) / pooled);
        }
        results.push_back({"rtq-mean-equality", worst <= 4.0, sigma_detail(worst, 4.0)});
    }
    return results;
}

std::vector<CheckResult> check_contraction(const CheckParams& p) {
    std::vector<CheckResult> results;
    Rng rng(p.seed);

    SyntheticSpec spec;
    BilevelProblem prob = make_synthetic_problem(spec);
    Vec x = random_x(prob.d, rng, 0.3);
    TabularCmdp m = prob.make_cmdp(x, 0);

    // soft-VI error contracts by at least gamma per sweep
    SoftViResult ref = soft_value_iteration(m, soft_vi_iterations_for(m, 1e-13) + 50);
    Vec v(m.S, 0.0);
    double prev = 0.0;
    for (int s = 0; s < m.S; ++s) prev = std::max(prev, std::abs(v[s] - ref.v[s]));
    bool pass = true;
    double worst_ratio = 0.0;
    for (int sweep = 0; sweep < 40; ++sweep) {
        v = soft_bellman_v(m, v);
        double err = 0.0;
        for (int s = 0; s < m.S; ++s) err = std::max(err, std::abs(v[s] - ref.v[s]));
        if (err < 1e-11) break;
        double ratio = err / prev;
        worst_ratio = std::max(worst_ratio, ratio);
        if (ratio > m.gamma + 1e-12) pass = false;
        prev = err;
    }
    results.push_back({"soft-vi-contraction", pass,
                       "max per-sweep error ratio " + format_double(worst_ratio) + " (gamma " +
                           format_double(m.gamma) + ")"});
    return results;
}

std::vector<CheckResult> check_rates(const CheckParams& p) {
    std::vector<CheckResult> results;

    SyntheticSpec spec;
    BilevelProblem prob = make_synthetic_problem(spec);
    Rng xr(p.seed);
    Vec x = random_x(prob.d, xr, 0.3);
    TabularCmdp m = prob.make_cmdp(x, 0);
    Policy ref = soft_value_iteration(m, soft_vi_iterations_for(m, 1e-12)).policy;

    // soft Q-learning: most seeds land within 0.05 of pi* in sup norm
    {
        int ok = 0;
        const int n_seeds = 20;
        for (int i = 0; i < n_seeds; ++i) {
            SoftQConfig cfg;
            cfg.iterations = 200000;
            Rng rng(p.seed + 1000 + i);
            SoftQResult res = soft_q_learning(m, cfg, rng);
            double dist = 0.0;
            for (int s = 0; s < m.S; ++s)
                for (int a = 0; a < m.A; ++a)
                    dist = std::max(dist, std::abs(res.policy(s, a) - ref(s, a)));
            if (dist <= 0.05) ++ok;
        }
        results.push_back({"soft-q-rate", ok >= 18,
                           std::to_string(ok) + "/20 seeds within 0.05 of the optimum (need 18)"});
    }

    // NPG: fitted slope of the log policy gap respects log(1 - eta lambda)
    {
        NpgConfig cfg;
        cfg.iterations = 150;
        cfg.eta = 0.2 * (1.0 - m.gamma) / m.lambda;
        NpgResult res = npg(m, cfg);
        double rate = 1.0 - cfg.eta * m.lambda;
        int lo = 2, hi = 0;
        for (int t = lo; t < int(res.log_policy_gap.size()); ++t) {
            if (res.log_policy_gap[t] < 1e-11) break;
            hi = t;
        }
        double slope = 0.0;
        bool pass = false;
        if (hi > lo + 20) {
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            int n = 0;
            for (int t = lo; t <= hi; ++t) {
                double y = std::log(res.log_policy_gap[t]);
                sx += t;
                sy += y;
                sxx += double(t) * t;
                sxy += t * y;
                ++n;
            }
            slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            pass = slope <= std::log(rate) + 0.05;
        }
        results.push_back({"npg-rate", pass,
                           "fitted log-gap slope " + format_double(slope) + " vs bound " +
                               format_double(std::log(rate)) + " + 0.05"});
    }
    return results;
}

std::vector<CheckResult> run_check_suite(const std::string& name, const CheckParams& p) {
    if (name == "gradients") return check_gradients(p);
    if (name == "unbiasedness") return check_unbiasedness(p);
    if (name == "decomposable") return check_decomposable(p);
    if (name == "rtq") return check_rtq(p);
    if (name == "contraction") return check_contraction(p);
    if (name == "rates") return check_rates(p);
    if (name == "all") {
        std::vector<CheckResult> all;
        for (const char* suite :
             {"gradients", "unbiasedness", "decomposable", "rtq", "contraction", "rates"}) {
            auto part = run_check_suite(suite, p);
            all.insert(all.end(), part.begin(), part.end());
        }
        return all;
    }
    throw ConfigError("unknown check suite: " + name +
                      " (try gradients, unbiasedness, decomposable, rtq, contraction, rates, all)");
}

}  // namespace cbrl
