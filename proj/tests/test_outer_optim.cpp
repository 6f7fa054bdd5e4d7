#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cbrl/envs/synthetic.hpp"
#include "cbrl/outer_optim.hpp"

using namespace cbrl;

namespace {

BilevelProblem single_context_decomposable() {
    SyntheticSpec spec;
    spec.n_contexts = 1;
    return make_synthetic_decomposable(spec);
}

}  // namespace

TEST_CASE("evaluate_upper_return matches the induced loss at the best response") {
    SyntheticSpec spec;
    BilevelProblem p = make_synthetic_decomposable(spec);
    Vec x = {0.1, -0.2};
    double ret = evaluate_upper_return(p, x, 1e-11);
    double manual = 0.0;
    for (int ctx = 0; ctx < p.num_contexts(); ++ctx) {
        TabularCmdp m = p.make_cmdp(x, ctx);
        Policy pi = soft_value_iteration(m, soft_vi_iterations_for(m, 1e-11)).policy;
        manual -= p.context_weights[ctx] * p.upper.eval(x, pi, ctx);
    }
    CHECK(ret == doctest::Approx(manual).epsilon(1e-9));
}

TEST_CASE("AMD with large K reproduces the exact return gradient") {
    BilevelProblem p = single_context_decomposable();
    OuterConfig cfg;
    cfg.iterations = 1;
    cfg.alpha = 1e-3;
    cfg.clip = 1e9;  // effectively no clipping
    cfg.amd_inner_k = 2500;
    cfg.eval_every = 0;
    Rng rng(42);
    RunRecord rec = run_amd(p, cfg, rng);
    Vec ghat(p.d);
    for (int j = 0; j < p.d; ++j) ghat[j] = (rec.x_final[j] - p.x0[j]) / cfg.alpha;
    Vec exact = exact_return_gradient(p, p.x0, 1e-12);
    for (int j = 0; j < p.d; ++j) CHECK(ghat[j] == doctest::Approx(exact[j]).epsilon(1e-6));
    CHECK(rec.oracle_solves == 1);
    CHECK(rec.inner_iterations == 2500);
}

TEST_CASE("AMD ascends the leader return with warm-started tables") {
    SyntheticSpec spec;
    BilevelProblem p = make_synthetic_decomposable(spec);
    OuterConfig cfg;
    cfg.iterations = 150;
    cfg.alpha = 0.05;
    cfg.amd_inner_k = 10;
    cfg.eval_every = 150;
    Rng rng(3);
    RunRecord rec = run_amd(p, cfg, rng);
    REQUIRE(rec.evals.size() >= 2);
    CHECK(rec.evals.back().upper_return > rec.evals.front().upper_return);
    CHECK(rec.oracle_solves == 150);
    CHECK(rec.inner_iterations == 1500);
}

TEST_CASE("HPGD improves the return and counts one solve per iteration") {
    SyntheticSpec spec;
    BilevelProblem p = make_synthetic_decomposable(spec);
    OuterConfig cfg;
    cfg.iterations = 400;
    cfg.alpha = 0.05;
    cfg.oracle_delta = 0.01;
    cfg.estimator = EstimatorVariant::Decomposable;
    cfg.batch_env_steps = 200;
    cfg.eval_every = 400;
    Rng rng(11);
    RunRecord rec = run_hpgd(p, cfg, rng);
    REQUIRE(rec.evals.size() >= 2);
    CHECK(rec.evals.back().upper_return > rec.evals.front().upper_return);
    CHECK(rec.oracle_solves == 400);
    CHECK(rec.max_applied_step <= cfg.alpha * cfg.clip + 1e-12);
    CHECK(rec.x_hat_iteration >= 1);
    CHECK(rec.x_hat_iteration <= 400);

    // the stochastic estimator is noisy per run, so check mean improvement
    BilevelProblem np = make_synthetic_problem(spec);
    OuterConfig cfg2 = cfg;
    cfg2.estimator = EstimatorVariant::Stochastic;
    cfg2.batch_env_steps = 600;
    cfg2.iterations = 300;
    cfg2.eval_every = 300;
    double first = 0.0, last = 0.0;
    for (unsigned long s = 12; s < 20; ++s) {
        Rng rng2(s);
        RunRecord rec2 = run_hpgd(np, cfg2, rng2);
        CHECK(rec2.oracle_solves == 300);
        first += rec2.evals.front().upper_return / 8.0;
        last += rec2.evals.back().upper_return / 8.0;
    }
    CHECK(last > first);
}

TEST_CASE("HPGD runs with every oracle variant") {
    SyntheticSpec spec;
    BilevelProblem p = make_synthetic_decomposable(spec);
    OuterConfig cfg;
    cfg.iterations = 3;
    cfg.alpha = 0.01;
    cfg.estimator = EstimatorVariant::Decomposable;
    cfg.eval_every = 0;

    for (OracleVariant v :
         {OracleVariant::SoftVi, OracleVariant::SoftQ, OracleVariant::Npg,
          OracleVariant::VanillaPg}) {
        OuterConfig c = cfg;
        c.oracle_variant = v;
        if (v == OracleVariant::SoftQ)
            c.oracle_iterations = 500;  // keep the test fast
        else if (v == OracleVariant::VanillaPg)
            c.oracle_iterations = 200;
        else
            c.oracle_delta = 0.05;
        Rng rng(7);
        RunRecord rec = run_hpgd(p, c, rng);
        CHECK(rec.oracle_solves == 3);
        CHECK(rec.inner_iterations > 0);
    }
}

TEST_CASE("HPGD supports RT-Q and vanilla-Q estimators with cost accounting") {
    SyntheticSpec spec;
    spec.n_contexts = 1;
    BilevelProblem p = make_synthetic_problem(spec);
    OuterConfig cfg;
    cfg.iterations = 40;
    cfg.alpha = 0.02;
    cfg.estimator = EstimatorVariant::Rtq;
    cfg.rtq.K = 2;
    cfg.rtq.c = 5.0;
    cfg.eval_every = 0;
    Rng rng(9);
    RunRecord rec = run_hpgd(p, cfg, rng);
    CHECK(rec.oracle_solves == 40);
    // every sample trains to t_2 or t_3: cost in {ceil(5*2*4), ceil(5*3*8)}
    CHECK(rec.inner_iterations >= 40 * 40);
    CHECK(rec.inner_iterations <= 40 * 120);

    OuterConfig cv = cfg;
    cv.estimator = EstimatorVariant::VanillaQ;
    Rng rng2(10);
    RunRecord rv = run_hpgd(p, cv, rng2);
    CHECK(rv.oracle_solves == 40);
    CHECK(rv.inner_iterations == 40 * 120);  // always trains to t_{K+1}
}

TEST_CASE("zero-order follows the two-point formula and counts two solves") {
    BilevelProblem p = single_context_decomposable();
    OuterConfig cfg;
    cfg.iterations = 1;
    cfg.alpha = 0.01;
    cfg.clip = 1e9;
    cfg.zo_c = 0.7;
    cfg.eval_every = 0;
    std::uint64_t seed = 2718;
    Rng rng(seed);
    RunRecord rec = run_zero_order(p, cfg, rng);
    CHECK(rec.oracle_solves == 2);

    // replay the driver's draws to reconstruct the expected step
    Rng clone(seed);
    (void)clone.uniform_int(1);                                  // x-hat slot
    (void)clone.categorical(p.context_weights.data(), 1);        // context
    Vec z(p.d);
    for (auto& v : z) v = clone.normal();
    double u = cfg.zo_c;
    Vec xp = p.x0;
    axpy(u, z, xp);
    double f0 = evaluate_upper_return(p, p.x0, 1e-10);
    double f1 = evaluate_upper_return(p, xp, 1e-10);
    for (int j = 0; j < p.d; ++j) {
        double expect = p.x0[j] + cfg.alpha * z[j] * (f1 - f0) / u;
        CHECK(rec.x_final[j] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("zero-order makes progress on the synthetic objective") {
    SyntheticSpec spec;
    BilevelProblem p = make_synthetic_decomposable(spec);
    OuterConfig cfg;
    cfg.iterations = 250;
    cfg.alpha = 0.02;
    cfg.zo_c = 0.5;
    cfg.oracle_delta = 1e-6;
    cfg.eval_every = 250;
    Rng rng(5);
    RunRecord rec = run_zero_order(p, cfg, rng);
    CHECK(rec.evals.back().upper_return > rec.evals.front().upper_return);
    CHECK(rec.oracle_solves == 500);
}

TEST_CASE("runs are deterministic in the seed and respect schedules and boxes") {
    SyntheticSpec spec;
    BilevelProblem p = make_synthetic_decomposable(spec);
    OuterConfig cfg;
    cfg.iterations = 60;
    cfg.alpha = 0.4;
    cfg.schedule = StepSchedule::InvSqrtTotal;
    cfg.estimator = EstimatorVariant::Decomposable;
    cfg.oracle_delta = 0.05;
    cfg.eval_every = 30;

    Rng a1(77), a2(77), b(78);
    RunRecord r1 = run_hpgd(p, cfg, a1);
    RunRecord r2 = run_hpgd(p, cfg, a2);
    RunRecord r3 = run_hpgd(p, cfg, b);
    CHECK(r1.x_final == r2.x_final);
    CHECK(r1.x_hat_iteration == r2.x_hat_iteration);
    REQUIRE(r1.evals.size() == r2.evals.size());
    for (std::size_t i = 0; i < r1.evals.size(); ++i)
        CHECK(r1.evals[i].upper_return == r2.evals[i].upper_return);
    CHECK(r1.x_final != r3.x_final);

    // InvSqrtTotal caps the applied step at (alpha/sqrt(T)) * clip
    CHECK(r1.max_applied_step <= cfg.alpha / std::sqrt(60.0) * cfg.clip + 1e-12);

    // box projection keeps iterates inside
    BilevelProblem boxed = p;
    boxed.box = std::make_pair(Vec(p.d, -0.05), Vec(p.d, 0.05));
    OuterConfig cb = cfg;
    cb.schedule = StepSchedule::Constant;
    cb.alpha = 1.0;
    Rng rb(79);
    RunRecord rr = run_hpgd(boxed, cb, rb);
    for (double v : rr.x_final) {
        CHECK(v >= -0.05 - 1e-15);
        CHECK(v <= 0.05 + 1e-15);
    }
}

TEST_CASE("x-hat slots are roughly uniform across short runs") {
    BilevelProblem p = single_context_decomposable();
    OuterConfig cfg;
    cfg.iterations = 8;
    cfg.alpha = 0.01;
    cfg.estimator = EstimatorVariant::Decomposable;
    cfg.oracle_delta = 0.1;
    cfg.eval_every = 0;
    Rng root(2026);
    std::vector<int> counts(8, 0);
    const int runs = 400;
    for (int i = 0; i < runs; ++i) {
        Rng rng = root.split(i);
        RunRecord rec = run_hpgd(p, cfg, rng);
        REQUIRE(rec.x_hat_iteration >= 1);
        REQUIRE(rec.x_hat_iteration <= 8);
        counts[rec.x_hat_iteration - 1]++;
    }
    for (int c : counts) {
        CHECK(c > 20);   // expected 50 per slot
        CHECK(c < 100);
    }
}
