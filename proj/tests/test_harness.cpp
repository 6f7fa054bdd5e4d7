#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cbrl/harness/checks.hpp"
#include "cbrl/harness/runner.hpp"

using namespace cbrl;

namespace {

const char* kSynthCfg = R"(# synthetic smoke configuration
[env]
name = synthetic
lambda = 1.0
upper = decomposable

[outer]
algorithm = hpgd
iterations = 20
alpha = 0.05
eval_every = 10

[oracle]
delta = 0.05

[run]
seeds = 0,1
)";

// strips the trailing wall_time_ms cell of every data line
std::string drop_wall_time(const std::string& csv) {
    std::istringstream in(csv);
    std::ostringstream out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!header) {
            auto comma = line.rfind(',');
            line.erase(comma);
        }
        header = false;
        out << line << "\n";
    }
    return out.str();
}

std::string temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("cbrl_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("config parses sections, comments, and round-trips") {
    Config cfg = Config::parse("[a]\nx = 1 # trailing\n# full line\n[b]\ny = two words\n", "t");
    CHECK(cfg.get("a", "x") == "1");
    CHECK(cfg.get("b", "y") == "two words");
    CHECK(cfg.has("a", "x"));
    CHECK_FALSE(cfg.has("a", "y"));
    Config again = Config::parse(cfg.serialize());
    CHECK(again.sections() == cfg.sections());

    CHECK(cfg.get_double("a", "x", 0.0) == 1.0);
    CHECK(cfg.get_long("a", "x", 0) == 1);
    cfg.set("a", "flag", "yes");
    CHECK(cfg.get_bool("a", "flag", false));
    CHECK(cfg.get_or("a", "absent", "dflt") == "dflt");
    CHECK(cfg.get_double("zz", "absent", 2.5) == 2.5);
}

TEST_CASE("config rejects malformed input with line numbers") {
    CHECK_THROWS_WITH_AS(Config::parse("[a]\nnoequals\n", "f.cfg"),
                         doctest::Contains("f.cfg:2"), ConfigError);
    CHECK_THROWS_AS(Config::parse("x = 1\n"), ConfigError);          // key outside section
    CHECK_THROWS_AS(Config::parse("[a\nx = 1\n"), ConfigError);      // unterminated header
    CHECK_THROWS_AS(Config::parse("[a]\nx = 1\nx = 2\n"), ConfigError);  // duplicate
    CHECK_THROWS_AS(Config::parse("[a]\n= 1\n"), ConfigError);       // empty key

    Config cfg = Config::parse("[a]\nx = nan-ish\n");
    CHECK_THROWS_AS(cfg.get_double("a", "x", 0.0), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("a", "x", false), ConfigError);
    CHECK_THROWS_AS(cfg.get("a", "missing"), ConfigError);
}

TEST_CASE("overrides resolve bare keys uniquely and reject ambiguity") {
    Config cfg = Config::parse("[env]\nlambda = 0.1\n[outer]\nalpha = 0.5\n");
    cfg.apply_override("lambda=0.2");
    CHECK(cfg.get("env", "lambda") == "0.2");
    cfg.apply_override("outer.alpha=1.0");
    CHECK(cfg.get("outer", "alpha") == "1.0");
    cfg.apply_override("oracle.delta=0.01");  // sectioned form may introduce keys
    CHECK(cfg.get("oracle", "delta") == "0.01");
    CHECK_THROWS_AS(cfg.apply_override("nosuchkey=1"), ConfigError);
    CHECK_THROWS_AS(cfg.apply_override("plain-text"), ConfigError);
    Config amb = Config::parse("[a]\nk = 1\n[b]\nk = 2\n");
    CHECK_THROWS_AS(amb.apply_override("k=3"), ConfigError);
}

TEST_CASE("schema validation rejects unknown sections and keys") {
    Config cfg = Config::parse("[env]\nname = synthetic\nlambada = 0.1\n");
    CHECK_THROWS_WITH_AS(cfg.validate_schema(config_schema()), doctest::Contains("lambada"),
                         ConfigError);
    Config cfg2 = Config::parse("[envs]\nname = synthetic\n");
    CHECK_THROWS_WITH_AS(cfg2.validate_schema(config_schema()), doctest::Contains("[envs]"),
                         ConfigError);
    // env-specific keys are rejected for the wrong env
    Config cfg3 = Config::parse("[env]\nname = four-rooms\nphi = 5.0\n");
    CHECK_THROWS_WITH_AS(expand_runs(cfg3), doctest::Contains("env.phi"), ConfigError);
}

TEST_CASE("seed lists parse ranges and enumerations") {
    CHECK(parse_seed_list("0..3") == std::vector<std::uint64_t>{0, 1, 2, 3});
    CHECK(parse_seed_list("7") == std::vector<std::uint64_t>{7});
    CHECK(parse_seed_list("4, 2, 9") == std::vector<std::uint64_t>{4, 2, 9});
    CHECK_THROWS_AS(parse_seed_list("9..4"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("a..b"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
    CHECK_THROWS_AS(parse_seed_list("1,,2"), ConfigError);
}

TEST_CASE("metrics rows serialize to the fixed header and round-trip") {
    MetricsRow r;
    r.run_id = "demo-1";
    r.algorithm = "hpgd";
    r.env = "synthetic";
    r.lambda = 0.25;
    r.seed = 42;
    r.iteration = 100;
    r.upper_return = 1.0 / 3.0;
    r.inner_iterations = 555;
    r.estimator_variant = "decomposable";
    std::string csv = metrics_to_csv({r});
    CHECK(csv ==
          "run_id,algorithm,env,lambda,beta,seed,iteration,upper_return,exact_grad_norm_sq,"
          "inner_iterations,estimator_variant,wall_time_ms\n"
          "demo-1,hpgd,synthetic,0.25,,42,100,0.3333333333,,555,decomposable,\n");

    std::string path = temp_dir("metrics") + "/m.csv";
    r.beta = 1.0;
    r.exact_grad_norm_sq = 9.5e-7;
    r.wall_time_ms = 12.5;
    write_metrics_csv(path, {r});
    auto rows = read_metrics_csv(path);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].run_id == "demo-1");
    CHECK(rows[0].beta == 1.0);
    CHECK(rows[0].upper_return == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(rows[0].exact_grad_norm_sq == doctest::Approx(9.5e-7).epsilon(1e-9));
    CHECK(rows[0].inner_iterations == 555);
    CHECK(rows[0].wall_time_ms == 12.5);

    std::ofstream bad(path, std::ios::binary);
    bad << "wrong,header\n";
    bad.close();
    CHECK_THROWS(read_metrics_csv(path));
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1e-12) == "1e-12");
}

TEST_CASE("expand_runs produces one spec per algorithm and seed") {
    Config cfg = Config::parse(kSynthCfg);
    cfg.set("outer", "algorithm", "hpgd, amd");
    auto specs = expand_runs(cfg);
    REQUIRE(specs.size() == 4);
    CHECK(specs[0].algorithm == "hpgd");
    CHECK(specs[2].algorithm == "amd");
    CHECK(specs[0].seed == 0);
    CHECK(specs[1].seed == 1);
    for (std::size_t i = 0; i < specs.size(); ++i)
        for (std::size_t j = i + 1; j < specs.size(); ++j)
            CHECK(specs[i].run_id != specs[j].run_id);
    CHECK(specs[0].env == "synthetic");
    CHECK(specs[0].lambda == 1.0);
    CHECK_FALSE(specs[0].beta.has_value());

    cfg.set("outer", "algorithm", "sgd");
    CHECK_THROWS_AS(expand_runs(cfg), ConfigError);
}

TEST_CASE("resolve_run maps algorithms to estimators and oracles") {
    Config cfg = Config::parse(kSynthCfg);
    auto specs = expand_runs(cfg);
    ResolvedRun rr = resolve_run(specs[0]);
    CHECK(rr.outer.estimator == EstimatorVariant::Decomposable);  // default on decomposable
    CHECK(rr.outer.iterations == 20);
    CHECK(rr.outer.oracle_delta == 0.05);
    CHECK(rr.problem.decomposable());

    cfg.set("env", "upper", "native");
    specs = expand_runs(cfg);
    rr = resolve_run(specs[0]);
    CHECK(rr.outer.estimator == EstimatorVariant::Stochastic);
    CHECK_FALSE(rr.problem.decomposable());

    cfg.set("outer", "algorithm", "hpgd-rtq");
    cfg.set("estimator", "rtq_k", "2");
    cfg.set("estimator", "rtq_c", "4");
    specs = expand_runs(cfg);
    rr = resolve_run(specs[0]);
    CHECK(rr.outer.estimator == EstimatorVariant::Rtq);
    CHECK(rr.outer.rtq.K == 2);
    CHECK(rr.outer.rtq.c == 4.0);

    cfg.set("outer", "algorithm", "hpgd-q");
    rr = resolve_run(expand_runs(cfg)[0]);
    CHECK(rr.outer.estimator == EstimatorVariant::VanillaQ);

    cfg.set("oracle", "variant", "npg");
    rr = resolve_run(expand_runs(cfg)[0]);
    CHECK(rr.outer.oracle_variant == OracleVariant::Npg);
    cfg.set("oracle", "variant", "sorcery");
    CHECK_THROWS_AS(resolve_run(expand_runs(cfg)[0]), ConfigError);
}

TEST_CASE("execute_run is deterministic apart from wall time") {
    Config cfg = Config::parse(kSynthCfg);
    auto specs = expand_runs(cfg);
    RunOutput a = execute_run(specs[0]);
    RunOutput b = execute_run(specs[0]);
    REQUIRE_FALSE(a.rows.empty());
    CHECK(drop_wall_time(metrics_to_csv(a.rows)) == drop_wall_time(metrics_to_csv(b.rows)));
    CHECK(a.record.x_final == b.record.x_final);
    // eval cadence: iterations 0, 10, 20
    REQUIRE(a.rows.size() == 3);
    CHECK(a.rows[0].iteration == 0);
    CHECK(a.rows[1].iteration == 10);
    CHECK(a.rows[2].iteration == 20);
    CHECK(a.rows[0].estimator_variant == "decomposable");
}

TEST_CASE("execute_all writes per-run metrics plus a manifest and survives failures") {
    Config cfg = Config::parse(kSynthCfg);
    auto specs = expand_runs(cfg);
    REQUIRE(specs.size() == 2);
    // sabotage the second run after expansion: unknown oracle variant
    specs[1].config.set("oracle", "variant", "bogus");
    std::string dir = temp_dir("runs");
    auto outputs = execute_all(specs, dir, 2);
    REQUIRE(outputs.size() == 2);
    CHECK(outputs[0].error.empty());
    CHECK_FALSE(outputs[1].error.empty());

    CHECK(std::filesystem::exists(dir + "/" + specs[0].run_id + ".csv"));
    CHECK(std::filesystem::exists(dir + "/" + specs[0].run_id + "_x.csv"));
    CHECK_FALSE(std::filesystem::exists(dir + "/" + specs[1].run_id + ".csv"));

    std::ifstream mf(dir + "/manifest.json");
    REQUIRE(mf.good());
    nlohmann::json manifest;
    mf >> manifest;
    REQUIRE(manifest.at("runs").size() == 2);
    CHECK(manifest["runs"][0]["status"] == "ok");
    CHECK(manifest["runs"][0]["x_final"].size() == 2);
    CHECK(manifest["runs"][0]["oracle_solves"] == 20);
    CHECK(manifest["runs"][1]["status"] == "failed");

    // x trajectory has one line per eval point, d columns
    std::ifstream xf(dir + "/" + specs[0].run_id + "_x.csv");
    std::string line;
    std::getline(xf, line);
    CHECK(line == "iteration,x0,x1");
    int data_lines = 0;
    while (std::getline(xf, line))
        if (!line.empty()) ++data_lines;
    CHECK(data_lines == 3);
}

TEST_CASE("aggregation reproduces hand-computed means and flags singletons") {
    Config cfg = Config::parse(kSynthCfg);
    auto specs = expand_runs(cfg);
    std::string dir = temp_dir("agg");
    execute_all(specs, dir, 0);

    std::vector<std::string> paths = {dir + "/" + specs[0].run_id + ".csv",
                                      dir + "/" + specs[1].run_id + ".csv"};
    auto cells = aggregate_final_returns(paths);
    REQUIRE(cells.size() == 1);
    auto r0 = read_metrics_csv(paths[0]);
    auto r1 = read_metrics_csv(paths[1]);
    double f0 = *r0.back().upper_return, f1 = *r1.back().upper_return;
    double mean = (f0 + f1) / 2.0;
    double sd = std::sqrt((f0 - mean) * (f0 - mean) + (f1 - mean) * (f1 - mean));
    CHECK(cells[0].n == 2);
    CHECK(cells[0].mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(cells[0].stderr_ == doctest::Approx(sd / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(cells[0].env == "synthetic");
    CHECK(cells[0].algorithm == "hpgd");

    auto single = aggregate_final_returns({paths[0]});
    REQUIRE(single.size() == 1);
    CHECK(single[0].n == 1);
    CHECK(single[0].stderr_ == 0.0);
    std::string table = render_table(single);
    CHECK(table.find("(n=1)") != std::string::npos);
    CHECK(table.find("hpgd") != std::string::npos);

    // missing cells render as missing, not as numbers
    TableCell a = cells[0];
    TableCell b = cells[0];
    b.algorithm = "amd";
    b.lambda = 0.5;
    std::string grid = render_table({a, b});
    CHECK(grid.find("missing") != std::string::npos);
}

TEST_CASE("parallel execution matches sequential output") {
    Config cfg = Config::parse(kSynthCfg);
    cfg.set("run", "seeds", "0..3");
    auto specs = expand_runs(cfg);
    std::string d1 = temp_dir("par1"), d2 = temp_dir("par2");
    auto seq = execute_all(specs, d1, 1);
    auto par = execute_all(specs, d2, 4);
    REQUIRE(seq.size() == par.size());
    for (std::size_t i = 0; i < seq.size(); ++i)
        CHECK(drop_wall_time(metrics_to_csv(seq[i].rows)) ==
              drop_wall_time(metrics_to_csv(par[i].rows)));
}

TEST_CASE("CBRL_THREADS caps requested parallelism") {
    setenv("CBRL_THREADS", "1", 1);
    CHECK(effective_parallelism(8) == 1);
    CHECK(effective_parallelism(0) == 1);
    unsetenv("CBRL_THREADS");
    CHECK(effective_parallelism(1) == 1);
    CHECK(effective_parallelism(0) >= 1);
}

TEST_CASE("check suites pass on the seeded instance at reduced budgets") {
    CheckParams p;
    p.samples = 20000;
    p.rtq_draws = 8000;
    p.rtq_mean_samples = 8000;
    for (const char* suite : {"gradients", "contraction", "rates"}) {
        auto results = run_check_suite(suite, p);
        REQUIRE_FALSE(results.empty());
        for (const auto& r : results) {
            INFO(r.name, ": ", r.detail);
            CHECK(r.pass);
        }
    }
    CHECK_THROWS_AS(run_check_suite("nonsense", p), ConfigError);
}

TEST_CASE("monte-carlo check suites pass at reduced budgets") {
    CheckParams p;
    p.samples = 20000;
    p.rtq_draws = 8000;
    p.rtq_mean_samples = 8000;
    for (const char* suite : {"unbiasedness", "decomposable", "rtq"}) {
        auto results = run_check_suite(suite, p);
        REQUIRE_FALSE(results.empty());
        for (const auto& r : results) {
            INFO(r.name, ": ", r.detail);
            CHECK(r.pass);
        }
    }
}
