#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cbrl/harness/config.hpp"
#include "cbrl/harness/metrics.hpp"
#include "cbrl/outer_optim.hpp"
#include "cbrl/problem.hpp"

namespace cbrl {

// A fully resolved experiment: problem factory inputs + outer configuration
// for one (algorithm, seed). Built from a Config; strict schema validation
// happens during resolution.
struct RunSpec {
    std::string run_id;
    std::string algorithm;  // hpgd | hpgd-q | hpgd-rtq | amd | zero-order
    std::string env;        // four-rooms | tax-design | synthetic
    double lambda = 0.0;
    std::optional<double> beta;
    std::uint64_t seed = 0;
    Config config;  // resolved raw config (env/oracle/estimator/outer/run)
};

struct ResolvedRun {
    RunSpec spec;
    BilevelProblem problem;
    OuterConfig outer;
};

// Schema of every recognized config key, per section.
const std::map<std::string, std::vector<std::string>>& config_schema();

ResolvedRun resolve_run(const RunSpec& spec);

// Expands a config into one RunSpec per (algorithm, seed).
std::vector<RunSpec> expand_runs(const Config& cfg);

struct RunOutput {
    RunSpec spec;
    RunRecord record;
    std::vector<MetricsRow> rows;
    std::string error;  // empty on success
};

RunOutput execute_run(const RunSpec& spec);

// Executes runs on a worker pool (parallel <= CBRL_THREADS if set; 0 = auto)
// and writes <out_dir>/<run_id>.csv plus a manifest.json. Metric content is
// independent of scheduling: each run's RNG derives from its seed alone.
std::vector<RunOutput> execute_all(const std::vector<RunSpec>& specs, const std::string& out_dir,
                                   int parallel);

// Aggregation for `table`: mean +/- standard error of the final upper return
// grouped by (env, lambda, beta, algorithm).
struct TableCell {
    std::string env;
    std::string algorithm;
    double lambda = 0.0;
    std::optional<double> beta;
    int n = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
};

std::vector<TableCell> aggregate_final_returns(const std::vector<std::string>& csv_paths);
std::string render_table(const std::vector<TableCell>& cells);

int effective_parallelism(int requested);

}  // namespace cbrl
