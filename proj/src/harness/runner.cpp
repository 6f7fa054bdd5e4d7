#include "cbrl/harness/runner.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "cbrl/envs/four_rooms.hpp"
#include "cbrl/envs/synthetic.hpp"
#include "cbrl/envs/tax_design.hpp"

namespace cbrl {

namespace {

const char* kToolkitVersion = "0.1.0";

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hash8(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(s)));
    return std::string(buf, buf + 8);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto comma = text.find(',', pos);
        std::string tok =
            text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        std::size_t b = tok.find_first_not_of(" \t");
        std::size_t e = tok.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(tok.substr(b, e - b + 1));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

const std::vector<std::string>& known_algorithms() {
    static const std::vector<std::string> algos = {"hpgd", "hpgd-q", "hpgd-rtq", "amd",
                                                   "zero-order"};
    return algos;
}

bool known_algorithm(const std::string& a) {
    for (const auto& k : known_algorithms())
        if (k == a) return true;
    return false;
}

// env-specific [env] keys, checked after the name is known
const std::map<std::string, std::vector<std::string>>& env_keys() {
    static const std::map<std::string, std::vector<std::string>> keys = {
        {"four-rooms", {"name", "lambda", "beta", "gamma", "budget", "slip", "map_file"}},
        {"tax-design",
         {"name", "lambda", "gamma", "phi", "theta", "wealth_bins", "wealth_min", "wealth_max",
          "hours_points", "consumption_points", "full_grid", "hours_max", "consumption_max",
          "noise_std", "init_std", "wage", "epsilon0", "box_lo", "box_hi",
          "episode_truncation"}},
        {"synthetic",
         {"name", "lambda", "gamma", "n_states", "n_actions", "dim", "n_contexts",
          "instance_seed", "x_dep_transitions", "x_dep_init", "coupling", "rho", "upper"}},
    };
    return keys;
}

EstimatorVariant estimator_from_name(const std::string& name) {
    if (name == "decomposable") return EstimatorVariant::Decomposable;
    if (name == "stochastic") return EstimatorVariant::Stochastic;
    if (name == "rtq") return EstimatorVariant::Rtq;
    if (name == "vanilla-q") return EstimatorVariant::VanillaQ;
    throw ConfigError("unknown estimator variant: " + name);
}

std::string estimator_name(EstimatorVariant v) {
    switch (v) {
        case EstimatorVariant::Decomposable: return "decomposable";
        case EstimatorVariant::Stochastic: return "stochastic";
        case EstimatorVariant::Rtq: return "rtq";
        case EstimatorVariant::VanillaQ: return "vanilla-q";
    }
    return "?";
}

OracleVariant oracle_from_name(const std::string& name) {
    if (name == "soft-vi") return OracleVariant::SoftVi;
    if (name == "soft-q") return OracleVariant::SoftQ;
    if (name == "npg") return OracleVariant::Npg;
    if (name == "vanilla-pg") return OracleVariant::VanillaPg;
    throw ConfigError("unknown oracle variant: " + name);
}

}  // namespace

const std::map<std::string, std::vector<std::string>>& config_schema() {
    static const std::map<std::string, std::vector<std::string>> schema = [] {
        std::map<std::string, std::vector<std::string>> s;
        std::vector<std::string> env;
        for (const auto& [name, keys] : env_keys())
            for (const auto& k : keys) {
                bool seen = false;
                for (const auto& e : env)
                    if (e == k) seen = true;
                if (!seen) env.push_back(k);
            }
        s["env"] = env;
        s["outer"] = {"algorithm", "iterations", "alpha",  "schedule",        "clip",
                      "amd_inner_k", "zo_c",     "eval_every", "eval_exact_grad", "eval_tol"};
        s["oracle"] = {"variant", "delta", "delta_inv_sqrt_t", "delta0", "iterations"};
        s["estimator"] = {"variant", "batch_env_steps", "rtq_k", "rtq_c", "rtq_batch_base"};
        s["run"] = {"seeds", "out", "id_prefix"};
        return s;
    }();
    return schema;
}

std::vector<RunSpec> expand_runs(const Config& cfg) {
    cfg.validate_schema(config_schema());
    std::string env_name = cfg.get("env", "name");
    if (!env_keys().count(env_name)) throw ConfigError("unknown env name: " + env_name);
    // strict per-env key check on [env]
    {
        const auto& allowed = env_keys().at(env_name);
        auto it = cfg.sections().find("env");
        if (it != cfg.sections().end())
            for (const auto& [k, v] : it->second) {
                (void)v;
                bool ok = false;
                for (const auto& a : allowed)
                    if (a == k) ok = true;
                if (!ok)
                    throw ConfigError("key `env." + k + "` does not apply to env " + env_name);
            }
    }

    std::vector<std::string> algos = split_list(cfg.get_or("outer", "algorithm", "hpgd"));
    if (algos.empty()) throw ConfigError("empty outer.algorithm list");
    for (const auto& a : algos)
        if (!known_algorithm(a)) throw ConfigError("unknown algorithm: " + a);
    std::vector<std::uint64_t> seeds = parse_seed_list(cfg.get_or("run", "seeds", "0"));

    double lambda = cfg.get_double("env", "lambda",
                                   env_name == "four-rooms" ? 0.001
                                   : env_name == "tax-design" ? 0.2
                                                              : 1.0);
    std::optional<double> beta;
    if (env_name == "four-rooms") beta = cfg.get_double("env", "beta", 1.0);
    std::string prefix = cfg.get_or("run", "id_prefix", "");

    std::vector<RunSpec> specs;
    for (const auto& algo : algos) {
        for (auto seed : seeds) {
            RunSpec spec;
            spec.algorithm = algo;
            spec.env = env_name;
            spec.lambda = lambda;
            spec.beta = beta;
            spec.seed = seed;
            spec.config = cfg;
            spec.config.set("outer", "algorithm", algo);
            spec.config.set("run", "seeds", std::to_string(seed));
            std::string body = spec.config.serialize();
            std::ostringstream id;
            if (!prefix.empty()) id << prefix << "-";
            id << env_name << "-" << algo << "-s" << seed << "-" << hash8(body);
            spec.run_id = id.str();
            specs.push_back(std::move(spec));
        }
    }
    return specs;
}

ResolvedRun resolve_run(const RunSpec& spec) {
    const Config& cfg = spec.config;
    cfg.validate_schema(config_schema());

    ResolvedRun rr;
    rr.spec = spec;

    if (spec.env == "four-rooms") {
        FourRoomsSpec fs;
        fs.gamma = cfg.get_double("env", "gamma", fs.gamma);
        fs.lambda = cfg.get_double("env", "lambda", fs.lambda);
        fs.beta = cfg.get_double("env", "beta", fs.beta);
        fs.budget = cfg.get_double("env", "budget", fs.budget);
        fs.slip = cfg.get_double("env", "slip", fs.slip);
        if (cfg.has("env", "map_file")) {
            std::ifstream in(cfg.get("env", "map_file"));
            if (!in) throw ConfigError("cannot open map_file: " + cfg.get("env", "map_file"));
            std::ostringstream buf;
            buf << in.rdbuf();
            fs.map = buf.str();
        }
        rr.problem = make_four_rooms_problem(fs);
    } else if (spec.env == "tax-design") {
        TaxDesignSpec ts;
        ts.gamma = cfg.get_double("env", "gamma", ts.gamma);
        ts.lambda = cfg.get_double("env", "lambda", ts.lambda);
        ts.phi = cfg.get_double("env", "phi", ts.phi);
        ts.theta = cfg.get_double("env", "theta", ts.theta);
        ts.wealth_bins = int(cfg.get_long("env", "wealth_bins", ts.wealth_bins));
        ts.wealth_min = cfg.get_double("env", "wealth_min", ts.wealth_min);
        ts.wealth_max = cfg.get_double("env", "wealth_max", ts.wealth_max);
        ts.hours_points = int(cfg.get_long("env", "hours_points", ts.hours_points));
        ts.consumption_points =
            int(cfg.get_long("env", "consumption_points", ts.consumption_points));
        ts.full_grid = cfg.get_bool("env", "full_grid", ts.full_grid);
        ts.hours_max = cfg.get_double("env", "hours_max", ts.hours_max);
        ts.consumption_max = cfg.get_double("env", "consumption_max", ts.consumption_max);
        ts.noise_std = cfg.get_double("env", "noise_std", ts.noise_std);
        ts.init_std = cfg.get_double("env", "init_std", ts.init_std);
        ts.wage = cfg.get_double("env", "wage", ts.wage);
        ts.epsilon0 = cfg.get_double("env", "epsilon0", ts.epsilon0);
        ts.box_lo = cfg.get_double("env", "box_lo", ts.box_lo);
        ts.box_hi = cfg.get_double("env", "box_hi", ts.box_hi);
        ts.episode_truncation =
            int(cfg.get_long("env", "episode_truncation", ts.episode_truncation));
        rr.problem = make_tax_problem(ts);
    } else if (spec.env == "synthetic") {
        SyntheticSpec ss;
        ss.gamma = cfg.get_double("env", "gamma", ss.gamma);
        ss.lambda = cfg.get_double("env", "lambda", ss.lambda);
        ss.n_states = int(cfg.get_long("env", "n_states", ss.n_states));
        ss.n_actions = int(cfg.get_long("env", "n_actions", ss.n_actions));
        ss.dim = int(cfg.get_long("env", "dim", ss.dim));
        ss.n_contexts = int(cfg.get_long("env", "n_contexts", ss.n_contexts));
        ss.instance_seed = std::uint64_t(cfg.get_long("env", "instance_seed",
                                                      long(ss.instance_seed)));
        ss.x_dep_transitions = cfg.get_bool("env", "x_dep_transitions", ss.x_dep_transitions);
        ss.x_dep_init = cfg.get_bool("env", "x_dep_init", ss.x_dep_init);
        ss.coupling = cfg.get_double("env", "coupling", ss.coupling);
        ss.rho = cfg.get_double("env", "rho", ss.rho);
        std::string upper = cfg.get_or("env", "upper", "native");
        if (upper == "native")
            rr.problem = make_synthetic_problem(ss);
        else if (upper == "decomposable")
            rr.problem = make_synthetic_decomposable(ss);
        else
            throw ConfigError("env.upper must be native or decomposable: " + upper);
    } else {
        throw ConfigError("unknown env name: " + spec.env);
    }

    OuterConfig& oc = rr.outer;
    oc.iterations = cfg.get_long("outer", "iterations", oc.iterations);
    oc.alpha = cfg.get_double("outer", "alpha", oc.alpha);
    std::string sched = cfg.get_or("outer", "schedule", "constant");
    if (sched == "constant")
        oc.schedule = StepSchedule::Constant;
    else if (sched == "inv-sqrt-total")
        oc.schedule = StepSchedule::InvSqrtTotal;
    else
        throw ConfigError("outer.schedule must be constant or inv-sqrt-total: " + sched);
    oc.clip = cfg.get_double("outer", "clip", oc.clip);
    oc.amd_inner_k = int(cfg.get_long("outer", "amd_inner_k", oc.amd_inner_k));
    oc.zo_c = cfg.get_double("outer", "zo_c", oc.zo_c);
    oc.eval_every = cfg.get_long("outer", "eval_every", oc.eval_every);
    oc.eval_exact_grad = cfg.get_bool("outer", "eval_exact_grad", oc.eval_exact_grad);
    oc.eval_tol = cfg.get_double("outer", "eval_tol", oc.eval_tol);

    oc.oracle_variant = oracle_from_name(cfg.get_or("oracle", "variant", "soft-vi"));
    if (cfg.has("oracle", "delta")) oc.oracle_delta = cfg.get_double("oracle", "delta", 0.0);
    oc.oracle_delta_inv_sqrt_T = cfg.get_bool("oracle", "delta_inv_sqrt_t", false);
    oc.oracle_delta0 = cfg.get_double("oracle", "delta0", oc.oracle_delta0);
    if (cfg.has("oracle", "iterations"))
        oc.oracle_iterations = cfg.get_long("oracle", "iterations", 0);

    if (spec.algorithm == "hpgd") {
        if (cfg.has("estimator", "variant"))
            oc.estimator = estimator_from_name(cfg.get("estimator", "variant"));
        else
            oc.estimator = rr.problem.decomposable() ? EstimatorVariant::Decomposable
                                                     : EstimatorVariant::Stochastic;
    } else if (spec.algorithm == "hpgd-q") {
        oc.estimator = EstimatorVariant::VanillaQ;
    } else if (spec.algorithm == "hpgd-rtq") {
        oc.estimator = EstimatorVariant::Rtq;
    }
    oc.batch_env_steps = cfg.get_long("estimator", "batch_env_steps", oc.batch_env_steps);
    oc.rtq.K = int(cfg.get_long("estimator", "rtq_k", oc.rtq.K));
    oc.rtq.c = cfg.get_double("estimator", "rtq_c", oc.rtq.c);
    oc.rtq.batch_base = int(cfg.get_long("estimator", "rtq_batch_base", oc.rtq.batch_base));

    return rr;
}

RunOutput execute_run(const RunSpec& spec) {
    ResolvedRun rr = resolve_run(spec);
    Rng rng(spec.seed);
    RunOutput out;
    out.spec = spec;
    if (spec.algorithm == "amd")
        out.record = run_amd(rr.problem, rr.outer, rng);
    else if (spec.algorithm == "zero-order")
        out.record = run_zero_order(rr.problem, rr.outer, rng);
    else
        out.record = run_hpgd(rr.problem, rr.outer, rng);

    std::string est;
    if (spec.algorithm == "hpgd" || spec.algorithm == "hpgd-q" || spec.algorithm == "hpgd-rtq")
        est = estimator_name(rr.outer.estimator);
    for (const auto& pt : out.record.evals) {
        MetricsRow row;
        row.run_id = spec.run_id;
        row.algorithm = spec.algorithm;
        row.env = spec.env;
        row.lambda = spec.lambda;
        row.beta = spec.beta;
        row.seed = spec.seed;
        row.iteration = pt.iteration;
        row.upper_return = pt.upper_return;
        row.exact_grad_norm_sq = pt.exact_grad_norm_sq;
        row.inner_iterations = pt.inner_iterations;
        row.estimator_variant = est;
        row.wall_time_ms = pt.wall_ms;
        out.rows.push_back(std::move(row));
    }
    return out;
}

int effective_parallelism(int requested) {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int limit = requested > 0 ? requested : hw;
    if (const char* env = std::getenv("CBRL_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap > 0 && cap < limit) limit = int(cap);
    }
    return std::max(1, std::min(limit, hw));
}

namespace {

void write_x_trajectory(const std::string& path, const RunRecord& rec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
    std::size_t d = rec.x_final.size();
    out << "iteration";
    for (std::size_t j = 0; j < d; ++j) out << ",x" << j;
    out << "\n";
    for (const auto& pt : rec.evals) {
        out << pt.iteration;
        for (std::size_t j = 0; j < d; ++j) out << ',' << format_double(pt.x[j]);
        out << "\n";
    }
}

}  // namespace

std::vector<RunOutput> execute_all(const std::vector<RunSpec>& specs, const std::string& out_dir,
                                   int parallel) {
    std::filesystem::create_directories(out_dir);
    std::vector<RunOutput> outputs(specs.size());
    std::atomic<std::size_t> next{0};
    int workers = std::min<int>(effective_parallelism(parallel), int(specs.size()));
    workers = std::max(workers, 1);

    auto work = [&]() {
        while (true) {
            std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                outputs[i] = execute_run(specs[i]);
            } catch (const std::exception& e) {
                outputs[i].spec = specs[i];
                outputs[i].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();

    nlohmann::json manifest;
    manifest["version"] = kToolkitVersion;
    manifest["runs"] = nlohmann::json::array();
    for (const auto& out : outputs) {
        nlohmann::json j;
        j["run_id"] = out.spec.run_id;
        j["algorithm"] = out.spec.algorithm;
        j["env"] = out.spec.env;
        j["lambda"] = out.spec.lambda;
        if (out.spec.beta) j["beta"] = *out.spec.beta;
        j["seed"] = out.spec.seed;
        std::string body = out.spec.config.serialize();
        j["config_hash"] = hash8(body);
        j["config"] = body;
        if (out.error.empty()) {
            std::string csv = out.spec.run_id + ".csv";
            std::string xcsv = out.spec.run_id + "_x.csv";
            write_metrics_csv(out_dir + "/" + csv, out.rows);
            write_x_trajectory(out_dir + "/" + xcsv, out.record);
            j["status"] = "ok";
            j["metrics"] = csv;
            j["x_trajectory"] = xcsv;
            j["x_final"] = out.record.x_final;
            j["x_hat_iteration"] = out.record.x_hat_iteration;
            j["oracle_solves"] = out.record.oracle_solves;
            j["inner_iterations"] = out.record.inner_iterations;
        } else {
            j["status"] = "failed";
            j["error"] = out.error;
        }
        manifest["runs"].push_back(std::move(j));
    }
    std::ofstream mf(out_dir + "/manifest.json", std::ios::binary);
    if (!mf) throw std::runtime_error("cannot write manifest in " + out_dir);
    mf << manifest.dump(2) << "\n";
    return outputs;
}

std::vector<TableCell> aggregate_final_returns(const std::vector<std::string>& csv_paths) {
    struct Acc {
        std::vector<double> finals;
    };
    std::map<std::tuple<std::string, double, double, bool, std::string>, Acc> groups;
    for (const auto& path : csv_paths) {
        auto rows = read_metrics_csv(path);
        const MetricsRow* final_row = nullptr;
        for (const auto& r : rows)
            if (r.upper_return && (!final_row || r.iteration > final_row->iteration))
                final_row = &r;
        if (!final_row) continue;
        auto key = std::make_tuple(final_row->env, final_row->lambda,
                                   final_row->beta.value_or(0.0), final_row->beta.has_value(),
                                   final_row->algorithm);
        groups[key].finals.push_back(*final_row->upper_return);
    }
    std::vector<TableCell> cells;
    for (const auto& [key, acc] : groups) {
        TableCell c;
        c.env = std::get<0>(key);
        c.lambda = std::get<1>(key);
        if (std::get<3>(key)) c.beta = std::get<2>(key);
        c.algorithm = std::get<4>(key);
        c.n = int(acc.finals.size());
        double mean = 0.0;
        for (double v : acc.finals) mean += v;
        mean /= double(c.n);
        double var = 0.0;
        for (double v : acc.finals) var += (v - mean) * (v - mean);
        c.mean = mean;
        c.stderr_ = c.n > 1 ? std::sqrt(var / double(c.n - 1) / double(c.n)) : 0.0;
        cells.push_back(std::move(c));
    }
    return cells;
}

std::string render_table(const std::vector<TableCell>& cells) {
    // (env, lambda, beta) rows x algorithm columns
    std::vector<std::tuple<std::string, double, double, bool>> row_keys;
    std::vector<std::string> algos;
    for (const auto& c : cells) {
        auto rk = std::make_tuple(c.env, c.lambda, c.beta.value_or(0.0), c.beta.has_value());
        bool seen = false;
        for (const auto& k : row_keys)
            if (k == rk) seen = true;
        if (!seen) row_keys.push_back(rk);
        seen = false;
        for (const auto& a : algos)
            if (a == c.algorithm) seen = true;
        if (!seen) algos.push_back(c.algorithm);
    }
    std::ostringstream out;
    auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) s += std::string(w - s.size(), ' ');
        return s;
    };
    auto short_num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4g", v);
        return std::string(buf);
    };
    const std::size_t label_w = 30, cell_w = 24;
    out << pad("env / lambda / beta", label_w);
    for (const auto& a : algos) out << pad(a, cell_w);
    out << "\n";
    for (const auto& rk : row_keys) {
        std::ostringstream label;
        label << std::get<0>(rk) << " λ=" << format_double(std::get<1>(rk));
        if (std::get<3>(rk)) label << " β=" << format_double(std::get<2>(rk));
        out << pad(label.str(), label_w);
        for (const auto& a : algos) {
            const TableCell* found = nullptr;
            for (const auto& c : cells) {
                if (c.algorithm != a) continue;
                auto ck = std::make_tuple(c.env, c.lambda, c.beta.value_or(0.0),
                                          c.beta.has_value());
                if (ck == rk) {
                    found = &c;
                    break;
                }
            }
            if (!found) {
                out << pad("missing", cell_w);
                continue;
            }
            std::ostringstream cell;
            cell << short_num(found->mean) << " ± " << short_num(found->stderr_);
            if (found->n == 1) cell << " (n=1)";
            out << pad(cell.str(), cell_w);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace cbrl
