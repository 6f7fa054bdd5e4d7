#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbrl/envs/four_rooms.hpp"
#include "cbrl/harness/checks.hpp"
#include "cbrl/harness/runner.hpp"
#include "cbrl/hypergrad.hpp"

namespace {

using namespace cbrl;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInvariant = 2;
constexpr int kExitRuntime = 3;

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config cfg = Config::load(path);
    for (const auto& o : overrides) cfg.apply_override(o);
    return cfg;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& seed_arg, const std::string& out_arg, int parallel) {
    Config cfg = load_config(config_path, overrides);
    if (!seed_arg.empty()) cfg.set("run", "seeds", seed_arg);
    std::string out_dir = out_arg.empty() ? cfg.get_or("run", "out", "out") : out_arg;

    std::vector<RunSpec> specs = expand_runs(cfg);
    std::vector<RunOutput> outputs = execute_all(specs, out_dir, parallel);

    int failed = 0;
    for (const auto& out : outputs) {
        if (!out.error.empty()) {
            ++failed;
            std::cout << out.spec.run_id << "  FAILED: " << out.error << "\n";
            continue;
        }
        double final_return = out.rows.empty() ? 0.0 : out.rows.back().upper_return.value_or(0.0);
        std::cout << out.spec.run_id << "  final upper_return = " << format_double(final_return)
                  << "\n";
    }
    std::cout << (outputs.size() - failed) << "/" << outputs.size() << " runs ok; metrics in "
              << out_dir << "\n";
    return failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_table(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".csv") continue;
        // keep only metrics files (skips trajectory and plot-data CSVs)
        std::ifstream probe(entry.path());
        std::string first;
        std::getline(probe, first);
        if (!first.empty() && first.back() == '\r') first.pop_back();
        if (first == kMetricsHeader) paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) {
        std::cerr << "no metrics files in " << dir << "\n";
        return kExitUsage;
    }
    auto cells = aggregate_final_returns(paths);
    std::cout << render_table(cells);
    return kExitOk;
}

int cmd_check(const std::string& suite, const CheckParams& params) {
    auto results = run_check_suite(suite, params);
    bool all_pass = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "all checks passed" : "some checks FAILED") << "\n";
    return all_pass ? kExitOk : kExitInvariant;
}

struct ManifestRun {
    std::string run_id, algorithm, env, metrics, x_trajectory, config;
    double lambda = 0.0;
    std::optional<double> beta;
    bool ok = false;
};

std::vector<ManifestRun> load_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("no manifest.json in " + dir);
    nlohmann::json j;
    in >> j;
    std::vector<ManifestRun> runs;
    for (const auto& r : j.at("runs")) {
        ManifestRun m;
        m.run_id = r.at("run_id").get<std::string>();
        m.algorithm = r.at("algorithm").get<std::string>();
        m.env = r.at("env").get<std::string>();
        m.lambda = r.at("lambda").get<double>();
        if (r.contains("beta")) m.beta = r.at("beta").get<double>();
        m.config = r.at("config").get<std::string>();
        m.ok = r.at("status").get<std::string>() == "ok";
        if (m.ok) {
            m.metrics = r.at("metrics").get<std::string>();
            m.x_trajectory = r.at("x_trajectory").get<std::string>();
        }
        runs.push_back(std::move(m));
    }
    return runs;
}

// reads an iteration -> x table written next to the metrics
std::vector<std::pair<long, Vec>> read_x_trajectory(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty");
    std::vector<std::pair<long, Vec>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> cells;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            auto comma = line.find(',', pos);
            std::string tok = line.substr(
                pos, comma == std::string::npos ? std::string::npos : comma - pos);
            cells.push_back(std::strtod(tok.c_str(), nullptr));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        Vec x(cells.begin() + 1, cells.end());
        rows.emplace_back(long(cells[0]), std::move(x));
    }
    return rows;
}

std::string group_tag(const ManifestRun& m) {
    std::string tag = m.env + "-lam" + format_double(m.lambda);
    if (m.beta) tag += "-beta" + format_double(*m.beta);
    return tag + "-" + m.algorithm;
}

int emit_convergence(const std::string& dir, const std::string& out_dir) {
    auto runs = load_manifest(dir);
    std::map<std::string, std::vector<ManifestRun>> groups;
    for (const auto& r : runs)
        if (r.ok) groups[group_tag(r)].push_back(r);
    if (groups.empty()) throw std::runtime_error("no completed runs in " + dir);
    for (const auto& [tag, members] : groups) {
        // iteration -> returns across seeds; keep points every run reports
        std::map<long, std::vector<double>> by_iter;
        for (const auto& m : members) {
            auto rows = read_metrics_csv(dir + "/" + m.metrics);
            for (const auto& row : rows)
                if (row.upper_return) by_iter[row.iteration].push_back(*row.upper_return);
        }
        std::ofstream out(out_dir + "/fig-convergence-" + tag + ".csv", std::ios::binary);
        out << "iteration,mean,se,n\n";
        for (const auto& [it, vals] : by_iter) {
            if (vals.size() != members.size()) continue;  // not a common cadence point
            double mean = 0.0;
            for (double v : vals) mean += v;
            mean /= double(vals.size());
            double var = 0.0;
            for (double v : vals) var += (v - mean) * (v - mean);
            double se = vals.size() > 1
                            ? std::sqrt(var / double(vals.size() - 1) / double(vals.size()))
                            : 0.0;
            out << it << ',' << format_double(mean) << ',' << format_double(se) << ','
                << vals.size() << "\n";
        }
        std::cout << "wrote fig-convergence-" << tag << ".csv\n";
    }
    return kExitOk;
}

int emit_heatmap(const std::string& dir, const std::string& out_dir, const std::string& run_id) {
    auto runs = load_manifest(dir);
    const ManifestRun* pick = nullptr;
    double best = 0.0;
    for (const auto& r : runs) {
        if (!r.ok || r.env != "four-rooms") continue;
        if (!run_id.empty()) {
            if (r.run_id == run_id) pick = &r;
            continue;
        }
        auto rows = read_metrics_csv(dir + "/" + r.metrics);
        double fin = rows.empty() ? 0.0 : rows.back().upper_return.value_or(0.0);
        if (!pick || fin > best) {
            pick = &r;
            best = fin;
        }
    }
    if (!pick) throw std::runtime_error("no completed four-rooms run " +
                                        (run_id.empty() ? "in " + dir : "with id " + run_id));

    Config cfg = Config::parse(pick->config, "manifest");
    double budget = cfg.get_double("env", "budget", 0.2);
    std::string map = four_rooms_default_map();
    if (cfg.has("env", "map_file")) {
        std::ifstream in(cfg.get("env", "map_file"));
        if (!in) throw std::runtime_error("cannot open map_file from config");
        std::ostringstream buf;
        buf << in.rdbuf();
        map = buf.str();
    }
    FourRoomsLayout lay = parse_four_rooms_map(map);
    auto traj = read_x_trajectory(dir + "/" + pick->x_trajectory);
    if (traj.empty()) throw std::runtime_error("empty trajectory for " + pick->run_id);
    const Vec& x = traj.back().second;

    // penalty r~(s) = -B softmax(x)_s on real cells
    Vec p(x.size());
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : x) z += std::exp(v - mx);
    for (std::size_t i = 0; i < x.size(); ++i) p[i] = std::exp(x[i] - mx) / z;

    std::ofstream out(out_dir + "/fig-heatmap-" + pick->run_id + ".csv", std::ios::binary);
    out << "row,col,cell,penalty\n";
    for (int cell = 0; cell < lay.n_cells; ++cell) {
        int rc = lay.rc_of_cell[cell];
        out << rc / lay.cols << ',' << rc % lay.cols << ',' << cell << ','
            << format_double(-budget * p[cell]) << "\n";
    }
    std::cout << "wrote fig-heatmap-" << pick->run_id << ".csv (final iterate of "
              << pick->run_id << ")\n";
    return kExitOk;
}

int emit_tax_rates(const std::string& dir, const std::string& out_dir) {
    auto runs = load_manifest(dir);
    std::map<std::string, std::vector<ManifestRun>> groups;
    for (const auto& r : runs)
        if (r.ok && r.env == "tax-design") groups[group_tag(r)].push_back(r);
    if (groups.empty()) throw std::runtime_error("no completed tax-design runs in " + dir);
    for (const auto& [tag, members] : groups) {
        std::map<long, std::pair<Vec, int>> by_iter;  // iteration -> (sum of x, count)
        for (const auto& m : members) {
            auto traj = read_x_trajectory(dir + "/" + m.x_trajectory);
            for (auto& [it, x] : traj) {
                auto& slot = by_iter[it];
                if (slot.second == 0) slot.first.assign(x.size(), 0.0);
                for (std::size_t j = 0; j < x.size(); ++j) slot.first[j] += x[j];
                slot.second++;
            }
        }
        std::ofstream out(out_dir + "/fig-tax-rates-" + tag + ".csv", std::ios::binary);
        out << "iteration,x,y1,y2,y3\n";
        for (const auto& [it, slot] : by_iter) {
            if (slot.second != int(members.size())) continue;
            out << it;
            for (double v : slot.first) out << ',' << format_double(v / slot.second);
            out << "\n";
        }
        std::cout << "wrote fig-tax-rates-" << tag << ".csv\n";
    }
    return kExitOk;
}

int cmd_plotdata(const std::string& dir, const std::string& figure, const std::string& out_arg,
                 const std::string& run_id) {
    std::string out_dir = out_arg.empty() ? dir : out_arg;
    std::filesystem::create_directories(out_dir);
    if (figure == "convergence") return emit_convergence(dir, out_dir);
    if (figure == "heatmap") return emit_heatmap(dir, out_dir, run_id);
    if (figure == "tax-rates") return emit_tax_rates(dir, out_dir);
    std::cerr << "unknown figure id: " << figure << " (try convergence, heatmap, tax-rates)\n";
    return kExitUsage;
}

int cmd_eval_exact(const std::string& config_path, const std::vector<std::string>& overrides,
                   const std::string& x_arg) {
    Config cfg = load_config(config_path, overrides);
    std::vector<RunSpec> specs = expand_runs(cfg);
    if (specs.empty()) throw std::runtime_error("config expands to no runs");
    ResolvedRun rr = resolve_run(specs.front());

    Vec x = rr.problem.x0;
    if (!x_arg.empty()) {
        x.clear();
        std::size_t pos = 0;
        while (pos <= x_arg.size()) {
            auto comma = x_arg.find(',', pos);
            std::string tok = x_arg.substr(
                pos, comma == std::string::npos ? std::string::npos : comma - pos);
            char* end = nullptr;
            x.push_back(std::strtod(tok.c_str(), &end));
            if (end == tok.c_str()) throw std::runtime_error("bad --x entry: " + tok);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (int(x.size()) != rr.problem.d)
            throw std::runtime_error("--x needs " + std::to_string(rr.problem.d) + " entries");
    }

    double ret = evaluate_upper_return(rr.problem, x, rr.outer.eval_tol);
    Vec hg = exact_hypergradient(rr.problem, x, rr.outer.eval_tol);
    std::cout << "upper_return = " << format_double(ret) << "\n";
    std::cout << "loss_grad_norm_sq = " << format_double(norm2sq(hg)) << "\n";
    if (rr.problem.decomposable()) {
        Vec rg = exact_return_gradient(rr.problem, x, rr.outer.eval_tol);
        std::cout << "return_grad_norm_sq = " << format_double(norm2sq(rg)) << "\n";
    }
    std::cout << "x =";
    for (double v : x) std::cout << ' ' << format_double(v);
    std::cout << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextual bilevel RL toolkit"};
    app.require_subcommand(1);

    std::string config_path, seed_arg, out_arg, dir_arg, figure, run_id, suite, x_arg;
    std::vector<std::string> overrides;
    int parallel = 0;
    CheckParams params;

    auto* run = app.add_subcommand("run", "Execute configured (algorithm x seed) runs");
    run->add_option("--config", config_path, "config file")->required();
    run->add_option("--override", overrides, "key=value or section.key=value (repeatable)");
    run->add_option("--seed", seed_arg, "single seed (overrides run.seeds)");
    run->add_option("--seeds", seed_arg, "seed list, e.g. 0..9 or 0,3,7");
    run->add_option("--out", out_arg, "output directory (default from run.out)");
    run->add_option("--parallel", parallel, "worker count (0 = auto, capped by CBRL_THREADS)");

    auto* table = app.add_subcommand("table", "Aggregate final returns into a grid");
    table->add_option("dir", dir_arg, "metrics directory")->required();

    auto* check = app.add_subcommand("check", "Run a property-check suite");
    check->add_option("suite", suite, "gradients|unbiasedness|decomposable|rtq|contraction|rates|all")
        ->required();
    check->add_option("--samples", params.samples, "Monte-Carlo samples");
    check->add_option("--draws", params.rtq_draws, "draws for cost accounting");
    check->add_option("--seed", params.seed, "check RNG seed");

    auto* plot = app.add_subcommand("plotdata", "Emit columnar plot files from metrics");
    plot->add_option("--dir", dir_arg, "metrics directory")->required();
    plot->add_option("--figure", figure, "convergence|heatmap|tax-rates")->required();
    plot->add_option("--out", out_arg, "output directory (default: metrics dir)");
    plot->add_option("--run-id", run_id, "heatmap: pick a specific run");

    auto* eval = app.add_subcommand("eval-exact", "Exact objective and gradients at a point");
    eval->add_option("--config", config_path, "config file")->required();
    eval->add_option("--override", overrides, "key=value (repeatable)");
    eval->add_option("--x", x_arg, "comma-separated point (default: the problem's x0)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed()) return cmd_run(config_path, overrides, seed_arg, out_arg, parallel);
        if (table->parsed()) return cmd_table(dir_arg);
        if (check->parsed()) return cmd_check(suite, params);
        if (plot->parsed()) return cmd_plotdata(dir_arg, figure, out_arg, run_id);
        if (eval->parsed()) return cmd_eval_exact(config_path, overrides, x_arg);
    } catch (const cbrl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
