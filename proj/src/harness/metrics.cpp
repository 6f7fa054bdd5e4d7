#include "cbrl/harness/metrics.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cbrl {

const char* const kMetricsHeader =
    "run_id,algorithm,env,lambda,beta,seed,iteration,upper_return,exact_grad_norm_sq,"
    "inner_iterations,estimator_variant,wall_time_ms";

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream out;
    out << kMetricsHeader << "\n";
    for (const auto& r : rows) {
        out << r.run_id << ',' << r.algorithm << ',' << r.env << ','
            << format_double(r.lambda) << ',';
        if (r.beta) out << format_double(*r.beta);
        out << ',' << r.seed << ',' << r.iteration << ',';
        if (r.upper_return) out << format_double(*r.upper_return);
        out << ',';
        if (r.exact_grad_norm_sq) out << format_double(*r.exact_grad_norm_sq);
        out << ',';
        if (r.inner_iterations) out << *r.inner_iterations;
        out << ',' << r.estimator_variant << ',';
        if (r.wall_time_ms) out << format_double(*r.wall_time_ms);
        out << "\n";
    }
    return out.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics file: " + path);
    out << metrics_to_csv(rows);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
        auto comma = line.find(',', pos);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(pos));
            break;
        }
        cells.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return cells;
}

double to_double(const std::string& s, const std::string& path) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw std::runtime_error(path + ": bad numeric cell: " + s);
    return v;
}

}  // namespace

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read metrics file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader)
        throw std::runtime_error(path + ": unexpected metrics header: " + line);
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 12)
            throw std::runtime_error(path + ": expected 12 cells, got " +
                                     std::to_string(cells.size()));
        MetricsRow r;
        r.run_id = cells[0];
        r.algorithm = cells[1];
        r.env = cells[2];
        r.lambda = to_double(cells[3], path);
        if (!cells[4].empty()) r.beta = to_double(cells[4], path);
        r.seed = std::strtoull(cells[5].c_str(), nullptr, 10);
        r.iteration = std::strtol(cells[6].c_str(), nullptr, 10);
        if (!cells[7].empty()) r.upper_return = to_double(cells[7], path);
        if (!cells[8].empty()) r.exact_grad_norm_sq = to_double(cells[8], path);
        if (!cells[9].empty()) r.inner_iterations = std::strtol(cells[9].c_str(), nullptr, 10);
        r.estimator_variant = cells[10];
        if (!cells[11].empty()) r.wall_time_ms = to_double(cells[11], path);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace cbrl
