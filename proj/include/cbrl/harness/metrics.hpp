#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cbrl {

// One evaluation-cadence row. Missing values serialize as empty CSV cells.
// Everything except wall_time_ms is bit-deterministic for a fixed seed.
struct MetricsRow {
    std::string run_id;
    std::string algorithm;
    std::string env;
    double lambda = 0.0;
    std::optional<double> beta;
    std::uint64_t seed = 0;
    long iteration = 0;
    std::optional<double> upper_return;
    std::optional<double> exact_grad_norm_sq;
    std::optional<long> inner_iterations;
    std::string estimator_variant;
    std::optional<double> wall_time_ms;
};

extern const char* const kMetricsHeader;  // fixed column order

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// %.10g, C-locale formatting used for all floating-point cells.
std::string format_double(double v);

}  // namespace cbrl
