#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ftnn/augment.hpp"
#include "ftnn/baseline.hpp"
#include "ftnn/forward_thinking.hpp"

namespace ftnn {

/// Config file problem; the message names the offending field.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Fully-resolved experiment description.  parse_experiment_config() fills
/// every field (defaulting and deriving seeds), and the result is echoed to
/// disk so each run directory is self-describing.
struct ExperimentConfig {
    std::string mode;  // ft_dense | ft_conv | backprop
    std::uint64_t seed = 0;
    std::string output_dir;
    int threads = 0;  // 0 = leave as-is (FTNN_THREADS still wins)

    // data
    std::string source;  // mnist | xor
    std::string mnist_dir;
    double val_fraction = 0.1;
    std::size_t limit_train = 0;  // take the first N training samples (0 = all)
    bool has_augment = false;
    AugmentConfig aug;
    std::size_t xor_n = 2000;
    double xor_noise = 0.2;
    bool evaluate_test = true;

    // model
    std::vector<StageSpec> schedule;
    TrainConfig head_train;  // ft_dense head phase / backprop whole-run config
    StoppingPolicy stopping;
    std::string spill_dir;
};

/// Parse + validate JSON text.  Unknown keys are hard errors.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

/// Canonical JSON echo of a resolved config (also what gets hashed into the
/// model file provenance).
std::string resolved_config_json(const ExperimentConfig& cfg);

/// One metrics.csv row.
struct MetricsRow {
    std::string phase;  // "stage" | "head" | "backprop"
    std::size_t stage = 0;
    EpochMetrics epoch;
};

struct ExperimentResult {
    std::vector<MetricsRow> rows;
    double final_val_accuracy = 0.0;
    double final_test_accuracy = -1.0;
    std::string model_path;
    std::string metrics_path;
    std::string config_echo_path;
};

/// Execute the configured pipeline and write metrics.csv, model.ftm and
/// config_resolved.json into the output directory.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// metrics.csv round trip (column order fixed; wall_seconds carried as-is).
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

/// metrics.csv bytes with the wall_seconds column blanked; the determinism
/// comparisons run on this view.
std::string metrics_csv_without_timing(const std::string& path);

/// Compare two run directories (each holding a metrics.csv): writes the
/// aligned accuracy-vs-time table to report_path and returns the summary.
ComparisonReport compare_run_dirs(const std::string& dir_a, const std::string& dir_b,
                                  const std::string& report_path);

std::string comparison_summary_text(const ComparisonReport& report);

}  // namespace ftnn
