#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "muse/config.hpp"
#include "muse/model.hpp"

namespace muse {

// Confusion counts and scores with one class treated as positive.
struct ClassMetrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct Metrics {
    std::size_t n = 0;
    double accuracy = 0.0;
    ClassMetrics fake;  // label 1 positive
    ClassMetrics real;  // label 0 positive
};

// Predictions are probabilities of label 1, thresholded at 0.5 (inclusive).
Metrics compute_metrics(std::span<const double> probs, std::span<const int> labels);
Metrics evaluate(const Model& model, const Dataset& ds, std::size_t batch_size);

struct ReportRow {
    std::string label;
    Metrics metrics;
    std::string genotype;
};

struct ExperimentReport {
    std::string title;
    std::string row_header = "Model";
    std::string config_echo;
    std::uint64_t seed = 0;
    std::vector<ReportRow> rows;
};

std::string to_csv(const ExperimentReport& report);
std::string to_table(const ExperimentReport& report);

struct PreparedData {
    Dataset full;
    DatasetSplit split;
};

// Uses `given` when non-null, else loads data.path or generates synthetic
// data; then applies data.partial and splits. The config takes its dims from
// the data.
PreparedData prepare_data(RunConfig& config, const Dataset* given = nullptr);

ModelConfig model_config(const RunConfig& config);

SearchResult run_search(const RunConfig& config, const DatasetSplit& split);

// Search, evaluate the mixed model (row "MUSE"), discretize and retrain, then
// evaluate again (row "MUSE-discrete").
ExperimentReport run_experiment(RunConfig config, const Dataset* given = nullptr);

// From a searched model: for k = 0, 1, ... prunes the lowest-weight operator
// of every transformation edge k times, retrains the weights with alpha
// frozen and evaluates. One row per retained operator count.
ExperimentReport run_operator_ablation(const RunConfig& config, const Model& searched, const DatasetSplit& split);

// Full model and one model per removed path, each searched, discretized and
// retrained under the same seed.
ExperimentReport run_path_ablation(const RunConfig& config, const DatasetSplit& split);

std::string operator_count_label(std::size_t count, std::size_t total);

}  // namespace muse
