#pragma once

#include "claf/longtail_data.hpp"
#include "claf/model.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace claf {

struct EvalRecord {
    std::size_t iter = 0;
    double top1 = 0.0;
    std::vector<double> per_class;
    double tail = 0.0;  // mean accuracy over the tail_k least common training classes
    std::size_t tail_k = 3;

    nlohmann::ordered_json to_json() const;
    static EvalRecord from_json(const nlohmann::json& j);
};

/// Accuracy summary of predictions. Classes are indexed head to tail, so the
/// tail metric averages the last tail_k per-class accuracies.
EvalRecord score_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                             std::size_t num_classes, std::size_t tail_k = 3);

/// EMA-network predictions over a dataset, in batches, without touching any state.
std::vector<int> predict(ModelState& state, const ImageDataset& data, std::size_t batch_size = 256);

EvalRecord evaluate(ModelState& state, const ImageDataset& test, std::size_t iter = 0, std::size_t tail_k = 3,
                    std::size_t batch_size = 256);

/// Median of the last `window` top1 values.
double final_score(const std::vector<EvalRecord>& records, std::size_t window = 20);
double median(std::vector<double> values);

struct MeanStd {
    double mean = 0.0;
    double stdev = 0.0;  // sample standard deviation, 0 for a single value
    std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

/// One row per (setting, method) with the per-seed scores it aggregates.
struct SummaryRow {
    std::string setting;
    std::string method;
    std::vector<double> scores;
};
/// CSV with columns setting,method,n,mean,std,scores.
std::string summary_csv(const std::vector<SummaryRow>& rows);

/// Feature file: "CLAFFEAT", u64 header length, JSON header, then N x d float32
/// features row-major and N int32 labels, all little-endian.
struct FeatureFile {
    nlohmann::json header;
    std::size_t rows = 0, dim = 0;
    std::vector<float> features;
    std::vector<std::int32_t> labels;
};

void export_features(ModelState& state, const ImageDataset& data, const std::string& path,
                     const nlohmann::json& extra_header = nlohmann::json::object(), std::size_t batch_size = 256);
FeatureFile read_features(const std::string& path);

}  // namespace claf
