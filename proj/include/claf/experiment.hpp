#pragma once

#include "claf/data_loader.hpp"
#include "claf/evaluation.hpp"
#include "claf/run_config.hpp"
#include "claf/trainer.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace claf {

SplitManifest prepare_manifest(const RunConfig& cfg, const ImageDataset& train);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);
SplitManifest read_manifest(const std::string& path);

/// Human-readable method label derived from the ablation-relevant settings.
std::string method_label(const RunConfig& cfg);

/// Checkpoint archive plus "<path>.json" sidecar holding the effective config,
/// its hash, the archive's FNV-1a hash and the evaluation history.
struct CheckpointInfo {
    nlohmann::json config;
    std::string config_hash;
    std::string archive_hash;
    std::size_t iter = 0;
    std::vector<EvalRecord> evals;
};

void save_checkpoint(const std::string& path, Trainer& trainer, const std::string& loader_state, const RunConfig& cfg,
                     const std::vector<EvalRecord>& evals);
CheckpointInfo read_checkpoint_info(const std::string& path);
/// Restores trainer state; returns the loader state stored alongside. Throws
/// ConfigError when the checkpoint was written under a different config.
std::string load_checkpoint(const std::string& path, Trainer& trainer, const RunConfig& cfg);
/// Rebuilds the run config and trainer stored in a checkpoint.
RunConfig checkpoint_config(const std::string& path);
std::string file_hash(const std::string& path);

struct TrainOptions {
    std::string out_dir = "runs/default";
    std::optional<std::string> manifest;
    std::optional<std::string> resume;
    /// Stop after this many iterations (total counts from 0); 0 runs to completion.
    std::size_t stop_at = 0;
    std::function<void(const std::string&)> log;
};

struct TrainSummary {
    std::vector<EvalRecord> evals;
    std::optional<double> final_score;
    std::size_t iters = 0;
    double seconds = 0.0;
    std::string checkpoint;
    nlohmann::ordered_json to_json(const RunConfig& cfg) const;
};

/// Full training run: data, splits, trainer, periodic evaluation and checkpoints,
/// JSON-lines metrics in out_dir/metrics.jsonl, summary in out_dir/summary.json.
TrainSummary run_training(const RunConfig& cfg, const TrainOptions& opts);

}  // namespace claf
