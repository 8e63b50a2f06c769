#pragma once

#include "claf/augment.hpp"
#include "claf/longtail_data.hpp"
#include "claf/model.hpp"
#include "claf/trainer.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace claf {

/// Invalid configuration: unknown key, wrong type, or violated invariant.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SyntheticConfig {
    std::size_t per_class = 1000;
    std::size_t test_per_class = 250;
    std::size_t image_size = 32;
    double noise = 0.25;
    std::uint64_t seed = 1234;  // identity of the generated dataset, independent of the run seed
};

struct DataConfig {
    std::string source = "synthetic";  // synthetic | cifar10 | cifar100
    std::string root;                  // empty: $CLAF_DATA_DIR, then ./data
    std::size_t num_classes = 4;
    std::size_t head_labeled = 200;
    std::size_t head_unlabeled = 800;
    double gamma = 10.0;
    SyntheticConfig synthetic;
};

struct EvalConfig {
    std::size_t window = 20;
    std::size_t tail_k = 3;
    std::size_t batch_size = 256;
};

struct RunConfig {
    std::string name = "custom";
    std::uint64_t seed = 0;
    DataConfig data;
    AugmentPolicy augment;
    ModelConfig model;
    TrainConfig trainer;
    EvalConfig eval;

    /// Every field, defaults included.
    nlohmann::ordered_json to_json() const;
    /// Strict: the document must only contain keys that to_json() produces.
    static RunConfig from_json(const nlohmann::json& j);
    void validate() const;

    SplitSpec split_spec() const;
    /// FNV-1a of the canonical effective-config dump, as 16 hex digits.
    std::string hash() const;
};

std::vector<std::string> preset_names();
/// Partial document applied on top of the defaults.
nlohmann::json preset_patch(const std::string& name);

/// Merge patch into base; every patch key must already exist in base with a compatible type.
void merge_strict(nlohmann::ordered_json& base, const nlohmann::json& patch, const std::string& path = "");
/// Apply "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::ordered_json& doc, const std::string& assignment);

/// defaults <- preset <- file <- overrides, then validated.
RunConfig load_run_config(const std::optional<std::string>& preset, const std::optional<std::string>& file,
                          const std::vector<std::string>& overrides);

/// Resolved dataset cache directory for a config.
std::string data_root(const DataConfig& cfg);

struct Datasets {
    std::unique_ptr<ImageDataset> train;
    std::unique_ptr<ImageDataset> test;
};
Datasets load_datasets(const RunConfig& cfg);

}  // namespace claf
