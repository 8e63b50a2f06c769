#pragma once

#include "claf/rng.hpp"
#include "claf/tensor.hpp"

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace claf {

struct InvalidSpec : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct InsufficientSamples : std::runtime_error {
    InsufficientSamples(std::size_t cls, std::size_t needed, std::size_t available);
    std::size_t cls;
};

/// Long-tailed split parameters.
struct SplitSpec {
    std::size_t num_classes = 10;
    std::size_t head_labeled = 500;     // N1
    std::size_t head_unlabeled = 4000;  // M1
    double gamma = 100.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<std::size_t> labeled_counts() const;
    std::vector<std::size_t> unlabeled_counts() const;
};

/// count_k = round(head * gamma^(-(k-1)/(K-1))), at least 1.
std::vector<std::size_t> longtail_counts(std::size_t head, double gamma, std::size_t num_classes);

struct SplitManifest {
    SplitSpec spec;
    std::vector<std::size_t> labeled_counts;
    std::vector<std::size_t> unlabeled_counts;
    std::vector<std::vector<std::size_t>> labeled_indices;    // per class
    std::vector<std::vector<std::size_t>> unlabeled_indices;  // per class

    /// Flat (index, class) lists in class order.
    std::vector<std::pair<std::size_t, int>> labeled_pool() const;
    std::vector<std::pair<std::size_t, int>> unlabeled_pool() const;
};

nlohmann::ordered_json manifest_to_json(const SplitManifest& m);
SplitManifest manifest_from_json(const nlohmann::json& j);
/// Deterministic text: the same manifest always yields the same bytes.
std::string manifest_dump(const SplitManifest& m);

/// Any labeled image collection addressable by index. Images are CHW floats in [0, 1].
class ImageDataset {
public:
    virtual ~ImageDataset() = default;
    virtual std::size_t size() const = 0;
    virtual std::size_t num_classes() const = 0;
    virtual std::size_t channels() const = 0;
    virtual std::size_t height() const = 0;
    virtual std::size_t width() const = 0;
    virtual int label(std::size_t index) const = 0;
    virtual void image(std::size_t index, std::span<float> out) const = 0;
    virtual std::string name() const = 0;

    std::size_t image_size() const { return channels() * height() * width(); }
    std::vector<std::size_t> class_histogram() const;
};

/// Dataset held in memory as uint8 CHW pixels.
class InMemoryDataset final : public ImageDataset {
public:
    InMemoryDataset(std::string name, std::size_t classes, std::size_t c, std::size_t h, std::size_t w);

    void add(std::span<const std::uint8_t> chw, int label);
    void reserve(std::size_t n);

    std::size_t size() const override { return labels_.size(); }
    std::size_t num_classes() const override { return classes_; }
    std::size_t channels() const override { return c_; }
    std::size_t height() const override { return h_; }
    std::size_t width() const override { return w_; }
    int label(std::size_t index) const override { return labels_.at(index); }
    void image(std::size_t index, std::span<float> out) const override;
    std::string name() const override { return name_; }

private:
    std::string name_;
    std::size_t classes_, c_, h_, w_;
    std::vector<std::uint8_t> pixels_;
    std::vector<int> labels_;
};

/// Procedural K-class image set: each class is a coloured oriented grating
/// with class-specific blob layout, randomly shifted and corrupted by noise.
struct SyntheticSpec {
    std::size_t num_classes = 4;
    std::size_t per_class = 1000;
    std::size_t image_size = 32;
    double noise = 0.25;
    std::uint64_t seed = 0;
};
std::unique_ptr<InMemoryDataset> make_synthetic_dataset(const SyntheticSpec& spec, const std::string& name = "synthetic");

/// CIFAR-10 / CIFAR-100 binary-version loader ("cifar-10-batches-bin" / "cifar-100-binary").
std::unique_ptr<InMemoryDataset> load_cifar(const std::string& root, int classes, bool train);

/// Per-class pools drawn from a source dataset; labeled and unlabeled are disjoint.
SplitManifest build_splits(const ImageDataset& source, const SplitSpec& spec);

/// Stacks images into an [N, C, H, W] tensor.
Tensor gather_images(const ImageDataset& source, std::span<const std::size_t> indices);

}  // namespace claf
