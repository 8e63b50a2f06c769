#pragma once

#include "claf/augment.hpp"
#include "claf/longtail_data.hpp"
#include "claf/rng.hpp"
#include "claf/tensor.hpp"

#include <future>
#include <optional>
#include <string>
#include <vector>

namespace claf {

/// Fixed per-channel standardization applied to every network input.
inline constexpr float kPixelMean = 0.5f;
inline constexpr float kPixelStd = 0.25f;
void standardize(Tensor& images);

/// Endless stream of positions in [0, n), reshuffled every epoch.
class IndexSampler {
public:
    IndexSampler(std::size_t n, std::uint64_t seed);

    std::vector<std::size_t> next(std::size_t count);
    std::size_t epoch() const noexcept { return epoch_; }

    std::string serialize() const;
    void deserialize(const std::string& text);

private:
    void reshuffle();

    Rng rng_;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
    std::size_t epoch_ = 0;
};

struct TrainBatch {
    std::size_t step = 0;
    Tensor labeled;  // weak view of the labeled samples
    std::vector<int> labels;
    Tensor weak, strong;  // two views of the same unlabeled samples
    std::vector<std::size_t> labeled_ids, unlabeled_ids;  // source dataset indices
};

/// Produces augmented labeled/unlabeled batches. Every sample's augmentation
/// RNG is seeded from (step, slot, view), so batches do not depend on timing
/// and prefetching changes throughput only.
class TrainLoader {
public:
    TrainLoader(const ImageDataset& source, const SplitManifest& manifest, std::size_t batch_labeled,
                std::size_t batch_unlabeled, AugmentPolicy policy, std::uint64_t master_seed);
    ~TrainLoader();

    TrainBatch next();
    /// Build the following batch on a background thread while the caller trains.
    void set_prefetch(bool on);

    std::size_t step() const noexcept { return step_; }
    const AugmentPolicy& policy() const noexcept { return policy_; }

    /// Sampler positions after the last batch handed out.
    std::string serialize() const;
    void deserialize(const std::string& text);

private:
    struct Draw {
        std::size_t step;
        std::vector<std::size_t> labeled, unlabeled;
    };
    Draw draw();
    TrainBatch build(const Draw& d) const;
    std::string sampler_state() const;
    void drop_pending();

    const ImageDataset& source_;
    std::vector<std::pair<std::size_t, int>> labeled_pool_;
    std::vector<std::size_t> unlabeled_pool_;
    std::size_t bl_, bu_;
    AugmentPolicy policy_;
    std::uint64_t aug_seed_;
    IndexSampler labeled_sampler_, unlabeled_sampler_;
    std::size_t step_ = 0;       // next step whose indices have not been drawn
    std::size_t consumed_ = 0;   // batches handed out
    bool prefetch_ = false;
    std::optional<std::future<TrainBatch>> pending_;
    std::string consumed_state_;
};

}  // namespace claf
