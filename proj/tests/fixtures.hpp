#pragma once

// Random problem instances shared by the unit and acceptance tests.

#include "claf/contrastive.hpp"
#include "claf/data_loader.hpp"
#include "claf/longtail_data.hpp"
#include "claf/rng.hpp"
#include "claf/trainer.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace fixture {

struct ContrastiveInstance {
    claf::EmbeddingQueueView view;
    claf::ContrastiveBatch batch;
    // Plain copies for the oracle.
    std::vector<std::vector<double>> anchors;
    std::vector<std::vector<std::vector<double>>> queues;
    std::vector<std::vector<double>> v;

    void bind() { batch.queue = &view; }
};

inline std::vector<double> random_unit(std::size_t d, claf::Rng& rng) {
    std::vector<double> e(d);
    double sq = 0;
    do {
        sq = 0;
        for (auto& x : e) {
            x = claf::uniform01(rng) * 2 - 1;
            sq += x * x;
        }
    } while (sq < 1e-4);
    for (auto& x : e) x /= std::sqrt(sq);
    return e;
}

/// B anchors, K classes with 1..max_fill entries each (0 allowed when allow_empty),
/// confidences in (0.95, 1] or 0, v in (0.8, 1].
inline ContrastiveInstance random_contrastive(claf::Rng& rng, std::size_t b, std::size_t k, std::size_t max_fill,
                                              std::size_t d, bool allow_empty = false) {
    ContrastiveInstance inst;
    inst.batch.e_s = claf::MatrixD(b, d);
    for (std::size_t i = 0; i < b; ++i) {
        auto a = random_unit(d, rng);
        // Unnormalized anchors exercise the normalization path.
        const double scale = 0.5 + claf::uniform01(rng) * 2;
        for (std::size_t j = 0; j < d; ++j) inst.batch.e_s(i, j) = a[j] * scale;
        inst.anchors.emplace_back(inst.batch.e_s.row(i).begin(), inst.batch.e_s.row(i).end());
        inst.batch.pseudo_class.push_back(static_cast<int>(claf::uniform_index(rng, k)));
        inst.batch.s.push_back(claf::uniform01(rng) < 0.2 ? 0.0 : 0.95 + 0.05 * (1.0 - claf::uniform01(rng)));
    }
    inst.queues.resize(k);
    inst.v.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t lo = allow_empty ? 0 : 1;
        const std::size_t n = lo + claf::uniform_index(rng, max_fill - lo + 1);
        claf::MatrixD e(n, d);
        std::vector<double> w(n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto u = random_unit(d, rng);
            for (std::size_t j = 0; j < d; ++j) e(r, j) = u[j];
            inst.queues[c].push_back(u);
            w[r] = claf::uniform01(rng) < 0.5 ? 1.0 : 0.8 + 0.2 * (1.0 - claf::uniform01(rng));
        }
        inst.v[c] = w;
        inst.view.embeddings.push_back(std::move(e));
        inst.view.weights.push_back(std::move(w));
    }
    inst.bind();
    return inst;
}

/// Small 4-class synthetic problem with a cheap CNN, for trainer-level tests.
struct TinyRun {
    std::unique_ptr<claf::InMemoryDataset> data;
    claf::SplitManifest manifest;
    claf::ModelConfig model;
    claf::TrainConfig train;

    explicit TinyRun(std::uint64_t seed = 1, std::size_t total_iters = 100) {
        data = claf::make_synthetic_dataset({4, 60, 16, 0.25, seed});
        claf::SplitSpec spec;
        spec.num_classes = 4;
        spec.head_labeled = 20;
        spec.head_unlabeled = 40;
        spec.gamma = 4;
        spec.seed = seed;
        manifest = claf::build_splits(*data, spec);
        model.image_size = 16;
        model.num_classes = 4;
        model.cnn_width = 4;
        model.proj_dim = 8;
        train.total_iters = total_iters;
        train.batch_labeled = 8;
        train.batch_unlabeled = 8;
        train.queue_capacity = 16;
        train.seed = seed;
    }

    claf::TrainLoader loader() const {
        return claf::TrainLoader(*data, manifest, train.batch_labeled, train.batch_unlabeled, claf::AugmentPolicy{}, train.seed);
    }
    std::unique_ptr<claf::Trainer> trainer() const {
        return std::make_unique<claf::Trainer>(model, train, manifest.labeled_counts);
    }
};

/// FNV-1a over every named parameter and buffer of the model.
inline std::uint64_t state_hash(claf::ModelState& m) {
    std::string bytes;
    for (const auto& [name, values] : m.named_state()) {
        bytes += name;
        bytes.append(reinterpret_cast<const char*>(values->data()), values->size() * sizeof(float));
    }
    return claf::fnv1a64(bytes);
}

}  // namespace fixture
