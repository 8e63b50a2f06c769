#pragma once

#include "claf/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace claf {

/// Per-class prototypes; row k is meaningful only when defined[k].
struct Prototypes {
    MatrixD centers;
    std::vector<bool> defined;

    std::size_t num_defined() const;
};

/// Immutable copy of the embedding queues and their label confidences.
struct EmbeddingQueueView {
    std::vector<MatrixD> embeddings;          // per class, rows oldest first
    std::vector<std::vector<double>> weights;  // v, aligned with embeddings

    std::size_t total() const;
};

/// Class-balanced FIFO memory: feature queue Q_k, embedding queue E_k and
/// label confidence V_k per class, evicted in lockstep once a class is full.
class ClassMemory {
public:
    ClassMemory(std::size_t num_classes, std::size_t feature_dim, std::size_t embed_dim, std::size_t capacity);

    /// v = 1 for raw labeled entries, v = lambda for augmented ones.
    void push(std::size_t cls, std::span<const float> feature, std::span<const float> embedding, double v,
              bool augmented = false);

    std::size_t num_classes() const noexcept { return queues_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t feature_dim() const noexcept { return feature_dim_; }
    std::size_t embed_dim() const noexcept { return embed_dim_; }

    std::size_t size(std::size_t cls) const;
    std::size_t feature_count(std::size_t cls) const { return size(cls); }
    std::size_t embedding_count(std::size_t cls) const;
    std::size_t confidence_count(std::size_t cls) const;
    bool all_nonempty() const;

    /// i-th entry of class cls counting from the oldest.
    std::span<const float> feature(std::size_t cls, std::size_t i) const;
    std::span<const float> embedding(std::size_t cls, std::size_t i) const;
    double confidence(std::size_t cls, std::size_t i) const;
    bool augmented(std::size_t cls, std::size_t i) const;
    std::size_t augmented_count(std::size_t cls) const;

    /// Arithmetic mean of each feature queue, computed in full from the stored entries.
    Prototypes prototypes() const;
    EmbeddingQueueView embedding_view() const;

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    struct Queue {
        std::vector<float> features;    // capacity x feature_dim ring
        std::vector<float> embeddings;  // capacity x embed_dim ring
        std::vector<double> weights;
        std::vector<std::uint8_t> augmented;
        std::size_t head = 0;  // slot of the oldest entry
        std::size_t count = 0;
    };

    std::size_t slot(const Queue& q, std::size_t i) const { return (q.head + i) % capacity_; }
    const Queue& queue(std::size_t cls) const;

    std::size_t feature_dim_, embed_dim_, capacity_;
    std::vector<Queue> queues_;
};

}  // namespace claf
