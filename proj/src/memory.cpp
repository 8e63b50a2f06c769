#include "claf/memory.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace claf {

std::size_t Prototypes::num_defined() const { return static_cast<std::size_t>(std::count(defined.begin(), defined.end(), true)); }

std::size_t EmbeddingQueueView::total() const {
    std::size_t n = 0;
    for (const auto& e : embeddings) n += e.rows();
    return n;
}

ClassMemory::ClassMemory(std::size_t num_classes, std::size_t feature_dim, std::size_t embed_dim, std::size_t capacity)
    : feature_dim_(feature_dim), embed_dim_(embed_dim), capacity_(capacity), queues_(num_classes) {
    if (capacity == 0) throw std::invalid_argument("ClassMemory: capacity must be positive");
    for (auto& q : queues_) {
        q.features.assign(capacity * feature_dim, 0.0f);
        q.embeddings.assign(capacity * embed_dim, 0.0f);
        q.weights.assign(capacity, 0.0);
        q.augmented.assign(capacity, 0);
    }
}

const ClassMemory::Queue& ClassMemory::queue(std::size_t cls) const {
    if (cls >= queues_.size()) {
        throw std::out_of_range("ClassMemory: class " + std::to_string(cls) + " out of range [0, " +
                                std::to_string(queues_.size()) + ")");
    }
    return queues_[cls];
}

void ClassMemory::push(std::size_t cls, std::span<const float> feature, std::span<const float> embedding, double v,
                       bool augmented) {
    queue(cls);
    if (feature.size() != feature_dim_ || embedding.size() != embed_dim_) {
        throw std::invalid_argument("ClassMemory::push: feature/embedding width mismatch");
    }
    if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("ClassMemory::push: label confidence must lie in (0, 1]");
    double sq = 0.0;
    for (float x : embedding) sq += static_cast<double>(x) * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-3) throw std::invalid_argument("ClassMemory::push: embedding is not unit-norm");
    Queue& q = queues_[cls];
    std::size_t s;
    if (q.count < capacity_) {
        s = slot(q, q.count);
        ++q.count;
    } else {
        s = q.head;  // overwrite the oldest entry in all three stores
        q.head = (q.head + 1) % capacity_;
    }
    std::copy(feature.begin(), feature.end(), q.features.begin() + static_cast<std::ptrdiff_t>(s * feature_dim_));
    std::copy(embedding.begin(), embedding.end(), q.embeddings.begin() + static_cast<std::ptrdiff_t>(s * embed_dim_));
    q.weights[s] = v;
    q.augmented[s] = augmented ? 1 : 0;
}

std::size_t ClassMemory::size(std::size_t cls) const { return queue(cls).count; }
std::size_t ClassMemory::embedding_count(std::size_t cls) const { return queue(cls).count; }
std::size_t ClassMemory::confidence_count(std::size_t cls) const { return queue(cls).count; }

bool ClassMemory::all_nonempty() const {
    return std::all_of(queues_.begin(), queues_.end(), [](const Queue& q) { return q.count > 0; });
}

std::span<const float> ClassMemory::feature(std::size_t cls, std::size_t i) const {
    const Queue& q = queue(cls);
    if (i >= q.count) throw std::out_of_range("ClassMemory::feature: entry index out of range");
    return {q.features.data() + slot(q, i) * feature_dim_, feature_dim_};
}

std::span<const float> ClassMemory::embedding(std::size_t cls, std::size_t i) const {
    const Queue& q = queue(cls);
    if (i >= q.count) throw std::out_of_range("ClassMemory::embedding: entry index out of range");
    return {q.embeddings.data() + slot(q, i) * embed_dim_, embed_dim_};
}

double ClassMemory::confidence(std::size_t cls, std::size_t i) const {
    const Queue& q = queue(cls);
    if (i >= q.count) throw std::out_of_range("ClassMemory::confidence: entry index out of range");
    return q.weights[slot(q, i)];
}

bool ClassMemory::augmented(std::size_t cls, std::size_t i) const {
    const Queue& q = queue(cls);
    if (i >= q.count) throw std::out_of_range("ClassMemory::augmented: entry index out of range");
    return q.augmented[slot(q, i)] != 0;
}

std::size_t ClassMemory::augmented_count(std::size_t cls) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < size(cls); ++i) n += augmented(cls, i) ? 1 : 0;
    return n;
}

Prototypes ClassMemory::prototypes() const {
    Prototypes p{MatrixD(queues_.size(), feature_dim_, 0.0), std::vector<bool>(queues_.size(), false)};
    for (std::size_t k = 0; k < queues_.size(); ++k) {
        const std::size_t n = queues_[k].count;
        if (n == 0) continue;
        auto row = p.centers.row(k);
        for (std::size_t i = 0; i < n; ++i) {
            const auto f = feature(k, i);
            for (std::size_t j = 0; j < feature_dim_; ++j) row[j] += f[j];
        }
        for (auto& v : row) v /= static_cast<double>(n);
        p.defined[k] = true;
    }
    return p;
}

EmbeddingQueueView ClassMemory::embedding_view() const {
    EmbeddingQueueView view;
    view.embeddings.reserve(queues_.size());
    view.weights.reserve(queues_.size());
    for (std::size_t k = 0; k < queues_.size(); ++k) {
        const std::size_t n = queues_[k].count;
        MatrixD e(n, embed_dim_);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto src = embedding(k, i);
            std::copy(src.begin(), src.end(), e.row(i).begin());
            v[i] = confidence(k, i);
        }
        view.embeddings.push_back(std::move(e));
        view.weights.push_back(std::move(v));
    }
    return view;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("ClassMemory::load: truncated stream");
}

template <typename T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_vec(std::istream& is, std::vector<T>& v) {
    if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)))) {
        throw std::runtime_error("ClassMemory::load: truncated stream");
    }
}

}  // namespace

void ClassMemory::save(std::ostream& os) const {
    const std::uint64_t header[4] = {queues_.size(), feature_dim_, embed_dim_, capacity_};
    for (auto h : header) write_pod(os, h);
    for (const auto& q : queues_) {
        write_pod(os, static_cast<std::uint64_t>(q.head));
        write_pod(os, static_cast<std::uint64_t>(q.count));
        write_vec(os, q.features);
        write_vec(os, q.embeddings);
        write_vec(os, q.weights);
        write_vec(os, q.augmented);
    }
}

void ClassMemory::load(std::istream& is) {
    std::uint64_t header[4];
    for (auto& h : header) read_pod(is, h);
    if (header[0] != queues_.size() || header[1] != feature_dim_ || header[2] != embed_dim_ || header[3] != capacity_) {
        throw std::runtime_error("ClassMemory::load: stored queue geometry does not match this memory");
    }
    for (auto& q : queues_) {
        std::uint64_t head = 0, count = 0;
        read_pod(is, head);
        read_pod(is, count);
        q.head = head;
        q.count = count;
        read_vec(is, q.features);
        read_vec(is, q.embeddings);
        read_vec(is, q.weights);
        read_vec(is, q.augmented);
    }
}

}  // namespace claf
