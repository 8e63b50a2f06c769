#pragma once

#include "claf/memory.hpp"
#include "claf/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace claf {

/// s_i = max(p'_i) when strictly above tau, else 0.
std::vector<double> confidence_vector(const MatrixD& p_prime, double tau);

/// w_ij = s_i * v_j, shape [s.size(), v.size()].
MatrixD weight_matrix(std::span<const double> s, std::span<const double> v);

struct ContrastiveBatch {
    MatrixD e_s;                     // [B, d] strong-view embeddings
    std::vector<int> pseudo_class;   // B
    std::vector<double> s;           // B
    const EmbeddingQueueView* queue = nullptr;
};

struct ContrastiveResult {
    double loss = 0.0;
    MatrixD grad;                    // d loss / d e_s, empty unless requested
    std::vector<double> per_sample;  // L_{c,i}
    std::uint64_t skipped = 0;       // confident samples whose pseudo-class queue is empty
};

/// Confidence-weighted contrastive loss of strong-view embeddings against the
/// labeled embedding queues:
///   L = 1/B sum_i -1/|E_{p_i}| sum_{p in E_{p_i}} w_ip log( exp(sim_ip / t) / sum_k sum_{j in E_k} exp(sim_ij / t) )
/// with cosine sim and |E_{p_i}| the current fill of the pseudo-class queue.
/// Queue embeddings are constants; the gradient is only w.r.t. e_s.
ContrastiveResult contrastive_loss(const ContrastiveBatch& batch, double temperature, bool with_grad = false);

}  // namespace claf
