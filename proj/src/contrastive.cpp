#include "claf/contrastive.hpp"

#include "claf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace claf {

std::vector<double> confidence_vector(const MatrixD& p_prime, double tau) {
    std::vector<double> s(p_prime.rows(), 0.0);
    for (std::size_t i = 0; i < p_prime.rows(); ++i) {
        const auto row = p_prime.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        if (mx > tau) s[i] = mx;
    }
    return s;
}

MatrixD weight_matrix(std::span<const double> s, std::span<const double> v) {
    MatrixD w(s.size(), v.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) w(i, j) = s[i] * v[j];
    return w;
}

ContrastiveResult contrastive_loss(const ContrastiveBatch& batch, double temperature, bool with_grad) {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be positive");
    if (!batch.queue) throw std::invalid_argument("contrastive_loss: missing queue snapshot");
    const EmbeddingQueueView& queue = *batch.queue;
    const std::size_t b = batch.e_s.rows(), d = batch.e_s.cols(), k = queue.embeddings.size();
    if (batch.pseudo_class.size() != b || batch.s.size() != b) throw std::invalid_argument("contrastive_loss: batch fields disagree on B");

    ContrastiveResult out;
    out.per_sample.assign(b, 0.0);
    if (with_grad) out.grad = MatrixD(b, d, 0.0);
    const std::size_t total = queue.total();
    if (b == 0) return out;
    if (total == 0) {
        out.skipped = static_cast<std::uint64_t>(std::count_if(batch.s.begin(), batch.s.end(), [](double v) { return v != 0.0; }));
        return out;
    }

    // Normalized copies of the anchors and of every queued embedding, concatenated class by class.
    MatrixD anchors(b, d);
    std::vector<double> anchor_norm(b);
    for (std::size_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (double v : batch.e_s.row(i)) sq += v * v;
        anchor_norm[i] = std::sqrt(sq);
        for (std::size_t j = 0; j < d; ++j) anchors(i, j) = anchor_norm[i] > 0.0 ? batch.e_s(i, j) / anchor_norm[i] : 0.0;
    }
    MatrixD keys(total, d);
    std::vector<std::size_t> offset(k + 1, 0);
    for (std::size_t c = 0; c < k; ++c) {
        const MatrixD& e = queue.embeddings[c];
        if (e.rows() && e.cols() != d) throw std::invalid_argument("contrastive_loss: embedding width mismatch");
        for (std::size_t r = 0; r < e.rows(); ++r) {
            double sq = 0.0;
            for (double v : e.row(r)) sq += v * v;
            const double n = std::sqrt(sq);
            for (std::size_t j = 0; j < d; ++j) keys(offset[c] + r, j) = n > 0.0 ? e(r, j) / n : 0.0;
        }
        offset[c + 1] = offset[c] + e.rows();
    }

    MatrixD sims(b, total);
    kernels::row_dot_products(b, total, d, anchors.storage(), keys.storage(), sims.storage());

    std::vector<std::uint8_t> skipped(b, 0);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < b; ++i) {
        if (batch.s[i] == 0.0) continue;
        const auto p = static_cast<std::size_t>(batch.pseudo_class[i]);
        const std::size_t begin = offset.at(p), count = offset.at(p + 1) - begin;
        if (count == 0) {
            skipped[i] = 1;
            continue;
        }
        const auto row = sims.row(i);
        double mx = row[0] / temperature;
        for (double v : row) mx = std::max(mx, v / temperature);
        double denom = 0.0;
        for (double v : row) denom += std::exp(v / temperature - mx);
        const double lse = mx + std::log(denom);

        const auto& v = queue.weights[p];
        double weighted = 0.0, weight_sum = 0.0;
        for (std::size_t r = 0; r < count; ++r) {
            const double w = batch.s[i] * v[r];
            weighted += w * (row[begin + r] / temperature - lse);
            weight_sum += w;
        }
        const double inv_count = 1.0 / static_cast<double>(count);
        out.per_sample[i] = -weighted * inv_count;

        if (with_grad && anchor_norm[i] > 0.0) {
            // d L_i / d sim_j = -(1/n) (w_j [j in E_p] - W softmax_j) / t
            std::vector<double> g_hat(d, 0.0);
            for (std::size_t j = 0; j < total; ++j) {
                double g = weight_sum * std::exp(row[j] / temperature - lse);
                if (j >= begin && j < begin + count) g -= batch.s[i] * v[j - begin];
                g *= inv_count / temperature / static_cast<double>(b);
                const auto key = keys.row(j);
                for (std::size_t m = 0; m < d; ++m) g_hat[m] += g * key[m];
            }
            // Back through the normalization of the anchor.
            double dot = 0.0;
            for (std::size_t m = 0; m < d; ++m) dot += g_hat[m] * anchors(i, m);
            for (std::size_t m = 0; m < d; ++m) out.grad(i, m) = (g_hat[m] - dot * anchors(i, m)) / anchor_norm[i];
        }
    }
    for (std::size_t i = 0; i < b; ++i) {
        out.loss += out.per_sample[i];
        out.skipped += skipped[i];
    }
    out.loss /= static_cast<double>(b);
    return out;
}

}  // namespace claf
