#include "claf/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace claf {
namespace {

double norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

void softmax_inplace(std::span<double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    if (mx == -std::numeric_limits<double>::infinity()) {
        std::fill(row.begin(), row.end(), 1.0 / static_cast<double>(row.size()));
        return;
    }
    double sum = 0.0;
    for (auto& v : row) sum += v = std::exp(v - mx);
    for (auto& v : row) v /= sum;
}

std::vector<double> resolve_target(std::span<const double> target, std::size_t k) {
    if (target.empty()) return std::vector<double>(k, 1.0 / static_cast<double>(k));
    if (target.size() != k) throw std::invalid_argument("align_loss: target size != number of classes");
    return {target.begin(), target.end()};
}

}  // namespace

MatrixD linear_pseudo_label(const MatrixD& logits) {
    MatrixD p = logits;
    for (std::size_t i = 0; i < p.rows(); ++i) softmax_inplace(p.row(i));
    return p;
}

MatrixD semantic_pseudo_label(const MatrixD& z, const Prototypes& protos, double t_proto, std::uint64_t* zero_norm) {
    if (!(t_proto > 0.0)) throw std::invalid_argument("semantic_pseudo_label: T_proto must be positive");
    const std::size_t k = protos.centers.rows();
    if (z.cols() != protos.centers.cols()) throw std::invalid_argument("semantic_pseudo_label: feature dim mismatch");
    std::vector<double> cnorm(k);
    for (std::size_t c = 0; c < k; ++c) cnorm[c] = norm(protos.centers.row(c));

    MatrixD q(z.rows(), k);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto zi = z.row(i);
        const double zn = norm(zi);
        if (zn == 0.0 && zero_norm) ++*zero_norm;
        auto row = q.row(i);
        for (std::size_t c = 0; c < k; ++c) {
            if (!protos.defined[c]) {
                row[c] = -std::numeric_limits<double>::infinity();
                continue;
            }
            double sim = 0.0;
            if (zn > 0.0 && cnorm[c] > 0.0) {
                const auto cc = protos.centers.row(c);
                double dot = 0.0;
                for (std::size_t j = 0; j < zi.size(); ++j) dot += zi[j] * cc[j];
                sim = dot / (zn * cnorm[c]);
            }
            row[c] = sim / t_proto;
        }
        softmax_inplace(row);
    }
    return q;
}

MatrixD semantic_backward(const MatrixD& z, const Prototypes& protos, double t_proto, const MatrixD& q,
                          const MatrixD& grad_q) {
    const std::size_t k = protos.centers.rows(), d = z.cols();
    MatrixD grad_z(z.rows(), d, 0.0);
    std::vector<double> cnorm(k);
    for (std::size_t c = 0; c < k; ++c) cnorm[c] = norm(protos.centers.row(c));
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto zi = z.row(i);
        const double zn = norm(zi);
        if (zn == 0.0) continue;
        double qg = 0.0;
        for (std::size_t c = 0; c < k; ++c) qg += q(i, c) * grad_q(i, c);
        auto gz = grad_z.row(i);
        for (std::size_t c = 0; c < k; ++c) {
            if (!protos.defined[c] || cnorm[c] == 0.0 || q(i, c) == 0.0) continue;
            // d loss / d sim_c, with sim_c = cos(z, c) / T.
            const double g_logit = q(i, c) * (grad_q(i, c) - qg) / t_proto;
            const auto cc = protos.centers.row(c);
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += zi[j] * cc[j];
            const double cosv = dot / (zn * cnorm[c]);
            for (std::size_t j = 0; j < d; ++j) {
                gz[j] += g_logit * (cc[j] / cnorm[c] - cosv * zi[j] / zn) / zn;
            }
        }
    }
    return grad_z;
}

BlendWeights::BlendWeights(std::size_t num_classes, double window) : hist_(num_classes, 0.0), window_(window) {
    if (!(window >= 1.0)) throw std::invalid_argument("BlendWeights: window must be >= 1");
}

void BlendWeights::observe(const MatrixD& p_hat, double tau) {
    const double decay = 1.0 - 1.0 / window_;
    for (std::size_t i = 0; i < p_hat.rows(); ++i) {
        const auto row = p_hat.row(i);
        const auto it = std::max_element(row.begin(), row.end());
        if (*it < tau) continue;
        for (auto& h : hist_) h *= decay;
        hist_[static_cast<std::size_t>(it - row.begin())] += 1.0;
    }
}

std::vector<double> BlendWeights::weights() const {
    std::vector<double> w(hist_.size(), 0.0);
    const double mx = *std::max_element(hist_.begin(), hist_.end());
    if (mx <= 0.0) return w;
    for (std::size_t c = 0; c < w.size(); ++c) w[c] = hist_[c] / mx;
    return w;
}

MatrixD blend(const MatrixD& p_hat, const MatrixD& q_hat, std::span<const double> class_weights, double availability) {
    if (p_hat.rows() != q_hat.rows() || p_hat.cols() != q_hat.cols()) throw std::invalid_argument("blend: shape mismatch");
    if (class_weights.size() != p_hat.cols()) throw std::invalid_argument("blend: one weight per class required");
    availability = std::clamp(availability, 0.0, 1.0);
    MatrixD out(p_hat.rows(), p_hat.cols());
    for (std::size_t i = 0; i < p_hat.rows(); ++i) {
        const auto p = p_hat.row(i);
        const auto q = q_hat.row(i);
        const auto c = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
        const double w = std::clamp(class_weights[c], 0.0, 1.0) * availability;
        auto o = out.row(i);
        if (w == 0.0) {
            std::copy(p.begin(), p.end(), o.begin());
            continue;
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < o.size(); ++k) sum += o[k] = (1.0 - w) * p[k] + w * q[k];
        for (auto& v : o) v /= sum;
    }
    return out;
}

std::vector<int> argmax_rows(const MatrixD& p) {
    std::vector<int> out(p.rows());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const auto row = p.row(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double fixmatch_loss(const MatrixD& p_prime, const MatrixD& p_strong, double tau) {
    if (p_prime.rows() != p_strong.rows() || p_prime.cols() != p_strong.cols()) {
        throw std::invalid_argument("fixmatch_loss: shape mismatch");
    }
    if (p_prime.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < p_prime.rows(); ++i) {
        const auto row = p_prime.row(i);
        const auto it = std::max_element(row.begin(), row.end());
        if (!(*it >= tau)) continue;
        const auto c = static_cast<std::size_t>(it - row.begin());
        total += -std::log(std::max(p_strong(i, c), kProbEps));
    }
    return total / static_cast<double>(p_prime.rows());
}

LossAndGrad fixmatch_loss_logits(const MatrixD& p_prime, const MatrixD& strong_logits, double tau) {
    if (p_prime.rows() != strong_logits.rows() || p_prime.cols() != strong_logits.cols()) {
        throw std::invalid_argument("fixmatch_loss_logits: shape mismatch");
    }
    LossAndGrad out{0.0, MatrixD(p_prime.rows(), p_prime.cols(), 0.0)};
    if (p_prime.rows() == 0) return out;
    const double inv_b = 1.0 / static_cast<double>(p_prime.rows());
    const MatrixD p_strong = linear_pseudo_label(strong_logits);
    for (std::size_t i = 0; i < p_prime.rows(); ++i) {
        const auto row = p_prime.row(i);
        const auto it = std::max_element(row.begin(), row.end());
        if (!(*it >= tau)) continue;
        const auto c = static_cast<std::size_t>(it - row.begin());
        const double p = p_strong(i, c);
        out.loss += -std::log(std::max(p, kProbEps)) * inv_b;
        if (p <= kProbEps) continue;  // clamped: flat
        for (std::size_t k = 0; k < row.size(); ++k) out.grad(i, k) = (p_strong(i, k) - (k == c ? 1.0 : 0.0)) * inv_b;
    }
    return out;
}

double align_loss(const MatrixD& q_batch, std::span<const double> target) { return align_loss_grad(q_batch, target).loss; }

LossAndGrad align_loss_grad(const MatrixD& q_batch, std::span<const double> target) {
    const std::size_t b = q_batch.rows(), k = q_batch.cols();
    LossAndGrad out{0.0, MatrixD(b, k, 0.0)};
    if (b == 0) return out;
    const std::vector<double> t = resolve_target(target, k);
    std::vector<double> mean(k, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t c = 0; c < k; ++c) mean[c] += q_batch(i, c);
    for (auto& m : mean) m /= static_cast<double>(b);
    for (std::size_t c = 0; c < k; ++c) {
        const double m = std::max(mean[c], kProbEps);
        out.loss += -t[c] * std::log(m);
        if (mean[c] <= kProbEps) continue;
        const double g = -t[c] / m / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) out.grad(i, c) = g;
    }
    return out;
}

}  // namespace claf
