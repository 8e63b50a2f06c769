#include "claf/feature_aug.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace claf {

void FAConfig::validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("fa.alpha must be > 0");
    if (!(mu >= 0.5 && mu <= 1.0)) throw std::invalid_argument("fa.mu must lie in [0.5, 1]");
    if (!(start_fraction >= 0.0 && start_fraction <= 1.0)) throw std::invalid_argument("fa.start_fraction must lie in [0, 1]");
}

std::vector<double> fa_probability(std::span<const std::size_t> labeled_counts) {
    if (labeled_counts.empty()) return {};
    const std::size_t head = *std::max_element(labeled_counts.begin(), labeled_counts.end());
    if (head == 0) throw std::invalid_argument("fa_probability: labeled counts must be positive");
    std::vector<double> p(labeled_counts.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (labeled_counts[k] == 0) throw std::invalid_argument("fa_probability: class " + std::to_string(k) + " has no labeled samples");
        p[k] = static_cast<double>(head - labeled_counts[k]) / static_cast<double>(head);
    }
    return p;
}

double fold_lambda(double raw, double mu) { return std::max({raw, 1.0 - raw, mu}); }

double sample_lambda(double alpha, double mu, Rng& rng) { return fold_lambda(sample_beta(rng, alpha, alpha), mu); }

std::vector<float> mix_features(std::span<const float> z_l, std::span<const float> z_w, double lam) {
    if (z_l.size() != z_w.size()) throw std::invalid_argument("mix_features: feature width mismatch");
    std::vector<float> out(z_l.size());
    if (lam == 1.0) {
        std::copy(z_l.begin(), z_l.end(), out.begin());
        return out;
    }
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = static_cast<float>(lam * z_l[j] + (1.0 - lam) * z_w[j]);
    }
    return out;
}

FABatchResult augment_batch(const MatrixF& labeled_feats, std::span<const int> labels, const MatrixF& unlabeled_feats,
                            std::span<const double> probabilities, const FAConfig& cfg, Rng& rng) {
    cfg.validate();
    if (labels.size() != labeled_feats.rows()) throw std::invalid_argument("augment_batch: one label per labeled row required");
    FABatchResult out;
    if (unlabeled_feats.rows() == 0) {
        out.skipped = true;
        return out;
    }
    if (unlabeled_feats.cols() != labeled_feats.cols()) throw std::invalid_argument("augment_batch: feature width mismatch");
    for (std::size_t i = 0; i < labeled_feats.rows(); ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        if (k >= probabilities.size()) throw std::out_of_range("augment_batch: label out of range");
        if (!bernoulli(rng, probabilities[k])) continue;
        const std::size_t partner = uniform_index(rng, unlabeled_feats.rows());
        const double lam = sample_lambda(cfg.alpha, cfg.mu, rng);
        out.features.push_back({mix_features(labeled_feats.row(i), unlabeled_feats.row(partner), lam), labels[i], lam, i, partner});
    }
    return out;
}

}  // namespace claf
