#pragma once

#include "claf/rng.hpp"
#include "claf/tensor.hpp"

#include <span>
#include <vector>

namespace claf {

struct FAConfig {
    double alpha = 0.5;            // Beta(alpha, alpha)
    double mu = 0.8;               // floor on the labeled share
    double start_fraction = 0.8;   // FA runs once iter >= start_fraction * total

    void validate() const;
};

struct AugmentedFeature {
    std::vector<float> z_aug;
    int label = 0;
    double lam = 1.0;
    std::size_t labeled_index = 0;    // row in the labeled batch
    std::size_t unlabeled_index = 0;  // row in the unlabeled batch
};

/// P_k = (N_1 - N_k) / N_1 with N_1 the largest labeled count.
std::vector<double> fa_probability(std::span<const std::size_t> labeled_counts);

/// max(raw, 1 - raw, mu).
double fold_lambda(double raw, double mu);
/// lambda ~ Beta(alpha, alpha), returned as max(lambda, 1 - lambda, mu).
double sample_lambda(double alpha, double mu, Rng& rng);

/// lam * z_l + (1 - lam) * z_w.
std::vector<float> mix_features(std::span<const float> z_l, std::span<const float> z_w, double lam);

struct FABatchResult {
    std::vector<AugmentedFeature> features;
    bool skipped = false;  // empty unlabeled batch
};

/// For each labeled row of class k, with probability P_k, blends it with a
/// uniformly drawn unlabeled row of the same batch. At most one augmented
/// feature per labeled row.
FABatchResult augment_batch(const MatrixF& labeled_feats, std::span<const int> labels, const MatrixF& unlabeled_feats,
                            std::span<const double> probabilities, const FAConfig& cfg, Rng& rng);

}  // namespace claf
