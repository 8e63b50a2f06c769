#pragma once

#include "claf/memory.hpp"
#include "claf/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace claf {

/// Clamp applied to every probability before a log.
inline constexpr double kProbEps = 1e-8;

struct PseudoLabelBundle {
    MatrixD p_hat;    // linear
    MatrixD q_hat;    // semantic
    MatrixD p_prime;  // blended
    std::vector<bool> confident;
    std::vector<int> argmax_class;
};

/// softmax(logits) row-wise.
MatrixD linear_pseudo_label(const MatrixD& logits);

/// softmax(cos(z, c_k) / t_proto) over defined prototypes; undefined classes get
/// probability 0. A zero feature row gets similarity 0 to every prototype (uniform
/// over the defined classes) and bumps *zero_norm when given; with no defined
/// prototype at all the result is uniform over all classes.
MatrixD semantic_pseudo_label(const MatrixD& z, const Prototypes& protos, double t_proto,
                              std::uint64_t* zero_norm = nullptr);

/// Gradient w.r.t. z of a loss whose gradient w.r.t. q = semantic_pseudo_label(z) is grad_q.
MatrixD semantic_backward(const MatrixD& z, const Prototypes& protos, double t_proto, const MatrixD& q,
                          const MatrixD& grad_q);

/// Tracks how over-represented each class is among recent confident linear
/// pseudo-labels (decaying histogram with an effective window) and turns that
/// into per-class blend weights w_c = h_c / max_k h_k.
class BlendWeights {
public:
    explicit BlendWeights(std::size_t num_classes, double window = 1e4);

    /// Counts rows of p_hat whose max is >= tau.
    void observe(const MatrixD& p_hat, double tau);
    std::vector<double> weights() const;
    const std::vector<double>& histogram() const noexcept { return hist_; }
    std::vector<double>& histogram() noexcept { return hist_; }
    double window() const noexcept { return window_; }

private:
    std::vector<double> hist_;
    double window_;
};

/// p'_i = (1 - w) p_hat_i + w q_hat_i, w = availability * class_weights[argmax p_hat_i], renormalized.
MatrixD blend(const MatrixD& p_hat, const MatrixD& q_hat, std::span<const double> class_weights,
              double availability = 1.0);

std::vector<int> argmax_rows(const MatrixD& p);

/// Mean over the batch of 1(max p' >= tau) * H(onehot(argmax p'), p_strong).
double fixmatch_loss(const MatrixD& p_prime, const MatrixD& p_strong, double tau);

struct LossAndGrad {
    double loss = 0.0;
    MatrixD grad;
};

/// Same loss computed from strong-view logits; grad is w.r.t. those logits.
LossAndGrad fixmatch_loss_logits(const MatrixD& p_prime, const MatrixD& strong_logits, double tau);

/// Cross-entropy H(target, mean_i q_i); the default target is uniform over K.
double align_loss(const MatrixD& q_batch, std::span<const double> target = {});
/// grad is w.r.t. the rows of q_batch.
LossAndGrad align_loss_grad(const MatrixD& q_batch, std::span<const double> target = {});

}  // namespace claf
