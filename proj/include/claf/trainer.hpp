#pragma once

#include "claf/contrastive.hpp"
#include "claf/data_loader.hpp"
#include "claf/feature_aug.hpp"
#include "claf/memory.hpp"
#include "claf/model.hpp"
#include "claf/optimizer.hpp"
#include "claf/pseudo_label.hpp"
#include "claf/rng.hpp"

#include <json.hpp>

#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace claf {

struct LossWeights {
    double u = 1.0;
    double align = 1.0;
    double c = 1.0;
};

struct TrainConfig {
    std::size_t total_iters = 5000;
    std::size_t batch_labeled = 16;
    std::size_t batch_unlabeled = 32;
    LossWeights weights;
    OptimConfig optim;
    FAConfig fa;
    double tau = 0.95;
    double t_proto = 0.05;
    double temperature = 0.07;
    std::size_t queue_capacity = 128;
    double blend_window = 1e4;
    std::size_t eval_interval = 500;
    std::uint64_t seed = 0;
    bool deterministic = true;

    void validate() const;
};

/// A loss component was NaN or infinite; the step is aborted before any update.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::string component, double value, std::size_t iter);
    const std::string& component() const noexcept { return component_; }
    std::size_t iter() const noexcept { return iter_; }

private:
    std::string component_;
    std::size_t iter_;
};

/// l_cls + w.u * l_u + w.align * l_align + w.c * l_c; throws NonFiniteLoss naming the first bad term.
double total_loss(double l_cls, double l_u, double l_align, double l_c, const LossWeights& w, std::size_t iter = 0);

bool fa_active(std::size_t iter, std::size_t total, double start_fraction);

struct StepMetrics {
    std::size_t iter = 0;
    double l_cls = 0.0, l_u = 0.0, l_align = 0.0, l_c = 0.0, total = 0.0;
    double confident_frac = 0.0;   // max p' >= tau
    double contrastive_frac = 0.0; // s_i > 0
    std::size_t fa_count = 0;
    bool fa_on = false;
    bool fa_skipped = false;
    std::uint64_t contrastive_skipped = 0;
    double blend_availability = 0.0;
    double lr = 0.0;
    std::vector<std::size_t> pseudo_hist;  // confident pseudo-labels per class
    std::vector<std::size_t> queue_fill;   // |Q_k| after this step's pushes

    nlohmann::ordered_json to_json() const;
};

/// Everything a step observer may inspect; references are valid only during the callback.
struct StepTrace {
    std::size_t iter;
    const PseudoLabelBundle& labels;
    const std::vector<double>& s;
};

class Trainer {
public:
    Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, std::vector<std::size_t> labeled_counts);
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// One CLAF step on a prepared batch.
    StepMetrics step(const TrainBatch& batch);
    /// FixMatch + semantic pseudo-labels + alignment, no contrastive term and no FA.
    StepMetrics baseline_step(const TrainBatch& batch);
    /// Cross-entropy on the labeled batch only.
    StepMetrics supervised_step(const TrainBatch& batch);

    void set_observer(std::function<void(const StepTrace&)> fn) { observer_ = std::move(fn); }

    std::size_t iter() const noexcept { return iter_; }
    const TrainConfig& config() const noexcept { return cfg_; }
    ModelState& model() noexcept { return model_; }
    const ClassMemory& memory() const noexcept { return memory_; }
    ClassMemory& memory() noexcept { return memory_; }
    const BlendWeights& blend_weights() const noexcept { return blend_; }
    const std::vector<double>& fa_probabilities() const noexcept { return fa_prob_; }
    RngStreams& streams() noexcept { return streams_; }
    std::uint64_t semantic_zero_norm() const noexcept { return semantic_zero_norm_; }

    /// Full mutable state: iteration, parameters and buffers, optimizer, queues, blend histogram, RNG streams.
    void save_state(std::ostream& os);
    void load_state(std::istream& is);

private:
    PseudoLabelBundle pseudo_labels(const MatrixF& z_weak, const Prototypes& protos, StepMetrics& m);
    double labeled_branch(const TrainBatch& batch);
    void push_labeled(const MatrixF& z_l_ema, const std::vector<int>& labels);
    StepMetrics finish(StepMetrics m);

    ModelConfig model_cfg_;
    TrainConfig cfg_;
    std::vector<std::size_t> labeled_counts_;
    std::vector<double> fa_prob_;
    RngStreams streams_;
    ModelState model_;
    Sgd optim_;
    ClassMemory memory_;
    BlendWeights blend_;
    std::size_t iter_ = 0;
    std::uint64_t semantic_zero_norm_ = 0;
    std::function<void(const StepTrace&)> observer_;
};

/// Mean cross-entropy of logits against integer labels and its gradient w.r.t. the logits.
LossAndGrad cross_entropy(const MatrixD& logits, const std::vector<int>& labels);

}  // namespace claf
