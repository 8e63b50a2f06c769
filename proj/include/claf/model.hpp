#pragma once

#include "claf/layers.hpp"
#include "claf/rng.hpp"
#include "claf/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace claf {

struct ModelConfig {
    std::string backbone = "cnn4";  // "cnn4" or "wrn28_2"
    std::size_t in_channels = 3;
    std::size_t image_size = 32;
    std::size_t num_classes = 10;
    std::size_t cnn_width = 16;
    std::size_t wrn_depth = 28;
    std::size_t wrn_widen = 2;
    std::size_t proj_dim = 64;
    std::size_t proj_hidden = 0;  // 0: same as the feature dim
    bool proj_linear = false;     // single bias-free linear map, no activation
    float leaky_slope = 0.1f;
    float bn_momentum = 0.001f;
    double ema_momentum = 0.999;

    void validate() const;
};

enum class ViewTag { labeled, weak, strong };
enum class Branch { online, ema };

struct FeatureBatch {
    MatrixF z;
    ViewTag view = ViewTag::labeled;
};

/// Encoder backbone; the output is the penultimate feature vector.
nn::Sequential make_encoder(const ModelConfig& cfg, Rng& rng, std::size_t& feature_dim);

/// 2-layer MLP followed by L2 normalization.
class ProjectionHead {
public:
    ProjectionHead(std::size_t in, std::size_t hidden, std::size_t out, bool linear_only, Rng& rng);

    MatrixF forward(const MatrixF& z, nn::Pass pass);
    /// Gradient w.r.t. the head input for a gradient w.r.t. the normalized embedding.
    MatrixF backward(const MatrixF& grad_e);

    void collect_params(const std::string& prefix, std::vector<nn::ParamView>& out) { mlp_.collect_params(prefix, out); }
    std::size_t out_dim() const noexcept { return out_; }
    /// Rows whose pre-normalization vector was zero; they map to the first basis vector.
    std::uint64_t zero_norm_count() const noexcept { return zero_norm_; }

private:
    nn::Sequential mlp_;
    std::size_t out_;
    MatrixF pre_norm_;
    std::vector<float> norms_;
    std::uint64_t zero_norm_ = 0;
};

/// Online encoder/classifier/head plus their EMA mirrors.
class ModelState {
public:
    ModelState(const ModelConfig& cfg, Rng& init_rng);

    const ModelConfig& config() const noexcept { return cfg_; }
    std::size_t feature_dim() const noexcept { return feature_dim_; }
    std::size_t num_classes() const noexcept { return cfg_.num_classes; }
    std::size_t proj_dim() const noexcept { return head_.out_dim(); }
    double rho() const noexcept { return rho_; }
    void set_rho(double rho);

    /// Eval-mode features from the online (use_ema=false) or EMA parameters.
    FeatureBatch encode(const Tensor& images, bool use_ema);
    FeatureBatch encode(const Tensor& images, Branch branch, nn::Pass pass, ViewTag view = ViewTag::labeled);

    MatrixF classify(const MatrixF& z, Branch branch = Branch::online, nn::Pass pass = nn::Pass::eval);
    MatrixF project(const MatrixF& z, bool use_ema, nn::Pass pass = nn::Pass::eval);

    // Backward through the most recent nn::Pass::train forward of each part.
    void encoder_backward(const MatrixF& grad_z);
    MatrixF classifier_backward(const MatrixF& grad_logits);
    MatrixF head_backward(const MatrixF& grad_e);

    /// theta' <- rho theta' + (1 - rho) theta for encoder, classifier and head mirrors.
    void ema_update();

    /// Double-precision values behind the EMA mirror (parameters, then buffers);
    /// empty until the first update. Part of the checkpointed state.
    std::vector<std::vector<double>>& ema_accumulator() noexcept { return ema_acc_; }

    /// Parameters updated by the optimizer: theta, phi, psi.
    std::vector<nn::ParamView> online_params();
    std::vector<nn::ParamView> ema_params();
    std::vector<nn::BufferView> online_buffers();
    std::vector<nn::BufferView> ema_buffers();

    /// Named tensors grouped as theta, phi, psi, theta_prime, phi_prime, psi_prime.
    std::vector<std::pair<std::string, std::vector<float>*>> named_state();

    std::uint64_t zero_norm_warnings() const noexcept { return head_.zero_norm_count() + ema_head_.zero_norm_count(); }

private:
    ModelConfig cfg_;
    std::size_t feature_dim_ = 0;
    double rho_;
    nn::Sequential encoder_, ema_encoder_;
    nn::Linear classifier_, ema_classifier_;
    ProjectionHead head_, ema_head_;
    std::vector<std::vector<double>> ema_acc_;
};

MatrixD softmax_rows(const MatrixD& logits);

}  // namespace claf
