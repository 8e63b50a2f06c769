#include "claf/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace claf {

void ModelConfig::validate() const {
    if (backbone != "cnn4" && backbone != "wrn28_2") {
        throw std::invalid_argument("model.backbone must be 'cnn4' or 'wrn28_2', got '" + backbone + "'");
    }
    if (num_classes < 2) throw std::invalid_argument("model.num_classes must be >= 2");
    if (in_channels == 0 || image_size == 0) throw std::invalid_argument("model: image shape must be non-empty");
    if (backbone == "cnn4" && image_size % 16 != 0) throw std::invalid_argument("cnn4 backbone needs image_size divisible by 16");
    if (backbone == "wrn28_2" && ((wrn_depth < 10) || (wrn_depth - 4) % 6 != 0)) {
        throw std::invalid_argument("model.wrn_depth must be 6n + 4");
    }
    if (proj_dim == 0) throw std::invalid_argument("model.proj_dim must be positive");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw std::invalid_argument("model.ema_momentum must lie in [0, 1]");
}

nn::Sequential make_encoder(const ModelConfig& cfg, Rng& rng, std::size_t& feature_dim) {
    cfg.validate();
    nn::Sequential net;
    if (cfg.backbone == "cnn4") {
        const std::size_t w = cfg.cnn_width;
        const std::size_t widths[4] = {w, 2 * w, 4 * w, 4 * w};
        std::size_t in = cfg.in_channels;
        for (std::size_t out : widths) {
            net.add(std::make_unique<nn::Conv2d>(in, out, 3, 1, 1, false, rng));
            net.emplace<nn::BatchNorm>(out, cfg.bn_momentum).emplace<nn::LeakyRelu>(cfg.leaky_slope).emplace<nn::MaxPool2x2>();
            in = out;
        }
        net.emplace<nn::GlobalAvgPool>();
        feature_dim = in;
        return net;
    }
    // Wide-ResNet-depth-widen
    const std::size_t blocks = (cfg.wrn_depth - 4) / 6;
    const std::size_t k = cfg.wrn_widen;
    const std::size_t widths[4] = {16, 16 * k, 32 * k, 64 * k};
    net.add(std::make_unique<nn::Conv2d>(cfg.in_channels, widths[0], 3, 1, 1, false, rng));
    std::size_t in = widths[0];
    for (std::size_t group = 0; group < 3; ++group) {
        for (std::size_t b = 0; b < blocks; ++b) {
            const std::size_t stride = (group > 0 && b == 0) ? 2 : 1;
            net.add(std::make_unique<nn::WideBlock>(in, widths[group + 1], stride, cfg.leaky_slope, cfg.bn_momentum, rng));
            in = widths[group + 1];
        }
    }
    net.emplace<nn::BatchNorm>(in, cfg.bn_momentum).emplace<nn::LeakyRelu>(cfg.leaky_slope).emplace<nn::GlobalAvgPool>();
    feature_dim = in;
    return net;
}

// ---------------------------------------------------------------- ProjectionHead

ProjectionHead::ProjectionHead(std::size_t in, std::size_t hidden, std::size_t out, bool linear_only, Rng& rng)
    : out_(out) {
    if (linear_only) {
        mlp_.add(std::make_unique<nn::Linear>(in, out, false, rng));
    } else {
        mlp_.add(std::make_unique<nn::Linear>(in, hidden, true, rng));
        mlp_.emplace<nn::LeakyRelu>(0.0f);
        mlp_.add(std::make_unique<nn::Linear>(hidden, out, true, rng));
    }
}

MatrixF ProjectionHead::forward(const MatrixF& z, nn::Pass pass) {
    MatrixF h = to_matrix(mlp_.forward(to_tensor(z), pass));
    MatrixF e(h.rows(), h.cols());
    std::vector<float> norms(h.rows());
    for (std::size_t i = 0; i < h.rows(); ++i) {
        double sq = 0.0;
        for (float v : h.row(i)) sq += static_cast<double>(v) * v;
        const double norm = std::sqrt(sq);
        norms[i] = static_cast<float>(norm);
        if (norm == 0.0 || !std::isfinite(norm)) {
            e(i, 0) = 1.0f;
            norms[i] = 0.0f;
            ++zero_norm_;
            continue;
        }
        for (std::size_t j = 0; j < h.cols(); ++j) e(i, j) = static_cast<float>(h(i, j) / norm);
    }
    if (pass == nn::Pass::train) {
        pre_norm_ = std::move(h);
        norms_ = std::move(norms);
    }
    return e;
}

MatrixF ProjectionHead::backward(const MatrixF& grad_e) {
    if (pre_norm_.rows() != grad_e.rows()) throw std::logic_error("projection head: backward without matching training forward");
    MatrixF grad_h(grad_e.rows(), grad_e.cols());
    for (std::size_t i = 0; i < grad_e.rows(); ++i) {
        if (norms_[i] == 0.0f) continue;
        const double inv = 1.0 / norms_[i];
        double dot = 0.0;
        for (std::size_t j = 0; j < grad_e.cols(); ++j) dot += grad_e(i, j) * pre_norm_(i, j) * inv;
        for (std::size_t j = 0; j < grad_e.cols(); ++j) {
            grad_h(i, j) = static_cast<float>((grad_e(i, j) - dot * pre_norm_(i, j) * inv) * inv);
        }
    }
    return to_matrix(mlp_.backward(to_tensor(grad_h)));
}

// ---------------------------------------------------------------- ModelState

ModelState::ModelState(const ModelConfig& cfg, Rng& init_rng)
    : cfg_(cfg), rho_(cfg.ema_momentum), encoder_(make_encoder(cfg, init_rng, feature_dim_)), ema_encoder_(encoder_),
      classifier_(feature_dim_, cfg.num_classes, true, init_rng), ema_classifier_(classifier_),
      head_(feature_dim_, cfg.proj_hidden ? cfg.proj_hidden : feature_dim_, cfg.proj_dim, cfg.proj_linear, init_rng),
      ema_head_(head_) {}

void ModelState::set_rho(double rho) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("EMA momentum must lie in [0, 1]");
    rho_ = rho;
}

FeatureBatch ModelState::encode(const Tensor& images, bool use_ema) {
    return encode(images, use_ema ? Branch::ema : Branch::online, nn::Pass::eval);
}

FeatureBatch ModelState::encode(const Tensor& images, Branch branch, nn::Pass pass, ViewTag view) {
    if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != cfg_.image_size ||
        images.dim(3) != cfg_.image_size) {
        throw std::invalid_argument("encode: expected images [N, " + std::to_string(cfg_.in_channels) + ", " +
                                    std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + "], got " +
                                    shape_to_string(images.shape()));
    }
    if (branch == Branch::ema && pass == nn::Pass::train) throw std::logic_error("encode: the EMA branch never takes gradients");
    auto& net = branch == Branch::ema ? ema_encoder_ : encoder_;
    return {to_matrix(net.forward(images, pass)), view};
}

MatrixF ModelState::classify(const MatrixF& z, Branch branch, nn::Pass pass) {
    if (z.cols() != feature_dim_) {
        throw std::invalid_argument("classify: feature dim " + std::to_string(z.cols()) + " != " + std::to_string(feature_dim_));
    }
    auto& cls = branch == Branch::ema ? ema_classifier_ : classifier_;
    return to_matrix(cls.forward(to_tensor(z), pass));
}

MatrixF ModelState::project(const MatrixF& z, bool use_ema, nn::Pass pass) {
    if (z.cols() != feature_dim_) {
        throw std::invalid_argument("project: feature dim " + std::to_string(z.cols()) + " != " + std::to_string(feature_dim_));
    }
    if (use_ema && pass == nn::Pass::train) throw std::logic_error("project: the EMA branch never takes gradients");
    return (use_ema ? ema_head_ : head_).forward(z, pass);
}

void ModelState::encoder_backward(const MatrixF& grad_z) { encoder_.backward(to_tensor(grad_z)); }

MatrixF ModelState::classifier_backward(const MatrixF& grad_logits) {
    return to_matrix(classifier_.backward(to_tensor(grad_logits)));
}

MatrixF ModelState::head_backward(const MatrixF& grad_e) { return head_.backward(grad_e); }

void ModelState::ema_update() {
    std::vector<std::vector<float>*> dst_views, src_views;
    for (auto& p : ema_params()) dst_views.push_back(&p.param->value);
    for (auto& b : ema_buffers()) dst_views.push_back(b.value);
    for (auto& p : online_params()) src_views.push_back(&p.param->value);
    for (auto& b : online_buffers()) src_views.push_back(b.value);

    // The mirror is tracked in double: with rho near 1 the per-step change is
    // far below float resolution and rounding it every step biases theta'.
    if (ema_acc_.size() != dst_views.size()) {
        ema_acc_.assign(dst_views.size(), {});
        for (std::size_t i = 0; i < dst_views.size(); ++i) ema_acc_[i].assign(dst_views[i]->begin(), dst_views[i]->end());
    }
    const double rho = rho_, one_minus = 1.0 - rho_;
    for (std::size_t i = 0; i < dst_views.size(); ++i) {
        auto& dst = *dst_views[i];
        const auto& src = *src_views[i];
        auto& acc = ema_acc_[i];
        for (std::size_t j = 0; j < dst.size(); ++j) {
            if (static_cast<float>(acc[j]) != dst[j]) acc[j] = dst[j];  // mirror was overwritten externally
            acc[j] = rho * acc[j] + one_minus * src[j];
            dst[j] = static_cast<float>(acc[j]);
        }
    }
}

std::vector<nn::ParamView> ModelState::online_params() {
    std::vector<nn::ParamView> out;
    encoder_.collect_params("theta.", out);
    classifier_.collect_params("phi.", out);
    head_.collect_params("psi.", out);
    return out;
}

std::vector<nn::ParamView> ModelState::ema_params() {
    std::vector<nn::ParamView> out;
    ema_encoder_.collect_params("theta_prime.", out);
    ema_classifier_.collect_params("phi_prime.", out);
    ema_head_.collect_params("psi_prime.", out);
    return out;
}

std::vector<nn::BufferView> ModelState::online_buffers() {
    std::vector<nn::BufferView> out;
    encoder_.collect_buffers("theta.", out);
    return out;
}

std::vector<nn::BufferView> ModelState::ema_buffers() {
    std::vector<nn::BufferView> out;
    ema_encoder_.collect_buffers("theta_prime.", out);
    return out;
}

std::vector<std::pair<std::string, std::vector<float>*>> ModelState::named_state() {
    std::vector<std::pair<std::string, std::vector<float>*>> out;
    for (auto& p : online_params()) out.emplace_back(p.name, &p.param->value);
    for (auto& b : online_buffers()) out.emplace_back(b.name, b.value);
    for (auto& p : ema_params()) out.emplace_back(p.name, &p.param->value);
    for (auto& b : ema_buffers()) out.emplace_back(b.name, b.value);
    return out;
}

MatrixD softmax_rows(const MatrixD& logits) {
    MatrixD out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t k = 0; k < row.size(); ++k) sum += out(i, k) = std::exp(row[k] - mx);
        for (std::size_t k = 0; k < row.size(); ++k) out(i, k) /= sum;
    }
    return out;
}

}  // namespace claf
