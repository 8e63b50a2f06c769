#include "claf/layers.hpp"

#include "claf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace claf::nn {
namespace {

void require_cache(const Tensor& cached, const char* layer) {
    if (cached.empty()) {
        throw std::logic_error(std::string(layer) + ": backward called without a preceding training forward pass");
    }
}

std::size_t spatial(const Shape& s) { return s.size() == 4 ? s[2] * s[3] : 1; }

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad, bool bias,
               Rng& rng)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad), has_bias_(bias),
      weight_(out * in * kernel * kernel), bias_(bias ? out : 0, 0.0f, false) {
    // Kaiming normal, fan-out mode.
    std::normal_distribution<float> normal(0.0f, std::sqrt(2.0f / static_cast<float>(out * kernel * kernel)));
    for (auto& v : weight_.value) v = normal(rng);
}

Tensor Conv2d::forward(const Tensor& x, Pass pass) {
    if (x.rank() != 4 || x.dim(1) != in_) {
        throw std::invalid_argument("conv2d: expected [N, " + std::to_string(in_) + ", H, W], got " +
                                    shape_to_string(x.shape()));
    }
    kernels::ConvGeometry g{x.dim(0), in_, x.dim(2), x.dim(3), out_, kernel_, stride_, pad_};
    Tensor y({g.batch, out_, g.out_h(), g.out_w()});
    kernels::conv2d_forward(g, x.values(), weight_.value, bias_.value, y.values());
    if (pass == Pass::train) input_ = x;
    return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    require_cache(input_, "conv2d");
    kernels::ConvGeometry g{input_.dim(0), in_, input_.dim(2), input_.dim(3), out_, kernel_, stride_, pad_};
    Tensor dx(input_.shape());
    kernels::conv2d_backward(g, input_.values(), weight_.value, grad_out.values(), dx.values(), weight_.grad,
                             bias_.grad);
    return dx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + "weight", &weight_});
    if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(std::size_t channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps), gamma_(channels, 1.0f, false), beta_(channels, 0.0f, false),
      running_mean_(channels, 0.0f), running_var_(channels, 1.0f) {}

Tensor BatchNorm::forward(const Tensor& x, Pass pass) {
    if ((x.rank() != 4 && x.rank() != 2) || x.dim(1) != channels_) {
        throw std::invalid_argument("batchnorm: expected channel dim " + std::to_string(channels_) + ", got " +
                                    shape_to_string(x.shape()));
    }
    const std::size_t n = x.dim(0), hw = spatial(x.shape());
    Tensor y(x.shape());
    if (pass == Pass::eval) {
        kernels::batchnorm_forward_eval(n, channels_, hw, x.values(), gamma_.value, beta_.value, running_mean_,
                                        running_var_, eps_, y.values());
        return y;
    }
    std::vector<float> mean(channels_), inv_std(channels_);
    kernels::batchnorm_forward_train(n, channels_, hw, x.values(), gamma_.value, beta_.value, eps_, y.values(), mean,
                                     inv_std);
    if (pass == Pass::train) {
        const double m = static_cast<double>(n * hw);
        for (std::size_t c = 0; c < channels_; ++c) {
            const double biased = 1.0 / (static_cast<double>(inv_std[c]) * inv_std[c]) - eps_;
            const double unbiased = m > 1 ? biased * m / (m - 1) : biased;
            running_mean_[c] = (1.0f - momentum_) * running_mean_[c] + momentum_ * mean[c];
            running_var_[c] = (1.0f - momentum_) * running_var_[c] + momentum_ * static_cast<float>(unbiased);
        }
        input_ = x;
        mean_ = std::move(mean);
        inv_std_ = std::move(inv_std);
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& grad_out) {
    require_cache(input_, "batchnorm");
    Tensor dx(input_.shape());
    kernels::batchnorm_backward(input_.dim(0), channels_, spatial(input_.shape()), input_.values(), gamma_.value, mean_,
                                inv_std_, grad_out.values(), dx.values(), gamma_.grad, beta_.grad);
    return dx;
}

void BatchNorm::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + "gamma", &gamma_});
    out.push_back({prefix + "beta", &beta_});
}

void BatchNorm::collect_buffers(const std::string& prefix, std::vector<BufferView>& out) {
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
}

// ---------------------------------------------------------------- LeakyRelu

Tensor LeakyRelu::forward(const Tensor& x, Pass pass) {
    Tensor y(x.shape());
    const float* in = x.data();
    float* out = y.data();
    const std::size_t n = x.size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? in[i] : slope_ * in[i];
    if (pass == Pass::train) input_ = x;
    return y;
}

Tensor LeakyRelu::backward(const Tensor& grad_out) {
    require_cache(input_, "leaky_relu");
    Tensor dx(input_.shape());
    const float* in = input_.data();
    const float* g = grad_out.data();
    float* out = dx.data();
    const std::size_t n = dx.size();
#pragma omp parallel for simd schedule(static)
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0f ? g[i] : slope_ * g[i];
    return dx;
}

// ---------------------------------------------------------------- MaxPool2x2

Tensor MaxPool2x2::forward(const Tensor& x, Pass pass) {
    if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2) {
        throw std::invalid_argument("maxpool2x2: expected [N, C, H, W] with even H, W; got " + shape_to_string(x.shape()));
    }
    Tensor y({x.dim(0), x.dim(1), x.dim(2) / 2, x.dim(3) / 2});
    std::vector<std::uint32_t> argmax(y.size());
    kernels::maxpool2x2_forward(x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.values(), y.values(), argmax);
    if (pass == Pass::train) {
        input_shape_ = x.shape();
        argmax_ = std::move(argmax);
    }
    return y;
}

Tensor MaxPool2x2::backward(const Tensor& grad_out) {
    if (argmax_.empty()) throw std::logic_error("maxpool2x2: backward called without a preceding training forward pass");
    Tensor dx(input_shape_);
    kernels::maxpool2x2_backward(grad_out.values(), argmax_, dx.values());
    return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Pass pass) {
    if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: expected rank 4, got " + shape_to_string(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor y({n, c});
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0.0;
        const float* src = x.data() + i * hw;
        for (std::size_t p = 0; p < hw; ++p) acc += src[p];
        y[i] = static_cast<float>(acc / static_cast<double>(hw));
    }
    if (pass == Pass::train) input_shape_ = x.shape();
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    if (input_shape_.empty()) throw std::logic_error("global_avg_pool: backward called without a preceding training forward pass");
    Tensor dx(input_shape_);
    const std::size_t hw = input_shape_[2] * input_shape_[3];
    const float scale = 1.0f / static_cast<float>(hw);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        float* dst = dx.data() + i * hw;
        std::fill(dst, dst + hw, grad_out[i] * scale);
    }
    return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out, bool bias, Rng& rng)
    : in_(in), out_(out), has_bias_(bias), weight_(out * in), bias_(bias ? out : 0, 0.0f, false) {
    // Xavier uniform.
    const float bound = std::sqrt(6.0f / static_cast<float>(in + out));
    std::uniform_real_distribution<float> uniform(-bound, bound);
    for (auto& v : weight_.value) v = uniform(rng);
}

Tensor Linear::forward(const Tensor& x, Pass pass) {
    if (x.rank() != 2 || x.dim(1) != in_) {
        throw std::invalid_argument("linear: expected [N, " + std::to_string(in_) + "], got " + shape_to_string(x.shape()));
    }
    Tensor y({x.dim(0), out_});
    kernels::linear_forward(x.dim(0), in_, out_, x.values(), weight_.value, bias_.value, y.values());
    if (pass == Pass::train) input_ = x;
    return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
    require_cache(input_, "linear");
    Tensor dx(input_.shape());
    kernels::linear_backward(input_.dim(0), in_, out_, input_.values(), weight_.value, grad_out.values(), dx.values(),
                             weight_.grad, bias_.grad);
    return dx;
}

void Linear::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back({prefix + "weight", &weight_});
    if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

// ---------------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Sequential& Sequential::add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
}

Tensor Sequential::forward(const Tensor& x, Pass pass) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, pass);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void Sequential::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect_params(prefix + std::to_string(i) + ".", out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<BufferView>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->collect_buffers(prefix + std::to_string(i) + ".", out);
}

// ---------------------------------------------------------------- WideBlock

WideBlock::WideBlock(std::size_t in, std::size_t out, std::size_t stride, float slope, float bn_momentum, Rng& rng) {
    pre_.emplace<BatchNorm>(in, bn_momentum).emplace<LeakyRelu>(slope);
    residual_.add(std::make_unique<Conv2d>(in, out, 3, stride, 1, false, rng));
    residual_.emplace<BatchNorm>(out, bn_momentum).emplace<LeakyRelu>(slope);
    residual_.add(std::make_unique<Conv2d>(out, out, 3, 1, 1, false, rng));
    if (in != out || stride != 1) shortcut_ = std::make_unique<Conv2d>(in, out, 1, stride, 0, false, rng);
}

WideBlock::WideBlock(const WideBlock& other)
    : Layer(other), pre_(other.pre_), residual_(other.residual_),
      shortcut_(other.shortcut_ ? std::make_unique<Conv2d>(*other.shortcut_) : nullptr) {}

Tensor WideBlock::forward(const Tensor& x, Pass pass) {
    Tensor act = pre_.forward(x, pass);
    Tensor y = residual_.forward(act, pass);
    const Tensor skip = shortcut_ ? shortcut_->forward(act, pass) : x;
    if (skip.shape() != y.shape()) throw std::logic_error("wide_block: shortcut shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += skip[i];
    return y;
}

Tensor WideBlock::backward(const Tensor& grad_out) {
    Tensor d_act = residual_.backward(grad_out);
    if (shortcut_) {
        const Tensor d_skip = shortcut_->backward(grad_out);
        for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] += d_skip[i];
        return pre_.backward(d_act);
    }
    Tensor dx = pre_.backward(d_act);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += grad_out[i];
    return dx;
}

void WideBlock::collect_params(const std::string& prefix, std::vector<ParamView>& out) {
    pre_.collect_params(prefix + "pre.", out);
    residual_.collect_params(prefix + "residual.", out);
    if (shortcut_) shortcut_->collect_params(prefix + "shortcut.", out);
}

void WideBlock::collect_buffers(const std::string& prefix, std::vector<BufferView>& out) {
    pre_.collect_buffers(prefix + "pre.", out);
    residual_.collect_buffers(prefix + "residual.", out);
}

// ---------------------------------------------------------------- helpers

void zero_grad(std::span<const ParamView> params) {
    for (const auto& p : params) std::fill(p.param->grad.begin(), p.param->grad.end(), 0.0f);
}

std::size_t parameter_count(std::span<const ParamView> params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.param->value.size();
    return n;
}

}  // namespace claf::nn
