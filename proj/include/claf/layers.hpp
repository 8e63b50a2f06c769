#pragma once

#include "claf/rng.hpp"
#include "claf/tensor.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace claf::nn {

/// train: batch statistics, activations cached for backward, BN running stats updated.
/// train_no_grad: batch statistics, nothing cached or updated.
/// eval: running statistics, nothing cached.
enum class Pass { train, train_no_grad, eval };

struct Param {
    std::vector<float> value;
    std::vector<float> grad;
    bool decay = true;

    explicit Param(std::size_t n = 0, float fill = 0.0f, bool decay_ = true)
        : value(n, fill), grad(n, 0.0f), decay(decay_) {}
};

struct ParamView {
    std::string name;
    Param* param;
};

struct BufferView {
    std::string name;
    std::vector<float>* value;
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor forward(const Tensor& x, Pass pass) = 0;
    /// Accumulates parameter gradients and returns the input gradient.
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string kind() const = 0;

    virtual void collect_params(const std::string& /*prefix*/, std::vector<ParamView>& /*out*/) {}
    virtual void collect_buffers(const std::string& /*prefix*/, std::vector<BufferView>& /*out*/) {}
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad, bool bias, Rng& rng);

    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::string kind() const override { return "conv2d"; }
    void collect_params(const std::string& prefix, std::vector<ParamView>& out) override;

    Param& weight() { return weight_; }

private:
    std::size_t in_, out_, kernel_, stride_, pad_;
    bool has_bias_;
    Param weight_;
    Param bias_;
    Tensor input_;
};

class BatchNorm final : public Layer {
public:
    /// Works on [N, C, H, W] and on [N, C].
    explicit BatchNorm(std::size_t channels, float momentum = 0.01f, float eps = 1e-5f);

    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm>(*this); }
    std::string kind() const override { return "batchnorm"; }
    void collect_params(const std::string& prefix, std::vector<ParamView>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<BufferView>& out) override;

private:
    std::size_t channels_;
    float momentum_, eps_;
    Param gamma_, beta_;
    std::vector<float> running_mean_, running_var_;
    Tensor input_;
    std::vector<float> mean_, inv_std_;
};

class LeakyRelu final : public Layer {
public:
    explicit LeakyRelu(float slope = 0.0f) : slope_(slope) {}

    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyRelu>(*this); }
    std::string kind() const override { return "leaky_relu"; }

private:
    float slope_;
    Tensor input_;
};

class MaxPool2x2 final : public Layer {
public:
    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2x2>(*this); }
    std::string kind() const override { return "maxpool2x2"; }

private:
    Shape input_shape_;
    std::vector<std::uint32_t> argmax_;
};

/// [N, C, H, W] -> [N, C]
class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
    std::string kind() const override { return "global_avg_pool"; }

private:
    Shape input_shape_;
};

class Linear final : public Layer {
public:
    Linear(std::size_t in, std::size_t out, bool bias, Rng& rng);

    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
    std::string kind() const override { return "linear"; }
    void collect_params(const std::string& prefix, std::vector<ParamView>& out) override;

    std::size_t in_features() const noexcept { return in_; }
    std::size_t out_features() const noexcept { return out_; }
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }

private:
    std::size_t in_, out_;
    bool has_bias_;
    Param weight_, bias_;
    Tensor input_;
};

class Sequential final : public Layer {
public:
    Sequential() = default;
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    Sequential& add(LayerPtr layer);
    template <typename L, typename... Args>
    Sequential& emplace(Args&&... args) {
        return add(std::make_unique<L>(std::forward<Args>(args)...));
    }

    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }
    std::string kind() const override { return "sequential"; }
    void collect_params(const std::string& prefix, std::vector<ParamView>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<BufferView>& out) override;

    std::size_t size() const noexcept { return layers_.size(); }
    Layer& at(std::size_t i) { return *layers_.at(i); }

private:
    std::vector<LayerPtr> layers_;
};

/// Pre-activation wide residual block: BN-act-conv-BN-act-conv plus identity
/// or 1x1 projection shortcut taken from the first activation.
class WideBlock final : public Layer {
public:
    WideBlock(std::size_t in, std::size_t out, std::size_t stride, float slope, float bn_momentum, Rng& rng);
    WideBlock(const WideBlock& other);

    Tensor forward(const Tensor& x, Pass pass) override;
    Tensor backward(const Tensor& grad_out) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<WideBlock>(*this); }
    std::string kind() const override { return "wide_block"; }
    void collect_params(const std::string& prefix, std::vector<ParamView>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<BufferView>& out) override;

private:
    Sequential pre_;       // bn1, act1
    Sequential residual_;  // conv1, bn2, act2, conv2
    std::unique_ptr<Conv2d> shortcut_;
};

void zero_grad(std::span<const ParamView> params);
std::size_t parameter_count(std::span<const ParamView> params);

}  // namespace claf::nn
