#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

// Compute kernels behind the network layers and the contrastive objective.
//
// claf::kernels holds the OpenMP/Eigen versions used for training.
// claf::kernels::reference holds naive serial loops with identical
// signatures; they exist for tests and for the benchmark and are never
// called on the training path.
//
// All tensors are row-major float, images NCHW. Every kernel writes each
// output element from exactly one thread, so results do not depend on
// thread scheduling for a fixed thread count.

namespace claf::kernels {

struct ConvGeometry {
    std::size_t batch = 0;
    std::size_t in_channels = 0;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;

    std::size_t out_h() const noexcept { return (in_h + 2 * pad - kernel) / stride + 1; }
    std::size_t out_w() const noexcept { return (in_w + 2 * pad - kernel) / stride + 1; }
    std::size_t patch() const noexcept { return in_channels * kernel * kernel; }
    std::size_t pixels() const noexcept { return out_h() * out_w(); }
    std::size_t input_size() const noexcept { return batch * in_channels * in_h * in_w; }
    std::size_t output_size() const noexcept { return batch * out_channels * pixels(); }
    std::size_t weight_size() const noexcept { return out_channels * patch(); }
};

/// y = conv(x, w) + bias. bias may be empty.
void conv2d_forward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y);

/// Accumulates dw (and dbias when non-empty) and overwrites dx (when non-empty).
void conv2d_backward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                     std::span<const float> dy, std::span<float> dx, std::span<float> dw,
                     std::span<float> dbias);

/// y[n, o] = sum_i x[n, i] w[o, i] + b[o]; b may be empty.
void linear_forward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                    std::span<const float> w, std::span<const float> b, std::span<float> y);

/// Accumulates dw, db; overwrites dx (when non-empty).
void linear_backward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                     std::span<const float> w, std::span<const float> dy, std::span<float> dx,
                     std::span<float> dw, std::span<float> db);

/// Training-mode batch norm over (N, HW) per channel. Writes y, the batch mean
/// and the inverse standard deviation (biased variance), used by the backward pass.
void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                             std::span<const float> gamma, std::span<const float> beta, float eps,
                             std::span<float> y, std::span<float> mean, std::span<float> inv_std);

void batchnorm_forward_eval(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                            std::span<const float> gamma, std::span<const float> beta,
                            std::span<const float> running_mean, std::span<const float> running_var,
                            float eps, std::span<float> y);

/// Overwrites dx, accumulates dgamma and dbeta.
void batchnorm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                        std::span<const float> gamma, std::span<const float> mean,
                        std::span<const float> inv_std, std::span<const float> dy, std::span<float> dx,
                        std::span<float> dgamma, std::span<float> dbeta);

/// 2x2 / stride 2 max pooling; argmax holds the flat input index of each output.
void maxpool2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::span<const float> x,
                        std::span<float> y, std::span<std::uint32_t> argmax);
void maxpool2x2_backward(std::span<const float> dy, std::span<const std::uint32_t> argmax, std::span<float> dx);

/// s[i, j] = <a_i, b_j> for a: [m, d], b: [n, d].
void row_dot_products(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                      std::span<const double> b, std::span<double> s);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y);
void conv2d_backward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                     std::span<const float> dy, std::span<float> dx, std::span<float> dw,
                     std::span<float> dbias);
void linear_forward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                    std::span<const float> w, std::span<const float> b, std::span<float> y);
void linear_backward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                     std::span<const float> w, std::span<const float> dy, std::span<float> dx,
                     std::span<float> dw, std::span<float> db);
void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                             std::span<const float> gamma, std::span<const float> beta, float eps,
                             std::span<float> y, std::span<float> mean, std::span<float> inv_std);
void batchnorm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                        std::span<const float> gamma, std::span<const float> mean,
                        std::span<const float> inv_std, std::span<const float> dy, std::span<float> dx,
                        std::span<float> dgamma, std::span<float> dbeta);
void maxpool2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::span<const float> x,
                        std::span<float> y, std::span<std::uint32_t> argmax);
void row_dot_products(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                      std::span<const double> b, std::span<double> s);

}  // namespace reference

/// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace claf::kernels
