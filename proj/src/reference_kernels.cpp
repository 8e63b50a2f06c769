#include "claf/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace claf::kernels::reference {

void conv2d_forward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
                                acc += static_cast<double>(x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix]) *
                                       w[((o * g.in_channels + ci) * k + ky) * k + kx];
                            }
                    y[((n * g.out_channels + o) * oh + oy) * ow + ox] = static_cast<float>(acc);
                }
}

void conv2d_backward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                     std::span<const float> dy, std::span<float> dx, std::span<float> dw,
                     std::span<float> dbias) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0f);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const float grad = dy[((n * g.out_channels + o) * oh + oy) * ow + ox];
                    if (!dbias.empty()) dbias[o] += grad;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.in_h) || ix >= static_cast<long>(g.in_w)) continue;
                                const std::size_t xi = ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                                const std::size_t wi = ((o * g.in_channels + ci) * k + ky) * k + kx;
                                dw[wi] += grad * x[xi];
                                if (!dx.empty()) dx[xi] += grad * w[wi];
                            }
                }
}

void linear_forward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                    std::span<const float> w, std::span<const float> b, std::span<float> y) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b.empty() ? 0.0 : b[o];
            for (std::size_t j = 0; j < in; ++j) acc += static_cast<double>(x[i * in + j]) * w[o * in + j];
            y[i * out + o] = static_cast<float>(acc);
        }
}

void linear_backward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                     std::span<const float> w, std::span<const float> dy, std::span<float> dx,
                     std::span<float> dw, std::span<float> db) {
    if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            const float g = dy[i * out + o];
            if (!db.empty()) db[o] += g;
            for (std::size_t j = 0; j < in; ++j) {
                dw[o * in + j] += g * x[i * in + j];
                if (!dx.empty()) dx[i * in + j] += g * w[o * in + j];
            }
        }
}

void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                             std::span<const float> gamma, std::span<const float> beta, float eps,
                             std::span<float> y, std::span<float> mean, std::span<float> inv_std) {
    const double count = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) sum += x[(i * c + ch) * hw + p];
        const double mu = sum / count;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) sq += std::pow(x[(i * c + ch) * hw + p] - mu, 2);
        const double istd = 1.0 / std::sqrt(sq / count + eps);
        mean[ch] = static_cast<float>(mu);
        inv_std[ch] = static_cast<float>(istd);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t idx = (i * c + ch) * hw + p;
                y[idx] = static_cast<float>(gamma[ch] * (x[idx] - mu) * istd + beta[ch]);
            }
    }
}

void batchnorm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                        std::span<const float> gamma, std::span<const float> mean,
                        std::span<const float> inv_std, std::span<const float> dy, std::span<float> dx,
                        std::span<float> dgamma, std::span<float> dbeta) {
    // Direct chain rule through mean and variance, written independently of
    // the fused closed form used by the optimized kernel.
    const double m = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = mean[ch], istd = inv_std[ch];
        double dvar = 0.0, dmean = 0.0, sum_xmu = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t idx = (i * c + ch) * hw + p;
                const double dxhat = dy[idx] * gamma[ch];
                dvar += dxhat * (x[idx] - mu) * -0.5 * istd * istd * istd;
                dmean += -dxhat * istd;
                sum_xmu += x[idx] - mu;
                dbeta[ch] += dy[idx];
                dgamma[ch] += static_cast<float>(dy[idx] * (x[idx] - mu) * istd);
            }
        dmean += dvar * -2.0 * sum_xmu / m;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t idx = (i * c + ch) * hw + p;
                dx[idx] = static_cast<float>(dy[idx] * gamma[ch] * istd + dvar * 2.0 * (x[idx] - mu) / m + dmean / m);
            }
    }
}

void maxpool2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::span<const float> x,
                        std::span<float> y, std::span<std::uint32_t> argmax) {
    const std::size_t oh = h / 2, ow = w / 2;
    for (std::size_t plane = 0; plane < n * c; ++plane)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = plane * h * w + 2 * oy * w + 2 * ox;
                for (std::size_t d = 0; d < 4; ++d) {
                    const std::size_t idx = plane * h * w + (2 * oy + d / 2) * w + 2 * ox + d % 2;
                    if (x[idx] > x[best]) best = idx;
                }
                y[plane * oh * ow + oy * ow + ox] = x[best];
                argmax[plane * oh * ow + oy * ow + ox] = static_cast<std::uint32_t>(best);
            }
}

void row_dot_products(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                      std::span<const double> b, std::span<double> s) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) acc += a[i * d + k] * b[j * d + k];
            s[i * n + j] = acc;
        }
}

}  // namespace claf::kernels::reference
