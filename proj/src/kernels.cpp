#include "claf/kernels.hpp"

#include <Eigen/Core>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace claf::kernels {
namespace {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMajorD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Upper bound on the im2col workspace, in floats. The chunking depends only
// on the layer geometry, never on the thread count.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

std::size_t images_per_chunk(const ConvGeometry& g) {
    const std::size_t per_image = g.patch() * g.pixels();
    return std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_image, 1), 1, g.batch);
}

// Writes image `n` into columns [col0, col0 + pixels) of a [patch, ld] matrix.
void im2col(const ConvGeometry& g, const float* x, std::size_t n, float* cols, std::size_t ld, std::size_t col0) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    const float* img = x + n * g.in_channels * g.in_h * g.in_w;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        const float* plane = img + ci * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                float* row = cols + ((ci * k + ky) * k + kx) * ld + col0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    float* out = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
                        std::fill(out, out + ow, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) ? 0.0f : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const ConvGeometry& g, const float* cols, std::size_t ld, std::size_t col0, float* dx, std::size_t n) {
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    float* img = dx + n * g.in_channels * g.in_h * g.in_w;
    std::fill(img, img + g.in_channels * g.in_h * g.in_w, 0.0f);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
        float* plane = img + ci * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const float* row = cols + ((ci * k + ky) * k + kx) * ld + col0;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
                    float* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    const float* in = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void conv2d_forward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y) {
    const std::size_t patch = g.patch(), pixels = g.pixels(), chunk = images_per_chunk(g);
    std::vector<float> cols(patch * pixels * chunk);
    std::vector<float> out(g.out_channels * pixels * chunk);
    Eigen::Map<const RowMajorF> weight(w.data(), g.out_channels, patch);

    for (std::size_t first = 0; first < g.batch; first += chunk) {
        const std::size_t count = std::min(chunk, g.batch - first);
        const std::size_t ld = count * pixels;
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < count; ++i) im2col(g, x.data(), first + i, cols.data(), ld, i * pixels);

        Eigen::Map<const RowMajorF> columns(cols.data(), patch, ld);
        Eigen::Map<RowMajorF> result(out.data(), g.out_channels, ld);
        result.noalias() = weight * columns;

#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                const float b = bias.empty() ? 0.0f : bias[o];
                const float* src = out.data() + o * ld + i * pixels;
                float* dst = y.data() + ((first + i) * g.out_channels + o) * pixels;
                for (std::size_t p = 0; p < pixels; ++p) dst[p] = src[p] + b;
            }
        }
    }
}

void conv2d_backward(const ConvGeometry& g, std::span<const float> x, std::span<const float> w,
                     std::span<const float> dy, std::span<float> dx, std::span<float> dw,
                     std::span<float> dbias) {
    const std::size_t patch = g.patch(), pixels = g.pixels(), chunk = images_per_chunk(g);
    std::vector<float> cols(patch * pixels * chunk);
    std::vector<float> grad(g.out_channels * pixels * chunk);
    std::vector<float> dcols(dx.empty() ? 0 : patch * pixels * chunk);
    Eigen::Map<const RowMajorF> weight(w.data(), g.out_channels, patch);
    Eigen::Map<RowMajorF> dweight(dw.data(), g.out_channels, patch);

    if (!dbias.empty()) {
#pragma omp parallel for schedule(static)
        for (std::size_t o = 0; o < g.out_channels; ++o) {
            double acc = 0.0;
            for (std::size_t n = 0; n < g.batch; ++n) {
                const float* src = dy.data() + (n * g.out_channels + o) * pixels;
                for (std::size_t p = 0; p < pixels; ++p) acc += src[p];
            }
            dbias[o] += static_cast<float>(acc);
        }
    }

    for (std::size_t first = 0; first < g.batch; first += chunk) {
        const std::size_t count = std::min(chunk, g.batch - first);
        const std::size_t ld = count * pixels;
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < count; ++i) im2col(g, x.data(), first + i, cols.data(), ld, i * pixels);

#pragma omp parallel for collapse(2) schedule(static)
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t o = 0; o < g.out_channels; ++o) {
                const float* src = dy.data() + ((first + i) * g.out_channels + o) * pixels;
                std::copy(src, src + pixels, grad.data() + o * ld + i * pixels);
            }
        }

        Eigen::Map<const RowMajorF> columns(cols.data(), patch, ld);
        Eigen::Map<const RowMajorF> dout(grad.data(), g.out_channels, ld);
        dweight.noalias() += dout * columns.transpose();

        if (!dx.empty()) {
            Eigen::Map<RowMajorF> dcolumns(dcols.data(), patch, ld);
            dcolumns.noalias() = weight.transpose() * dout;
#pragma omp parallel for schedule(static)
            for (std::size_t i = 0; i < count; ++i) col2im(g, dcols.data(), ld, i * pixels, dx.data(), first + i);
        }
    }
}

void linear_forward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                    std::span<const float> w, std::span<const float> b, std::span<float> y) {
    Eigen::Map<const RowMajorF> input(x.data(), n, in);
    Eigen::Map<const RowMajorF> weight(w.data(), out, in);
    Eigen::Map<RowMajorF> result(y.data(), n, out);
    result.noalias() = input * weight.transpose();
    if (!b.empty()) {
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < out; ++o) y[i * out + o] += b[o];
    }
}

void linear_backward(std::size_t n, std::size_t in, std::size_t out, std::span<const float> x,
                     std::span<const float> w, std::span<const float> dy, std::span<float> dx,
                     std::span<float> dw, std::span<float> db) {
    Eigen::Map<const RowMajorF> input(x.data(), n, in);
    Eigen::Map<const RowMajorF> weight(w.data(), out, in);
    Eigen::Map<const RowMajorF> dout(dy.data(), n, out);
    Eigen::Map<RowMajorF> dweight(dw.data(), out, in);
    dweight.noalias() += dout.transpose() * input;
    if (!db.empty()) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += dy[i * out + o];
            db[o] += static_cast<float>(acc);
        }
    }
    if (!dx.empty()) {
        Eigen::Map<RowMajorF> dinput(dx.data(), n, in);
        dinput.noalias() = dout * weight;
    }
}

void batchnorm_forward_train(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                             std::span<const float> gamma, std::span<const float> beta, float eps,
                             std::span<float> y, std::span<float> mean, std::span<float> inv_std) {
    const double count = static_cast<double>(n * hw);
#pragma omp parallel for schedule(static)
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const float* src = x.data() + (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) sum += src[p];
        }
        const double mu = sum / count;
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const float* src = x.data() + (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                const double d = src[p] - mu;
                sq += d * d;
            }
        }
        const double istd = 1.0 / std::sqrt(sq / count + eps);
        mean[ch] = static_cast<float>(mu);
        inv_std[ch] = static_cast<float>(istd);
        const float scale = static_cast<float>(gamma[ch] * istd);
        const float shift = static_cast<float>(beta[ch] - gamma[ch] * istd * mu);
        for (std::size_t i = 0; i < n; ++i) {
            const float* src = x.data() + (i * c + ch) * hw;
            float* dst = y.data() + (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] * scale + shift;
        }
    }
}

void batchnorm_forward_eval(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                            std::span<const float> gamma, std::span<const float> beta,
                            std::span<const float> running_mean, std::span<const float> running_var,
                            float eps, std::span<float> y) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float scale = gamma[ch] / std::sqrt(running_var[ch] + eps);
            const float shift = beta[ch] - scale * running_mean[ch];
            const float* src = x.data() + (i * c + ch) * hw;
            float* dst = y.data() + (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] * scale + shift;
        }
    }
}

void batchnorm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const float> x,
                        std::span<const float> gamma, std::span<const float> mean,
                        std::span<const float> inv_std, std::span<const float> dy, std::span<float> dx,
                        std::span<float> dgamma, std::span<float> dbeta) {
    const double count = static_cast<double>(n * hw);
#pragma omp parallel for schedule(static)
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = mean[ch], istd = inv_std[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const float* src = x.data() + (i * c + ch) * hw;
            const float* g = dy.data() + (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                sum_dy += g[p];
                sum_dy_xhat += g[p] * (src[p] - mu) * istd;
            }
        }
        dbeta[ch] += static_cast<float>(sum_dy);
        dgamma[ch] += static_cast<float>(sum_dy_xhat);
        const double k = gamma[ch] * istd / count;
        for (std::size_t i = 0; i < n; ++i) {
            const float* src = x.data() + (i * c + ch) * hw;
            const float* g = dy.data() + (i * c + ch) * hw;
            float* dst = dx.data() + (i * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                const double xhat = (src[p] - mu) * istd;
                dst[p] = static_cast<float>(k * (count * g[p] - sum_dy - xhat * sum_dy_xhat));
            }
        }
    }
}

void maxpool2x2_forward(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::span<const float> x,
                        std::span<float> y, std::span<std::uint32_t> argmax) {
    const std::size_t oh = h / 2, ow = w / 2;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t plane = (i * c + ch) * h * w;
            const std::size_t out_plane = (i * c + ch) * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    std::size_t best = plane + (2 * oy) * w + 2 * ox;
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = plane + (2 * oy + dy) * w + 2 * ox + dx;
                            if (x[idx] > x[best]) best = idx;
                        }
                    y[out_plane + oy * ow + ox] = x[best];
                    argmax[out_plane + oy * ow + ox] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
}

void maxpool2x2_backward(std::span<const float> dy, std::span<const std::uint32_t> argmax, std::span<float> dx) {
    std::fill(dx.begin(), dx.end(), 0.0f);
    // Windows do not overlap, so every input receives at most one gradient.
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] = dy[i];
}

void row_dot_products(std::size_t m, std::size_t n, std::size_t d, std::span<const double> a,
                      std::span<const double> b, std::span<double> s) {
    Eigen::Map<const RowMajorD> lhs(a.data(), m, d);
    Eigen::Map<const RowMajorD> rhs(b.data(), n, d);
    Eigen::Map<RowMajorD> out(s.data(), m, n);
    out.noalias() = lhs * rhs.transpose();
}

}  // namespace claf::kernels
