#include "claf/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace claf {
namespace {

struct Dims {
    std::size_t c, h, w;
};

Dims dims_of(const Tensor& t) {
    if (t.rank() != 3) throw std::invalid_argument("augment: expected a [C, H, W] image, got " + shape_to_string(t.shape()));
    return {t.dim(0), t.dim(1), t.dim(2)};
}

float& at(Tensor& t, const Dims& d, std::size_t c, std::size_t y, std::size_t x) { return t[(c * d.h + y) * d.w + x]; }
float at(const Tensor& t, const Dims& d, std::size_t c, std::size_t y, std::size_t x) { return t[(c * d.h + y) * d.w + x]; }

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    if (i < 0) i = -i;
    if (i >= m) i = 2 * m - 2 - i;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, m - 1));
}

void clamp01(Tensor& t) {
    for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
}

void blend(Tensor& img, const Tensor& degenerate, double factor) {
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<float>(degenerate[i] + factor * (img[i] - degenerate[i]));
    }
    clamp01(img);
}

Tensor grayscale_like(const Tensor& img, const Dims& d) {
    Tensor g(img.shape());
    for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x) {
            float l = 0.0f;
            if (d.c == 3) {
                l = 0.299f * at(img, d, 0, y, x) + 0.587f * at(img, d, 1, y, x) + 0.114f * at(img, d, 2, y, x);
            } else {
                for (std::size_t c = 0; c < d.c; ++c) l += at(img, d, c, y, x) / static_cast<float>(d.c);
            }
            for (std::size_t c = 0; c < d.c; ++c) at(g, d, c, y, x) = l;
        }
    return g;
}

// Inverse-maps every output pixel through the 2x3 affine matrix (output -> input,
// about the image centre) with bilinear sampling; outside pixels take fill.
void affine(Tensor& img, const Dims& d, const double m[6], float fill = 0.5f) {
    const Tensor src = img;
    const double cx = (static_cast<double>(d.w) - 1) / 2, cy = (static_cast<double>(d.h) - 1) / 2;
    for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x) {
            const double ox = x - cx, oy = y - cy;
            const double sx = m[0] * ox + m[1] * oy + m[2] + cx;
            const double sy = m[3] * ox + m[4] * oy + m[5] + cy;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double ax = sx - fx, ay = sy - fy;
            for (std::size_t c = 0; c < d.c; ++c) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const auto px = static_cast<std::ptrdiff_t>(fx) + dx, py = static_cast<std::ptrdiff_t>(fy) + dy;
                        const double wgt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
                        const bool inside = px >= 0 && py >= 0 && px < static_cast<std::ptrdiff_t>(d.w) &&
                                            py < static_cast<std::ptrdiff_t>(d.h);
                        acc += wgt * (inside ? at(src, d, c, static_cast<std::size_t>(py), static_cast<std::size_t>(px)) : fill);
                    }
                at(img, d, c, y, x) = static_cast<float>(acc);
            }
        }
}

double signed_magnitude(double m, Rng& rng) { return bernoulli(rng, 0.5) ? m : -m; }

}  // namespace

std::string_view aug_op_name(AugOp op) {
    switch (op) {
        case AugOp::identity: return "identity";
        case AugOp::autocontrast: return "autocontrast";
        case AugOp::brightness: return "brightness";
        case AugOp::color: return "color";
        case AugOp::contrast: return "contrast";
        case AugOp::equalize: return "equalize";
        case AugOp::posterize: return "posterize";
        case AugOp::rotate: return "rotate";
        case AugOp::sharpness: return "sharpness";
        case AugOp::shear_x: return "shear_x";
        case AugOp::shear_y: return "shear_y";
        case AugOp::solarize: return "solarize";
        case AugOp::translate_x: return "translate_x";
        case AugOp::translate_y: return "translate_y";
    }
    return "unknown";
}

bool aug_op_preserves_label(AugOp op) {
    return std::find(kStrongOps.begin(), kStrongOps.end(), op) != kStrongOps.end();
}

nlohmann::ordered_json AugmentPolicy::to_json() const {
    nlohmann::ordered_json ops = nlohmann::ordered_json::array();
    for (auto op : kStrongOps) ops.push_back(std::string(aug_op_name(op)));
    return {{"pad", pad},
            {"flip_prob", flip_prob},
            {"num_ops", num_ops},
            {"max_rotate_deg", max_rotate_deg},
            {"max_shear", max_shear},
            {"max_translate", max_translate},
            {"max_enhance", max_enhance},
            {"cutout_fraction", cutout_fraction},
            {"ops", ops}};
}

AugmentPolicy AugmentPolicy::from_json(const nlohmann::json& j) {
    AugmentPolicy p;
    p.pad = j.value("pad", p.pad);
    p.flip_prob = j.value("flip_prob", p.flip_prob);
    p.num_ops = j.value("num_ops", p.num_ops);
    p.max_rotate_deg = j.value("max_rotate_deg", p.max_rotate_deg);
    p.max_shear = j.value("max_shear", p.max_shear);
    p.max_translate = j.value("max_translate", p.max_translate);
    p.max_enhance = j.value("max_enhance", p.max_enhance);
    p.cutout_fraction = j.value("cutout_fraction", p.cutout_fraction);
    return p;
}

void apply_op(Tensor& img, AugOp op, double m, Rng& rng, const AugmentPolicy& policy) {
    const Dims d = dims_of(img);
    const double enhance = 1.0 + signed_magnitude(m * policy.max_enhance, rng);
    switch (op) {
        case AugOp::identity: break;
        case AugOp::autocontrast:
            for (std::size_t c = 0; c < d.c; ++c) {
                auto plane = img.values().subspan(c * d.h * d.w, d.h * d.w);
                const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
                const float l = *lo, h = *hi;
                if (h - l < 1e-6f) continue;
                for (auto& v : plane) v = (v - l) / (h - l);
            }
            break;
        case AugOp::brightness: {
            const Tensor black(img.shape(), 0.0f);
            blend(img, black, enhance);
            break;
        }
        case AugOp::color: blend(img, grayscale_like(img, d), enhance); break;
        case AugOp::contrast: {
            const Tensor gray = grayscale_like(img, d);
            double mean = 0.0;
            for (float v : gray.values()) mean += v;
            blend(img, Tensor(img.shape(), static_cast<float>(mean / gray.size())), enhance);
            break;
        }
        case AugOp::equalize:
            for (std::size_t c = 0; c < d.c; ++c) {
                auto plane = img.values().subspan(c * d.h * d.w, d.h * d.w);
                std::array<std::size_t, 256> hist{};
                for (float v : plane) ++hist[static_cast<std::size_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))];
                std::array<float, 256> lut{};
                std::size_t cum = 0;
                for (std::size_t b = 0; b < 256; ++b) {
                    cum += hist[b];
                    lut[b] = static_cast<float>(cum) / static_cast<float>(plane.size());
                }
                for (auto& v : plane) v = lut[static_cast<std::size_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))];
            }
            break;
        case AugOp::posterize: {
            const int bits = 8 - static_cast<int>(std::lround(m * 4.0));  // 4..8 bits kept
            const float levels = static_cast<float>(1 << bits);
            for (auto& v : img.values()) v = std::floor(v * (levels - 1.0f) + 0.5f) / (levels - 1.0f);
            break;
        }
        case AugOp::rotate: {
            const double a = signed_magnitude(m * policy.max_rotate_deg, rng) * std::numbers::pi / 180.0;
            const double mat[6] = {std::cos(a), std::sin(a), 0.0, -std::sin(a), std::cos(a), 0.0};
            affine(img, d, mat);
            break;
        }
        case AugOp::sharpness: {
            Tensor smooth = img;
            for (std::size_t c = 0; c < d.c; ++c)
                for (std::size_t y = 1; y + 1 < d.h; ++y)
                    for (std::size_t x = 1; x + 1 < d.w; ++x) {
                        float acc = 4.0f * at(img, d, c, y, x);
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) acc += at(img, d, c, y + dy, x + dx);
                        at(smooth, d, c, y, x) = acc / 13.0f;
                    }
            blend(img, smooth, enhance);
            break;
        }
        case AugOp::shear_x: {
            const double s = signed_magnitude(m * policy.max_shear, rng);
            const double mat[6] = {1.0, s, 0.0, 0.0, 1.0, 0.0};
            affine(img, d, mat);
            break;
        }
        case AugOp::shear_y: {
            const double s = signed_magnitude(m * policy.max_shear, rng);
            const double mat[6] = {1.0, 0.0, 0.0, s, 1.0, 0.0};
            affine(img, d, mat);
            break;
        }
        case AugOp::solarize: {
            const float threshold = static_cast<float>(1.0 - m);
            for (auto& v : img.values())
                if (v >= threshold) v = 1.0f - v;
            break;
        }
        case AugOp::translate_x: {
            const double t = signed_magnitude(m * policy.max_translate, rng) * static_cast<double>(d.w);
            const double mat[6] = {1.0, 0.0, t, 0.0, 1.0, 0.0};
            affine(img, d, mat);
            break;
        }
        case AugOp::translate_y: {
            const double t = signed_magnitude(m * policy.max_translate, rng) * static_cast<double>(d.h);
            const double mat[6] = {1.0, 0.0, 0.0, 0.0, 1.0, t};
            affine(img, d, mat);
            break;
        }
    }
}

Tensor weak_augment(const Tensor& image, Rng& rng, const AugmentPolicy& policy) {
    const Dims d = dims_of(image);
    const bool flip = bernoulli(rng, policy.flip_prob);
    const std::size_t span = 2 * policy.pad + 1;
    const auto ox = static_cast<std::ptrdiff_t>(uniform_index(rng, span)) - static_cast<std::ptrdiff_t>(policy.pad);
    const auto oy = static_cast<std::ptrdiff_t>(uniform_index(rng, span)) - static_cast<std::ptrdiff_t>(policy.pad);
    Tensor out(image.shape());
    for (std::size_t c = 0; c < d.c; ++c)
        for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t x = 0; x < d.w; ++x) {
                const std::size_t sx0 = flip ? d.w - 1 - x : x;
                const std::size_t sy = reflect(static_cast<std::ptrdiff_t>(y) + oy, d.h);
                const std::size_t sx = reflect(static_cast<std::ptrdiff_t>(sx0) + ox, d.w);
                at(out, d, c, y, x) = at(image, d, c, sy, sx);
            }
    return out;
}

Tensor strong_augment(const Tensor& image, Rng& rng, const AugmentPolicy& policy, std::vector<AugOp>* applied) {
    Tensor out = weak_augment(image, rng, policy);
    const Dims d = dims_of(out);
    for (std::size_t i = 0; i < policy.num_ops; ++i) {
        const AugOp op = kStrongOps[uniform_index(rng, kStrongOps.size())];
        const double magnitude = uniform01(rng);
        apply_op(out, op, magnitude, rng, policy);
        if (applied) applied->push_back(op);
    }
    clamp01(out);
    // Random erasing: one grey square of random side up to cutout_fraction.
    const auto side = static_cast<std::size_t>(
        std::lround(uniform01(rng) * policy.cutout_fraction * static_cast<double>(std::min(d.h, d.w))));
    if (side > 0) {
        const std::size_t cy = uniform_index(rng, d.h), cx = uniform_index(rng, d.w);
        const std::size_t y0 = cy > side / 2 ? cy - side / 2 : 0, x0 = cx > side / 2 ? cx - side / 2 : 0;
        for (std::size_t c = 0; c < d.c; ++c)
            for (std::size_t y = y0; y < std::min(d.h, y0 + side); ++y)
                for (std::size_t x = x0; x < std::min(d.w, x0 + side); ++x) at(out, d, c, y, x) = 0.5f;
    }
    return out;
}

void normalize_channels(Tensor& images, std::span<const float> mean, std::span<const float> stdev) {
    const std::size_t c = images.rank() == 4 ? images.dim(1) : images.dim(0);
    const std::size_t n = images.rank() == 4 ? images.dim(0) : 1;
    if (mean.size() != c || stdev.size() != c) throw std::invalid_argument("normalize_channels: mean/std size != channels");
    const std::size_t hw = images.size() / (n * c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            float* p = images.data() + (i * c + ch) * hw;
            for (std::size_t k = 0; k < hw; ++k) p[k] = (p[k] - mean[ch]) / stdev[ch];
        }
}

}  // namespace claf
