#pragma once

#include "claf/rng.hpp"
#include "claf/tensor.hpp"

#include <array>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace claf {

/// Strong-view transforms. Each is drawn with a magnitude m ~ U[0, 1].
enum class AugOp {
    identity,
    autocontrast,
    brightness,
    color,
    contrast,
    equalize,
    posterize,
    rotate,
    sharpness,
    shear_x,
    shear_y,
    solarize,
    translate_x,
    translate_y,
};

inline constexpr std::array<AugOp, 14> kStrongOps = {
    AugOp::identity, AugOp::autocontrast, AugOp::brightness, AugOp::color,   AugOp::contrast,
    AugOp::equalize, AugOp::posterize,    AugOp::rotate,     AugOp::sharpness, AugOp::shear_x,
    AugOp::shear_y,  AugOp::solarize,     AugOp::translate_x, AugOp::translate_y,
};

std::string_view aug_op_name(AugOp op);
/// Every op only moves or recolours pixels; none of them reads or changes a label.
bool aug_op_preserves_label(AugOp op);

struct AugmentPolicy {
    std::size_t pad = 4;           // reflect padding before the random crop
    double flip_prob = 0.5;
    std::size_t num_ops = 2;       // transforms drawn per strong view
    double max_rotate_deg = 30.0;
    double max_shear = 0.3;
    double max_translate = 0.3;    // fraction of the side length
    double max_enhance = 0.9;      // enhancement factor in [1 - x, 1 + x]
    double cutout_fraction = 0.5;  // erased square side, at most this fraction of the side

    nlohmann::ordered_json to_json() const;
    static AugmentPolicy from_json(const nlohmann::json& j);
};

/// Both take and return a single CHW image with values in [0, 1]; the output shape equals the input shape.
Tensor weak_augment(const Tensor& image, Rng& rng, const AugmentPolicy& policy = {});
Tensor strong_augment(const Tensor& image, Rng& rng, const AugmentPolicy& policy = {},
                      std::vector<AugOp>* applied = nullptr);

/// Applies a single transform at magnitude m in [0, 1] (in place). Exposed for tests.
void apply_op(Tensor& image, AugOp op, double magnitude, Rng& rng, const AugmentPolicy& policy);

/// (x - mean[c]) / std[c] over a [N, C, H, W] or [C, H, W] tensor, in place.
void normalize_channels(Tensor& images, std::span<const float> mean, std::span<const float> stdev);

}  // namespace claf
