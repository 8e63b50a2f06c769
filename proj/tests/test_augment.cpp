#include "claf/augment.hpp"
#include "claf/data_loader.hpp"
#include "claf/longtail_data.hpp"

#include <doctest.h>

#include <algorithm>

using namespace claf;

namespace {

Tensor sample_image(std::uint64_t seed) {
    Rng rng(seed);
    Tensor img({3, 16, 16});
    for (auto& v : img.storage()) v = static_cast<float>(uniform01(rng));
    return img;
}

}  // namespace

TEST_SUITE("augment") {
    TEST_CASE("same RNG state gives the same view; shape is preserved") {
        const Tensor img = sample_image(1);
        Rng a(5), b(5);
        const Tensor wa = weak_augment(img, a), wb = weak_augment(img, b);
        CHECK(wa.storage() == wb.storage());
        CHECK(wa.shape() == img.shape());
        const Tensor sa = strong_augment(img, a), sb = strong_augment(img, b);
        CHECK(sa.storage() == sb.storage());
        CHECK(sa.shape() == img.shape());
        for (float v : sa.storage()) CHECK((v >= 0.0f && v <= 1.0f));
    }

    TEST_CASE("the policy contains only label-preserving transforms") {
        for (AugOp op : kStrongOps) {
            CAPTURE(aug_op_name(op));
            CHECK(aug_op_preserves_label(op));
        }
    }

    TEST_CASE("strong policy draws num_ops transforms per call") {
        const Tensor img = sample_image(2);
        Rng rng(9);
        for (int i = 0; i < 50; ++i) {
            std::vector<AugOp> trace;
            strong_augment(img, rng, AugmentPolicy{}, &trace);
            CHECK(trace.size() == 2);
        }
        AugmentPolicy p;
        p.num_ops = 3;
        std::vector<AugOp> trace;
        strong_augment(img, rng, p, &trace);
        CHECK(trace.size() == 3);
        CHECK(AugmentPolicy{}.to_json()["ops"].size() == kStrongOps.size());
    }

    TEST_CASE("every op keeps values in range at full magnitude") {
        const Tensor img = sample_image(3);
        Rng rng(4);
        for (AugOp op : kStrongOps) {
            Tensor t = img;
            apply_op(t, op, 1.0, rng, AugmentPolicy{});
            CHECK(t.shape() == img.shape());
            for (float v : t.storage()) CHECK((v >= 0.0f && v <= 1.0f));
        }
    }

    TEST_CASE("loader batches depend only on (seed, step), with or without prefetch") {
        const auto src = make_synthetic_dataset({3, 40, 16, 0.2, 5});
        SplitSpec spec;
        spec.num_classes = 3;
        spec.head_labeled = 10;
        spec.head_unlabeled = 20;
        spec.gamma = 2;
        const SplitManifest m = build_splits(*src, spec);
        TrainLoader a(*src, m, 4, 6, AugmentPolicy{}, 77), b(*src, m, 4, 6, AugmentPolicy{}, 77);
        b.set_prefetch(true);
        std::string mid_state;
        for (int i = 0; i < 12; ++i) {
            const TrainBatch x = a.next(), y = b.next();
            CHECK(x.labels == y.labels);
            CHECK(x.labeled.storage() == y.labeled.storage());
            CHECK(x.strong.storage() == y.strong.storage());
            CHECK(a.serialize() == b.serialize());
            if (i == 5) mid_state = a.serialize();
        }
        // Restoring a sampler state replays the same batches.
        TrainLoader c(*src, m, 4, 6, AugmentPolicy{}, 77), d(*src, m, 4, 6, AugmentPolicy{}, 77);
        for (int i = 0; i < 6; ++i) c.next();
        d.deserialize(mid_state);
        for (int i = 0; i < 4; ++i) CHECK(c.next().weak.storage() == d.next().weak.storage());
    }

    TEST_CASE("epoch shuffling visits every labeled sample once per epoch") {
        IndexSampler s(10, 3);
        std::vector<std::size_t> seen = s.next(10);
        std::sort(seen.begin(), seen.end());
        for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == i);
        CHECK(s.epoch() == 0);
        s.next(1);
        CHECK(s.epoch() == 1);
    }
}
