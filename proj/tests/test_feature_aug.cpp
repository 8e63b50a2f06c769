#include "claf/feature_aug.hpp"
#include "claf/longtail_data.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace claf;

TEST_SUITE("feature_aug") {
    TEST_CASE("augmentation probability per class") {
        const auto counts = longtail_counts(500, 100, 10);
        const auto p = fa_probability(counts);
        CHECK(p[0] == 0.0);
        CHECK(p[9] == doctest::Approx(0.99).epsilon(1e-12));
        for (std::size_t k = 1; k < p.size(); ++k) CHECK(p[k] >= p[k - 1]);
        const std::vector<std::size_t> balanced(5, 40);
        for (double v : fa_probability(balanced)) CHECK(v == 0.0);
        const std::vector<std::size_t> with_zero{10, 0};
        CHECK_THROWS_AS(fa_probability(with_zero), std::invalid_argument);
    }

    TEST_CASE("lambda folding") {
        CHECK(fold_lambda(0.3, 0.8) == 0.8);
        CHECK(fold_lambda(0.95, 0.8) == 0.95);
        CHECK(fold_lambda(0.05, 0.8) == 0.95);
        CHECK(fold_lambda(0.3, 0.5) == 0.7);
        Rng rng(3);
        for (int i = 0; i < 10000; ++i) {
            const double l = sample_lambda(0.5, 0.8, rng);
            CHECK((l >= 0.8 && l <= 1.0));
        }
    }

    TEST_CASE("mixing examples") {
        const std::vector<float> a{0.3f, -1.7f, 2.5f}, b{9.0f, 9.0f, 9.0f};
        CHECK(mix_features(a, b, 1.0) == a);
        const auto m = mix_features(std::vector<float>{1, 0}, std::vector<float>{0, 1}, 0.8);
        CHECK(m[0] == doctest::Approx(0.8));
        CHECK(m[1] == doctest::Approx(0.2));
        CHECK_THROWS(mix_features(a, std::vector<float>{1}, 0.9));
    }

    TEST_CASE("config validation") {
        FAConfig c;
        CHECK_NOTHROW(c.validate());
        c.mu = 0.4;
        CHECK_THROWS(c.validate());
        c = FAConfig{};
        c.alpha = 0;
        CHECK_THROWS(c.validate());
        c = FAConfig{};
        c.start_fraction = 1.2;
        CHECK_THROWS(c.validate());
    }

    TEST_CASE("batch augmentation keeps labels, stays on the segment, never touches the head class") {
        Rng rng(11);
        const std::size_t k = 4, d = 6;
        const std::vector<double> probs{0.0, 0.5, 0.8, 1.0};
        std::vector<std::size_t> per_class(k, 0);
        for (int step = 0; step < 300; ++step) {
            MatrixF lab(8, d), unl(5, d);
            std::vector<int> labels(8);
            for (auto& v : lab.storage()) v = static_cast<float>(uniform01(rng) * 4 - 2);
            for (auto& v : unl.storage()) v = static_cast<float>(uniform01(rng) * 4 - 2);
            for (auto& y : labels) y = static_cast<int>(uniform_index(rng, k));
            const FABatchResult r = augment_batch(lab, labels, unl, probs, FAConfig{}, rng);
            CHECK_FALSE(r.skipped);
            std::vector<int> parents;
            for (const auto& f : r.features) {
                CHECK(f.label == labels[f.labeled_index]);
                CHECK(f.lam >= 0.8);
                CHECK(f.lam <= 1.0);
                ++per_class[static_cast<std::size_t>(f.label)];
                parents.push_back(static_cast<int>(f.labeled_index));
                for (std::size_t j = 0; j < d; ++j) {
                    const float a = lab(f.labeled_index, j), b = unl(f.unlabeled_index, j);
                    CHECK(f.z_aug[j] >= std::min(a, b) - 1e-6f);
                    CHECK(f.z_aug[j] <= std::max(a, b) + 1e-6f);
                }
            }
            std::sort(parents.begin(), parents.end());
            CHECK(std::adjacent_find(parents.begin(), parents.end()) == parents.end());
        }
        CHECK(per_class[0] == 0);
        CHECK(per_class[3] > 0);
    }

    TEST_CASE("empty unlabeled batch is skipped") {
        Rng rng(1);
        MatrixF lab(2, 3, 1.0f);
        const std::vector<int> labels{0, 1};
        const std::vector<double> probs{1.0, 1.0};
        const FABatchResult r = augment_batch(lab, labels, MatrixF{}, probs, FAConfig{}, rng);
        CHECK(r.skipped);
        CHECK(r.features.empty());
    }

    TEST_CASE("per-class frequency matches the probability") {
        Rng rng(21);
        const std::vector<double> probs{0.0, 0.25, 0.6, 0.9};
        std::vector<std::size_t> hits(4, 0), trials(4, 0);
        MatrixF lab(4, 2, 1.0f), unl(3, 2, 0.0f);
        const std::vector<int> labels{0, 1, 2, 3};
        for (int step = 0; step < 10000; ++step) {
            const auto r = augment_batch(lab, labels, unl, probs, FAConfig{}, rng);
            for (std::size_t c = 0; c < 4; ++c) ++trials[c];
            for (const auto& f : r.features) ++hits[static_cast<std::size_t>(f.label)];
        }
        for (std::size_t c = 0; c < 4; ++c) {
            const double rate = static_cast<double>(hits[c]) / static_cast<double>(trials[c]);
            CHECK(std::abs(rate - probs[c]) <= 0.02);
        }
        CHECK(hits[0] == 0);
    }
}
