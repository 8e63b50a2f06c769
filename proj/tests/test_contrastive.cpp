#include "claf/contrastive.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace claf;

namespace {

EmbeddingQueueView view_of(std::vector<MatrixD> e, std::vector<std::vector<double>> v) {
    EmbeddingQueueView q;
    q.embeddings = std::move(e);
    q.weights = std::move(v);
    return q;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace

TEST_SUITE("contrastive") {
    TEST_CASE("confidence vector is strict at tau") {
        CHECK(confidence_vector(MatrixD{{0.97, 0.03}}, 0.95) == std::vector<double>{0.97});
        CHECK(confidence_vector(MatrixD{{0.5, 0.5}}, 0.95) == std::vector<double>{0.0});
        CHECK(confidence_vector(MatrixD{{0.95, 0.05}}, 0.95) == std::vector<double>{0.0});
    }

    TEST_CASE("weight matrix") {
        const std::vector<double> s{0.97, 0.0}, v{0.85, 1.0};
        const MatrixD w = weight_matrix(s, v);
        CHECK(w(0, 0) == doctest::Approx(0.8245));
        CHECK(w(0, 1) == 0.97);
        CHECK(w(1, 0) == 0.0);
        CHECK(w(1, 1) == 0.0);
    }

    TEST_CASE("lone positive gives zero loss") {
        const auto q = view_of({MatrixD{{0.6, 0.8}}}, {{1.0}});
        const ContrastiveResult r = contrastive_loss({MatrixD{{0.6, 0.8}}, {0}, {1.0}, &q}, 0.07);
        CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-12));
    }

    TEST_CASE("symmetric two-class denominator gives ln 2") {
        const double h = std::sqrt(0.5);
        const auto q = view_of({MatrixD{{1, 0}}, MatrixD{{0, 1}}}, {{1.0}, {1.0}});
        const ContrastiveResult r = contrastive_loss({MatrixD{{h, h}}, {0}, {1.0}, &q}, 0.07);
        CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    TEST_CASE("agrees with the brute-force double sum") {
        Rng rng(101);
        for (int trial = 0; trial < 50; ++trial) {
            const auto inst = fixture::random_contrastive(rng, 1 + trial % 4, 1 + trial % 3, 5, 2 + trial % 7, trial % 5 == 0);
            const double t = 0.07 + 0.5 * uniform01(rng);
            const double got = contrastive_loss(inst.batch, t).loss;
            const double want = oracle::contrastive(inst.anchors, inst.batch.pseudo_class, inst.batch.s, inst.queues, inst.v, t);
            CHECK(rel_err(got, want) <= 1e-6);
            CHECK(got >= 0.0);
        }
    }

    TEST_CASE("zero-confidence batch gives exactly zero") {
        Rng rng(3);
        auto inst = fixture::random_contrastive(rng, 4, 3, 5, 6);
        std::fill(inst.batch.s.begin(), inst.batch.s.end(), 0.0);
        const ContrastiveResult r = contrastive_loss(inst.batch, 0.07, true);
        CHECK(r.loss == 0.0);
        for (double g : r.grad.storage()) CHECK(g == 0.0);
    }

    TEST_CASE("empty pseudo-class queue is skipped and counted") {
        const auto q = view_of({MatrixD(0, 2), MatrixD{{0, 1}, {1, 0}}}, {{}, {1.0, 1.0}});
        const ContrastiveResult r = contrastive_loss({MatrixD{{1, 0}, {1, 0}}, {0, 1}, {0.99, 0.99}, &q}, 0.07);
        CHECK(r.skipped == 1);
        CHECK(r.per_sample[0] == 0.0);
        CHECK(r.per_sample[1] > 0.0);
        const auto empty = view_of({MatrixD(0, 2), MatrixD(0, 2)}, {{}, {}});
        const ContrastiveResult none = contrastive_loss({MatrixD{{1, 0}, {0, 1}}, {1, 0}, {0.99, 0.0}, &empty}, 0.07);
        CHECK(none.loss == 0.0);
        CHECK(none.skipped == 1);
        CHECK_THROWS(contrastive_loss({MatrixD{{1, 0}}, {1}, {0.99}, &q}, 0.0));
    }

    TEST_CASE("gradient matches central differences") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            auto inst = fixture::random_contrastive(rng, 3, 3, 4, 5);
            const double t = 0.2 + uniform01(rng);
            const ContrastiveResult r = contrastive_loss(inst.batch, t, true);
            MatrixD& e = inst.batch.e_s;
            for (std::size_t i = 0; i < e.size(); ++i) {
                const double h = 1e-3, x = e.storage()[i];
                e.storage()[i] = x + h;
                const double up = contrastive_loss(inst.batch, t).loss;
                e.storage()[i] = x - h;
                const double dn = contrastive_loss(inst.batch, t).loss;
                e.storage()[i] = x;
                const double fd = (up - dn) / (2 * h);
                CHECK(std::abs(r.grad.storage()[i] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-2));
            }
        }
    }

    TEST_CASE("moving the anchor toward a positive does not increase its loss") {
        const auto q = view_of({MatrixD{{1, 0, 0}}, MatrixD{{0, 1, 0}, {0, 0, 1}}}, {{1.0}, {1.0, 1.0}});
        double prev = 1e9;
        for (double a = 0.0; a <= 1.0; a += 0.1) {
            const MatrixD e{{a, 1 - a, 0.3}};
            const double l = contrastive_loss({e, {0}, {0.99}, &q}, 0.1).per_sample[0];
            CHECK(l <= prev + 1e-12);
            prev = l;
        }
    }

    TEST_CASE("large temperature approaches mean weight times log of the queue size") {
        Rng rng(9);
        const auto inst = fixture::random_contrastive(rng, 4, 3, 5, 6);
        const ContrastiveResult r = contrastive_loss(inst.batch, 1e7);
        const double total = static_cast<double>(inst.view.total());
        for (std::size_t i = 0; i < 4; ++i) {
            const auto& v = inst.v[static_cast<std::size_t>(inst.batch.pseudo_class[i])];
            double mean_w = 0;
            for (double x : v) mean_w += inst.batch.s[i] * x;
            mean_w /= static_cast<double>(v.size());
            CHECK(r.per_sample[i] == doctest::Approx(mean_w * std::log(total)).epsilon(1e-6));
        }
    }
}
