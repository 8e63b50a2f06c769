#include "claf/pseudo_label.hpp"
#include "claf/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace claf;

namespace {

MatrixD random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    MatrixD m(r, c);
    for (auto& v : m.storage()) v = (uniform01(rng) * 2 - 1) * scale;
    return m;
}

Prototypes make_protos(MatrixD centers, std::vector<bool> defined) { return Prototypes{std::move(centers), std::move(defined)}; }

double row_sum(const MatrixD& m, std::size_t i) {
    double s = 0;
    for (double v : m.row(i)) s += v;
    return s;
}

}  // namespace

TEST_SUITE("pseudo_label") {
    TEST_CASE("linear pseudo-label examples") {
        const MatrixD u = linear_pseudo_label(MatrixD(1, 5, 0.0));
        for (double v : u.row(0)) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
        const MatrixD p = linear_pseudo_label(MatrixD{{std::log(3.0), 0.0}});
        CHECK(p(0, 0) == doctest::Approx(0.75).epsilon(1e-12));
        CHECK(p(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
    }

    TEST_CASE("semantic pseudo-label: aligned vs orthogonal prototype gives softmax([20, 0])") {
        const Prototypes c = make_protos(MatrixD{{1, 0}, {0, 1}}, {true, true});
        const MatrixD q = semantic_pseudo_label(MatrixD{{3, 0}}, c, 0.05);
        const double tail = 1.0 / (1.0 + std::exp(20.0));
        CHECK(q(0, 1) == doctest::Approx(tail).epsilon(1e-9));
        CHECK(q(0, 1) == doctest::Approx(2.06e-9).epsilon(0.01));
        CHECK(q(0, 0) == doctest::Approx(1.0 - tail).epsilon(1e-12));
    }

    TEST_CASE("identical prototypes give a uniform distribution") {
        const Prototypes c = make_protos(MatrixD{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}}, {true, true, true});
        Rng rng(1);
        const MatrixD q = semantic_pseudo_label(random_matrix(5, 3, rng), c, 0.05);
        for (double v : q.storage()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }

    TEST_CASE("undefined prototypes are masked; zero features count as warnings") {
        const Prototypes c = make_protos(MatrixD{{1, 0}, {0, 0}, {0, 1}}, {true, false, true});
        std::uint64_t zero = 0;
        const MatrixD q = semantic_pseudo_label(MatrixD{{1, 1}, {0, 0}}, c, 0.05, &zero);
        CHECK(q(0, 1) == 0.0);
        CHECK(q(1, 1) == 0.0);
        CHECK(q(1, 0) == doctest::Approx(0.5));
        CHECK(q(1, 2) == doctest::Approx(0.5));
        CHECK(zero == 1);
        const Prototypes none = make_protos(MatrixD(3, 2, 0.0), {false, false, false});
        const MatrixD u = semantic_pseudo_label(MatrixD{{1, 1}}, none, 0.05);
        for (double v : u.row(0)) CHECK(v == doctest::Approx(1.0 / 3));
        CHECK_THROWS_AS(semantic_pseudo_label(MatrixD{{1, 1}}, c, 0.0), std::invalid_argument);
    }

    TEST_CASE("semantic backward matches central finite differences") {
        Rng rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t b = 3, k = 4, d = 6;
            std::vector<bool> defined(k, true);
            defined[trial % k] = trial % 2 == 0;
            const Prototypes c = make_protos(random_matrix(k, d, rng), defined);
            MatrixD z = random_matrix(b, d, rng);
            const MatrixD probe = random_matrix(b, k, rng);
            const double t = 0.3;
            auto f = [&](const MatrixD& zz) {
                const MatrixD q = semantic_pseudo_label(zz, c, t);
                double s = 0;
                for (std::size_t i = 0; i < q.size(); ++i) s += probe.storage()[i] * q.storage()[i];
                return s;
            };
            const MatrixD q = semantic_pseudo_label(z, c, t);
            const MatrixD g = semantic_backward(z, c, t, q, probe);
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double h = 1e-5, x = z.storage()[i];
                z.storage()[i] = x + h;
                const double up = f(z);
                z.storage()[i] = x - h;
                const double dn = f(z);
                z.storage()[i] = x;
                CHECK(g.storage()[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6).scale(1e-3));
            }
        }
    }

    TEST_CASE("blend identity, replacement and fixed point") {
        Rng rng(2);
        const MatrixD p = linear_pseudo_label(random_matrix(6, 4, rng, 3));
        const MatrixD q = linear_pseudo_label(random_matrix(6, 4, rng, 3));
        const std::vector<double> zeros(4, 0.0), ones(4, 1.0);
        CHECK(blend(p, q, zeros) == p);
        const MatrixD r = blend(p, q, ones);
        for (std::size_t i = 0; i < r.size(); ++i) CHECK(r.storage()[i] == doctest::Approx(q.storage()[i]).epsilon(1e-12));
        const MatrixD half = blend(p, p, std::vector<double>(4, 0.37));
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(half.storage()[i] == doctest::Approx(p.storage()[i]).epsilon(1e-12));
        // Availability scales the class weight.
        const MatrixD none = blend(p, q, ones, 0.0);
        CHECK(none == p);
        const MatrixD mixed = blend(p, q, ones, 0.5);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            CHECK(row_sum(mixed, i) == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(mixed(i, 0) == doctest::Approx(0.5 * p(i, 0) + 0.5 * q(i, 0)).epsilon(1e-12));
        }
    }

    TEST_CASE("blend weights follow the confident-label histogram") {
        BlendWeights bw(3, 1e4);
        CHECK(bw.weights() == std::vector<double>{0, 0, 0});
        const MatrixD p{{0.98, 0.01, 0.01}, {0.98, 0.01, 0.01}, {0.01, 0.98, 0.01}, {0.4, 0.3, 0.3}};
        bw.observe(p, 0.95);
        const auto w = bw.weights();
        CHECK(w[0] == doctest::Approx(1.0));
        CHECK(w[1] == doctest::Approx(0.5).epsilon(1e-3));
        CHECK(w[2] == 0.0);
        CHECK_THROWS(BlendWeights(3, 0.5));
    }

    TEST_CASE("fixmatch loss examples") {
        const MatrixD unsure{{0.5, 0.5}};
        CHECK(fixmatch_loss(unsure, MatrixD{{0.1, 0.9}}, 0.95) == 0.0);
        const MatrixD sure{{0.97, 0.03}};
        CHECK(fixmatch_loss(sure, MatrixD{{0.5, 0.5}}, 0.95) == doctest::Approx(0.6931471805599453));
        CHECK(fixmatch_loss(sure, MatrixD{{1.0, 0.0}}, 0.95) == 0.0);
        // The mask is inclusive at tau.
        CHECK(fixmatch_loss(MatrixD{{0.95, 0.05}}, MatrixD{{0.5, 0.5}}, 0.95) > 0.0);
        // Averaging is over the whole batch, masked rows included.
        CHECK(fixmatch_loss(MatrixD{{0.97, 0.03}, {0.5, 0.5}}, MatrixD{{0.5, 0.5}, {0.5, 0.5}}, 0.95) ==
              doctest::Approx(0.6931471805599453 / 2));
    }

    TEST_CASE("fixmatch loss from logits agrees with the probability form and its gradient") {
        Rng rng(8);
        for (int trial = 0; trial < 10; ++trial) {
            MatrixD pp = linear_pseudo_label(random_matrix(5, 3, rng, 6));
            MatrixD logits = random_matrix(5, 3, rng, 2);
            const LossAndGrad lg = fixmatch_loss_logits(pp, logits, 0.7);
            CHECK(lg.loss == doctest::Approx(fixmatch_loss(pp, linear_pseudo_label(logits), 0.7)).epsilon(1e-12));
            for (std::size_t i = 0; i < logits.size(); ++i) {
                const double h = 1e-5, x = logits.storage()[i];
                logits.storage()[i] = x + h;
                const double up = fixmatch_loss_logits(pp, logits, 0.7).loss;
                logits.storage()[i] = x - h;
                const double dn = fixmatch_loss_logits(pp, logits, 0.7).loss;
                logits.storage()[i] = x;
                CHECK(lg.grad.storage()[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6).scale(1e-4));
            }
        }
    }

    TEST_CASE("fixmatch loss decreases as the strong view puts more mass on the pseudo-class") {
        const MatrixD pp{{0.99, 0.005, 0.005}};
        double prev = 1e9;
        for (double m = 0.1; m < 1.0; m += 0.1) {
            const double l = fixmatch_loss(pp, MatrixD{{m, (1 - m) / 2, (1 - m) / 2}}, 0.95);
            CHECK(l < prev);
            prev = l;
        }
    }

    TEST_CASE("alignment loss") {
        const MatrixD uniform(4, 5, 0.2);
        CHECK(align_loss(uniform) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
        // Uniform batch mean from non-uniform rows.
        const MatrixD mixed{{1, 0}, {0, 1}};
        CHECK(align_loss(mixed) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        // One-hot mean hits the clamp.
        const MatrixD onehot{{1, 0, 0}};
        CHECK(align_loss(onehot) == doctest::Approx(-2.0 / 3.0 * std::log(kProbEps)).epsilon(1e-9));
        Rng rng(3);
        for (int t = 0; t < 50; ++t) {
            const MatrixD q = linear_pseudo_label(random_matrix(4, 5, rng, 3));
            CHECK(align_loss(q) >= std::log(5.0) - 1e-12);
        }
        const std::vector<double> wrong(3, 0.5);
        CHECK_THROWS_AS(align_loss(uniform, wrong), std::invalid_argument);
    }

    TEST_CASE("alignment gradient matches finite differences") {
        Rng rng(4);
        MatrixD q = linear_pseudo_label(random_matrix(4, 3, rng, 2));
        const LossAndGrad lg = align_loss_grad(q);
        for (std::size_t i = 0; i < q.size(); ++i) {
            const double h = 1e-6, x = q.storage()[i];
            q.storage()[i] = x + h;
            const double up = align_loss(q);
            q.storage()[i] = x - h;
            const double dn = align_loss(q);
            q.storage()[i] = x;
            CHECK(lg.grad.storage()[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
        }
    }

    TEST_CASE("argmax rows") {
        CHECK(argmax_rows(MatrixD{{0.1, 0.7, 0.2}, {0.5, 0.2, 0.3}}) == std::vector<int>{1, 0});
    }
}
