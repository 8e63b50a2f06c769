#include "claf/kernels.hpp"
#include "claf/layers.hpp"
#include "claf/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace claf;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng, float scale = 1.0f) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>((uniform01(rng) * 2.0 - 1.0) * scale);
    return v;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
    REQUIRE(a.size() == b.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(static_cast<double>(a[i]) - b[i]));
        den = std::max(den, std::abs(static_cast<double>(b[i])));
    }
    CHECK(num <= tol * std::max(1.0, den));
}

// Sum of w * y, the scalar used by the layer gradient checks.
double probe(const Tensor& y, const std::vector<float>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * w[i];
    return s;
}

void gradient_check(nn::Layer& layer, Tensor x, Rng& rng, double tol) {
    const Tensor y = layer.forward(x, nn::Pass::train);
    const auto w = random_vec(y.size(), rng);
    std::vector<nn::ParamView> params;
    layer.collect_params("", params);
    nn::zero_grad(params);
    const Tensor dx = layer.backward(Tensor(y.shape(), w));

    const double h = 1e-2;
    auto numeric = [&](float& slot) {
        const float saved = slot;
        slot = saved + static_cast<float>(h);
        const double up = probe(layer.forward(x, nn::Pass::train_no_grad), w);
        slot = saved - static_cast<float>(h);
        const double down = probe(layer.forward(x, nn::Pass::train_no_grad), w);
        slot = saved;
        return (up - down) / (2 * h);
    };
    for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 17)) {
        const double g = numeric(x[i]);
        CHECK(std::abs(g - dx[i]) <= tol * std::max(1.0, std::abs(g)));
    }
    for (auto& p : params)
        for (std::size_t i = 0; i < p.param->value.size(); i += std::max<std::size_t>(1, p.param->value.size() / 7)) {
            const double g = numeric(p.param->value[i]);
            CHECK(std::abs(g - p.param->grad[i]) <= tol * std::max(1.0, std::abs(g)));
        }
}

}  // namespace

TEST_SUITE("kernels") {
    TEST_CASE("conv2d matches the direct reference, forward and backward") {
        Rng rng(7);
        for (const auto& [n, c, h, w, o, stride] :
             std::vector<std::tuple<int, int, int, int, int, int>>{{2, 3, 8, 8, 4, 1}, {3, 2, 7, 5, 3, 2}, {1, 5, 4, 4, 6, 1}}) {
            kernels::ConvGeometry g;
            g.batch = n;
            g.in_channels = c;
            g.in_h = h;
            g.in_w = w;
            g.out_channels = o;
            g.stride = stride;
            const auto x = random_vec(g.batch * g.in_channels * g.in_h * g.in_w, rng);
            const auto wt = random_vec(g.out_channels * g.patch(), rng);
            const auto b = random_vec(g.out_channels, rng);
            std::vector<float> y1(g.batch * g.out_channels * g.out_h() * g.out_w()), y2(y1.size());
            kernels::conv2d_forward(g, x, wt, b, y1);
            kernels::reference::conv2d_forward(g, x, wt, b, y2);
            check_close(y1, y2, 1e-5);

            const auto dy = random_vec(y1.size(), rng);
            std::vector<float> dx1(x.size()), dx2(x.size()), dw1(wt.size()), dw2(wt.size()), db1(b.size()), db2(b.size());
            kernels::conv2d_backward(g, x, wt, dy, dx1, dw1, db1);
            kernels::reference::conv2d_backward(g, x, wt, dy, dx2, dw2, db2);
            check_close(dx1, dx2, 1e-5);
            check_close(dw1, dw2, 1e-5);
            check_close(db1, db2, 1e-5);
        }
    }

    TEST_CASE("linear, batchnorm, maxpool and row dots match the references") {
        Rng rng(11);
        const std::size_t n = 6, in = 9, out = 5;
        const auto x = random_vec(n * in, rng), w = random_vec(out * in, rng), b = random_vec(out, rng);
        std::vector<float> y1(n * out), y2(n * out);
        kernels::linear_forward(n, in, out, x, w, b, y1);
        kernels::reference::linear_forward(n, in, out, x, w, b, y2);
        check_close(y1, y2, 1e-6);
        const auto dy = random_vec(n * out, rng);
        std::vector<float> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(out), db2(out);
        kernels::linear_backward(n, in, out, x, w, dy, dx1, dw1, db1);
        kernels::reference::linear_backward(n, in, out, x, w, dy, dx2, dw2, db2);
        check_close(dx1, dx2, 1e-5);
        check_close(dw1, dw2, 1e-5);
        check_close(db1, db2, 1e-5);

        const std::size_t bn = 4, ch = 3, hw = 10;
        const auto bx = random_vec(bn * ch * hw, rng, 3.0f), gamma = random_vec(ch, rng), beta = random_vec(ch, rng);
        std::vector<float> by1(bx.size()), by2(bx.size()), m1(ch), m2(ch), s1(ch), s2(ch);
        kernels::batchnorm_forward_train(bn, ch, hw, bx, gamma, beta, 1e-5f, by1, m1, s1);
        kernels::reference::batchnorm_forward_train(bn, ch, hw, bx, gamma, beta, 1e-5f, by2, m2, s2);
        check_close(by1, by2, 1e-5);
        const auto bdy = random_vec(bx.size(), rng);
        std::vector<float> bdx1(bx.size()), bdx2(bx.size()), dg1(ch), dg2(ch), dbt1(ch), dbt2(ch);
        kernels::batchnorm_backward(bn, ch, hw, bx, gamma, m1, s1, bdy, bdx1, dg1, dbt1);
        kernels::reference::batchnorm_backward(bn, ch, hw, bx, gamma, m2, s2, bdy, bdx2, dg2, dbt2);
        check_close(bdx1, bdx2, 1e-4);
        check_close(dg1, dg2, 1e-5);
        check_close(dbt1, dbt2, 1e-5);

        const auto px = random_vec(2 * 3 * 6 * 6, rng);
        std::vector<float> py1(2 * 3 * 9), py2(py1.size());
        std::vector<std::uint32_t> a1(py1.size()), a2(py1.size());
        kernels::maxpool2x2_forward(2, 3, 6, 6, px, py1, a1);
        kernels::reference::maxpool2x2_forward(2, 3, 6, 6, px, py2, a2);
        CHECK(py1 == py2);
        CHECK(a1 == a2);

        std::vector<double> ra(4 * 8), rb(7 * 8);
        for (auto& v : ra) v = uniform01(rng) - 0.5;
        for (auto& v : rb) v = uniform01(rng) - 0.5;
        std::vector<double> s1d(4 * 7), s2d(4 * 7);
        kernels::row_dot_products(4, 7, 8, ra, rb, s1d);
        kernels::reference::row_dot_products(4, 7, 8, ra, rb, s2d);
        for (std::size_t i = 0; i < s1d.size(); ++i) CHECK(s1d[i] == doctest::Approx(s2d[i]).epsilon(1e-12));
    }

    TEST_CASE("optimized kernels are run-to-run deterministic") {
        Rng rng(3);
        kernels::ConvGeometry g;
        g.batch = 5;
        g.in_channels = 4;
        g.in_h = g.in_w = 12;
        g.out_channels = 8;
        const auto x = random_vec(g.batch * 4 * 144, rng), w = random_vec(8 * g.patch(), rng), b = random_vec(8, rng);
        std::vector<float> y1(g.batch * 8 * 144), y2(y1.size());
        kernels::conv2d_forward(g, x, w, b, y1);
        kernels::conv2d_forward(g, x, w, b, y2);
        CHECK(y1 == y2);
    }

    TEST_CASE("layer backward passes agree with finite differences") {
        Rng rng(5);
        Tensor img({2, 3, 6, 6}, random_vec(2 * 3 * 36, rng));
        SUBCASE("conv2d") {
            nn::Conv2d conv(3, 4, 3, 1, 1, true, rng);
            gradient_check(conv, img, rng, 2e-2);
        }
        SUBCASE("strided conv2d") {
            nn::Conv2d conv(3, 2, 3, 2, 1, false, rng);
            gradient_check(conv, img, rng, 2e-2);
        }
        SUBCASE("batchnorm") {
            nn::BatchNorm bn(3);
            gradient_check(bn, img, rng, 3e-2);
        }
        SUBCASE("linear") {
            nn::Linear lin(7, 3, true, rng);
            gradient_check(lin, Tensor({4, 7}, random_vec(28, rng)), rng, 2e-2);
        }
        SUBCASE("wide block with projection shortcut") {
            nn::WideBlock block(3, 4, 2, 0.1f, 0.01f, rng);
            gradient_check(block, img, rng, 5e-2);
        }
        SUBCASE("pooling and activation") {
            nn::Sequential seq;
            seq.emplace<nn::LeakyRelu>(0.1f);
            seq.emplace<nn::MaxPool2x2>();
            seq.emplace<nn::GlobalAvgPool>();
            gradient_check(seq, img, rng, 2e-2);
        }
    }

    TEST_CASE("backward without a cached training forward is an error") {
        Rng rng(1);
        nn::Linear lin(3, 2, true, rng);
        lin.forward(Tensor({1, 3}), nn::Pass::eval);
        CHECK_THROWS_AS(lin.backward(Tensor({1, 2})), std::logic_error);
    }
}
