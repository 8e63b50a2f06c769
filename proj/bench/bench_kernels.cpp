// Times the OpenMP kernels against the serial reference loops on
// training-sized shapes and reports the speedup and max deviation.
//
//   claf_bench [--reps N]

#include "claf/kernels.hpp"
#include "claf/rng.hpp"

#include <CLI11.hpp>

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace claf;
namespace k = claf::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(uniform01(rng) * 2 - 1);
    return v;
}

double best_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm-up
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

// max |a - b| / max |a|: accumulated outputs such as dw grow with the batch.
template <typename T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
    double d = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d = std::max(d, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        scale = std::max(scale, std::abs(static_cast<double>(a[i])));
    }
    return scale > 0 ? d / scale : d;
}

void report(const std::string& name, double ref_ms, double fast_ms, double diff) {
    std::printf("%-28s %10.3f %10.3f %8.2fx %12.3e\n", name.c_str(), ref_ms, fast_ms, ref_ms / fast_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kernel benchmark: serial reference vs optimized"};
    int reps = 5;
    app.add_option("--reps", reps, "timed repetitions per kernel (best is reported)")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    Rng rng(42);
    std::printf("threads: %d\n", omp_get_max_threads());
    std::printf("%-28s %10s %10s %9s %12s\n", "kernel", "ref ms", "fast ms", "speedup", "rel diff");

    for (const auto& g : {k::ConvGeometry{32, 3, 32, 32, 16, 3, 1, 1}, k::ConvGeometry{32, 16, 32, 32, 32, 3, 1, 1},
                          k::ConvGeometry{64, 32, 16, 16, 64, 3, 2, 1}}) {
        const auto x = random_vec(g.input_size(), rng), w = random_vec(g.weight_size(), rng),
                   b = random_vec(g.out_channels, rng), dy = random_vec(g.output_size(), rng);
        std::vector<float> y_ref(g.output_size()), y_fast(g.output_size());
        const std::string tag = std::to_string(g.batch) + "x" + std::to_string(g.in_channels) + "x" + std::to_string(g.in_h) +
                                "->" + std::to_string(g.out_channels) + (g.stride > 1 ? "/s2" : "");
        const double r = best_ms(reps, [&] { k::reference::conv2d_forward(g, x, w, b, y_ref); });
        const double f = best_ms(reps, [&] { k::conv2d_forward(g, x, w, b, y_fast); });
        report("conv fwd " + tag, r, f, max_abs_diff(y_ref, y_fast));

        std::vector<float> dx_ref(g.input_size()), dx_fast(g.input_size()), dw_ref(g.weight_size()),
            dw_fast(g.weight_size()), db_ref(g.out_channels), db_fast(g.out_channels);
        const double rb = best_ms(reps, [&] {
            std::fill(dw_ref.begin(), dw_ref.end(), 0.0f);
            std::fill(db_ref.begin(), db_ref.end(), 0.0f);
            k::reference::conv2d_backward(g, x, w, dy, dx_ref, dw_ref, db_ref);
        });
        const double fb = best_ms(reps, [&] {
            std::fill(dw_fast.begin(), dw_fast.end(), 0.0f);
            std::fill(db_fast.begin(), db_fast.end(), 0.0f);
            k::conv2d_backward(g, x, w, dy, dx_fast, dw_fast, db_fast);
        });
        report("conv bwd " + tag, rb, fb, std::max(max_abs_diff(dx_ref, dx_fast), max_abs_diff(dw_ref, dw_fast)));
    }

    {
        const std::size_t n = 128, in = 512, out = 256;
        const auto x = random_vec(n * in, rng), w = random_vec(out * in, rng), b = random_vec(out, rng);
        std::vector<float> y_ref(n * out), y_fast(n * out);
        const double r = best_ms(reps, [&] { k::reference::linear_forward(n, in, out, x, w, b, y_ref); });
        const double f = best_ms(reps, [&] { k::linear_forward(n, in, out, x, w, b, y_fast); });
        report("linear fwd 128x512->256", r, f, max_abs_diff(y_ref, y_fast));
    }

    {
        const std::size_t n = 64, c = 32, hw = 256;
        const auto x = random_vec(n * c * hw, rng), gamma = random_vec(c, rng), beta = random_vec(c, rng);
        std::vector<float> y_ref(x.size()), y_fast(x.size()), m1(c), m2(c), s1(c), s2(c);
        const double r = best_ms(reps, [&] { k::reference::batchnorm_forward_train(n, c, hw, x, gamma, beta, 1e-5f, y_ref, m1, s1); });
        const double f = best_ms(reps, [&] { k::batchnorm_forward_train(n, c, hw, x, gamma, beta, 1e-5f, y_fast, m2, s2); });
        report("batchnorm fwd 64x32x16x16", r, f, max_abs_diff(y_ref, y_fast));
    }

    {
        const std::size_t m = 128, n = 4096, d = 64;
        std::vector<double> a(m * d), b(n * d), s_ref(m * n), s_fast(m * n);
        for (auto& v : a) v = uniform01(rng);
        for (auto& v : b) v = uniform01(rng);
        const double r = best_ms(reps, [&] { k::reference::row_dot_products(m, n, d, a, b, s_ref); });
        const double f = best_ms(reps, [&] { k::row_dot_products(m, n, d, a, b, s_fast); });
        report("row dots 128x4096x64", r, f, max_abs_diff(s_ref, s_fast));
    }
    return 0;
}
