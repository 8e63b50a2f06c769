#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's loss code.

#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double cosine(const Vec& a, const Vec& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

/// Literal double sum of the weighted contrastive objective:
/// (1/B) sum_i -(1/|E_p|) sum_p s_i v_p log( exp(sim_ip/t) / sum_k sum_j exp(sim_ij/t) ).
inline double contrastive(const std::vector<Vec>& anchors, const std::vector<int>& cls, const Vec& s,
                          const std::vector<std::vector<Vec>>& queues, const std::vector<Vec>& v, double t) {
    double total = 0.0;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (s[i] == 0.0) continue;
        const auto& pos = queues[static_cast<std::size_t>(cls[i])];
        if (pos.empty()) continue;
        double denom = 0.0;
        for (const auto& q : queues)
            for (const auto& e : q) denom += std::exp(cosine(anchors[i], e) / t);
        double li = 0.0;
        for (std::size_t p = 0; p < pos.size(); ++p) {
            const double ratio = std::exp(cosine(anchors[i], pos[p]) / t) / denom;
            li += s[i] * v[static_cast<std::size_t>(cls[i])][p] * std::log(ratio);
        }
        total += -li / static_cast<double>(pos.size());
    }
    return total / static_cast<double>(anchors.size());
}

/// CDF of max(X, 1 - X) for X ~ Beta(a, a): P(max <= x) = I_x(a,a) - I_{1-x}(a,a) = 2 I_x(a,a) - 1, x in [0.5, 1].
inline double folded_beta_cdf(double x, double a) {
    if (x <= 0.5) return 0.0;
    if (x >= 1.0) return 1.0;
    return 2.0 * boost::math::ibeta(a, a, x) - 1.0;
}

/// Two-sided one-sample KS statistic.
template <typename Cdf>
double ks_statistic(Vec sample, Cdf cdf) {
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double f = cdf(sample[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
inline double ks_pvalue(double d, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 ? 2.0 : -2.0) * term;
        if (term < 1e-16) break;
    }
    return std::clamp(sum, 0.0, 1.0);
}

inline double median(Vec v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace oracle
