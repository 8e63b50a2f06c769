#include "claf/optimizer.hpp"

#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace claf {

void OptimConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("optim.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optim.momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw std::invalid_argument("optim.weight_decay must be non-negative");
    if (nesterov && momentum == 0.0) throw std::invalid_argument("optim.nesterov requires momentum > 0");
}

double scheduled_lr(const OptimConfig& cfg, std::size_t iter, std::size_t total) {
    if (!cfg.cosine || total == 0) return cfg.lr;
    const double progress = static_cast<double>(iter) / static_cast<double>(total);
    return cfg.lr * std::cos(7.0 * std::numbers::pi * progress / 16.0);
}

Sgd::Sgd(std::vector<nn::ParamView> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.param->value.size(), 0.0f);
}

void Sgd::zero_grad() { nn::zero_grad(params_); }

void Sgd::step(double lr) {
    const auto m = static_cast<float>(cfg_.momentum);
    const auto lr_f = static_cast<float>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        nn::Param& p = *params_[i].param;
        const float wd = p.decay ? static_cast<float>(cfg_.weight_decay) : 0.0f;
        auto& v = velocity_[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            float g = p.grad[j] + wd * p.value[j];
            if (m != 0.0f) {
                v[j] = m * v[j] + g;
                g = cfg_.nesterov ? g + m * v[j] : v[j];
            }
            p.value[j] -= lr_f * g;
        }
    }
}

void Sgd::save(std::ostream& os) const {
    const auto n = static_cast<std::uint64_t>(velocity_.size());
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    for (const auto& v : velocity_) {
        const auto len = static_cast<std::uint64_t>(v.size());
        os.write(reinterpret_cast<const char*>(&len), sizeof len);
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
}

void Sgd::load(std::istream& is) {
    std::uint64_t n = 0;
    if (!is.read(reinterpret_cast<char*>(&n), sizeof n) || n != velocity_.size())
        throw std::runtime_error("Sgd::load: parameter count mismatch");
    for (auto& v : velocity_) {
        std::uint64_t len = 0;
        if (!is.read(reinterpret_cast<char*>(&len), sizeof len) || len != v.size())
            throw std::runtime_error("Sgd::load: parameter shape mismatch");
        if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float))))
            throw std::runtime_error("Sgd::load: truncated stream");
    }
}

}  // namespace claf
