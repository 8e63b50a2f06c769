#pragma once

#include "claf/layers.hpp"

#include <iosfwd>
#include <vector>

namespace claf {

struct OptimConfig {
    double lr = 0.03;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 5e-4;
    bool cosine = true;  // lr * cos(7 pi k / (16 K))

    void validate() const;
};

/// Learning rate at iteration k of total.
double scheduled_lr(const OptimConfig& cfg, std::size_t iter, std::size_t total);

/// SGD with (Nesterov) momentum and decoupled-from-bias weight decay, matching
/// the usual torch.optim.SGD update order.
class Sgd {
public:
    Sgd(std::vector<nn::ParamView> params, OptimConfig cfg);

    void step(double lr);
    void zero_grad();

    const OptimConfig& config() const noexcept { return cfg_; }
    const std::vector<nn::ParamView>& params() const noexcept { return params_; }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    std::vector<nn::ParamView> params_;
    std::vector<std::vector<float>> velocity_;
    OptimConfig cfg_;
};

}  // namespace claf
