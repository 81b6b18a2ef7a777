#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "muse/tensor.hpp"

namespace muse {

struct NamedTensor {
    std::string name;
    ag::Tensor tensor;
};

struct OptimizerConfig {
    enum class Method { sgd, adam };
    Method method = Method::adam;
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// In-place first-order updates. Adam moments are keyed by parameter name so
// they survive rebuilding the parameter list (e.g. after pruning).
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config);

    // Applies one update to every parameter that holds a gradient; parameters
    // without a gradient are left untouched.
    void step(const std::vector<NamedTensor>& params);

    const OptimizerConfig& config() const { return config_; }

private:
    struct Moments {
        std::vector<double> m, v;
        long long t = 0;
    };
    OptimizerConfig config_;
    std::unordered_map<std::string, Moments> state_;
};

void zero_grad(const std::vector<NamedTensor>& params);

}  // namespace muse
