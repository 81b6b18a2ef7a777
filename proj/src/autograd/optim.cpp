#include "muse/optim.hpp"

#include <cmath>

#include "muse/errors.hpp"

namespace muse {

Optimizer::Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.lr > 0.0)) throw ConfigError("optimizer learning rate must be > 0, got " + std::to_string(config_.lr));
    if (config_.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
    if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
}

void Optimizer::step(const std::vector<NamedTensor>& params) {
    for (const auto& p : params) {
        ag::Tensor t = p.tensor;
        if (!t.has_grad()) continue;
        auto w = t.mutable_values();
        auto g = t.grad();
        if (config_.method == OptimizerConfig::Method::sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] -= config_.lr * (g[i] + config_.weight_decay * w[i]);
            }
            continue;
        }
        auto& st = state_[p.name];
        if (st.m.size() != w.size()) {
            st.m.assign(w.size(), 0.0);
            st.v.assign(w.size(), 0.0);
            st.t = 0;
        }
        ++st.t;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(st.t));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(st.t));
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] + config_.weight_decay * w[i];
            st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * gi;
            st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * gi * gi;
            const double mhat = st.m[i] / c1;
            const double vhat = st.v[i] / c2;
            w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

void zero_grad(const std::vector<NamedTensor>& params) {
    for (const auto& p : params) {
        ag::Tensor t = p.tensor;
        t.zero_grad();
    }
}

}  // namespace muse
