#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muse/optim.hpp"
#include "muse/tensor.hpp"

namespace muse {

// Every parameter draws from its own stream keyed by (seed, name), so adding
// or removing a component never shifts another component's initial values.
ag::Tensor init_uniform(std::uint64_t seed, const std::string& name, ag::Shape shape, double bound);

// Fully connected layer on the last axis.
struct Linear {
    std::string name;
    ag::Tensor weight;  // [in x out]
    ag::Tensor bias;    // [out], undefined for bias-free projections

    static Linear create(std::uint64_t seed, std::string name, std::size_t in, std::size_t out, bool with_bias = true);

    ag::Tensor operator()(const ag::Tensor& x) const { return ag::affine(x, weight, bias); }
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
    void collect(std::vector<NamedTensor>& out) const;
};

// Copies values from `from` into equally named tensors of `to`. Returns how
// many were copied; a shape disagreement raises DimensionError.
std::size_t copy_parameters(const std::vector<NamedTensor>& from, const std::vector<NamedTensor>& to);

}  // namespace muse
