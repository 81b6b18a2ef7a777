#include "muse/layers.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "muse/errors.hpp"
#include "muse/rng.hpp"

namespace muse {

ag::Tensor init_uniform(std::uint64_t seed, const std::string& name, ag::Shape shape, double bound) {
    Rng rng(seed, name);
    std::vector<double> v(ag::shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return ag::Tensor::from(std::move(shape), std::move(v), true);
}

Linear Linear::create(std::uint64_t seed, std::string name, std::size_t in, std::size_t out, bool with_bias) {
    Linear l;
    l.weight = init_uniform(seed, name + ".weight", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    if (with_bias) l.bias = ag::Tensor::zeros({out}, true);
    l.name = std::move(name);
    return l;
}

void Linear::collect(std::vector<NamedTensor>& out) const {
    out.push_back({name + ".weight", weight});
    if (bias.defined()) out.push_back({name + ".bias", bias});
}

std::size_t copy_parameters(const std::vector<NamedTensor>& from, const std::vector<NamedTensor>& to) {
    std::unordered_map<std::string, const ag::Tensor*> index;
    for (const auto& p : from) index[p.name] = &p.tensor;
    std::size_t copied = 0;
    for (const auto& p : to) {
        auto it = index.find(p.name);
        if (it == index.end()) continue;
        if (it->second->shape() != p.tensor.shape()) {
            throw DimensionError("parameter " + p.name + ": " + ag::shape_str(it->second->shape()) + " vs " +
                                 ag::shape_str(p.tensor.shape()));
        }
        auto src = it->second->values();
        ag::Tensor dst = p.tensor;
        std::copy(src.begin(), src.end(), dst.mutable_values().begin());
        ++copied;
    }
    return copied;
}

}  // namespace muse
