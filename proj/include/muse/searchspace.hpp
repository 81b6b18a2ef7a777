#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "muse/layers.hpp"
#include "muse/tensor.hpp"

namespace muse {

// fusion: merges two [.. x D_h] vectors; seq_fusion: merges two [B x L x D_h]
// sequences along the sequence axis; the transforms take one input.
enum class OpKind { fusion, seq_fusion, linear_transform, seq_transform };

const char* to_string(OpKind kind);

struct OperatorSpec {
    std::string name;
    OpKind kind;
    std::vector<ag::Shape> param_shapes;
};

class Operator {
public:
    Operator(std::string name, OpKind kind) : name_(std::move(name)), kind_(kind) {}
    virtual ~Operator() = default;

    const std::string& name() const { return name_; }
    OpKind kind() const { return kind_; }
    std::size_t arity() const { return kind_ == OpKind::fusion || kind_ == OpKind::seq_fusion ? 2 : 1; }

    virtual ag::Tensor forward(std::span<const ag::Tensor> inputs) const = 0;
    virtual void collect(std::vector<NamedTensor>& /*out*/) const {}

    ag::Tensor operator()(const ag::Tensor& x) const { return forward(std::span<const ag::Tensor>(&x, 1)); }
    ag::Tensor operator()(const ag::Tensor& a, const ag::Tensor& b) const {
        const ag::Tensor in[2] = {a, b};
        return forward(in);
    }
    std::vector<NamedTensor> parameters() const;

private:
    std::string name_;
    OpKind kind_;
};

using OperatorPtr = std::unique_ptr<Operator>;

// Names in registry order; this order is the operator index used by
// architecture weights and tie-breaks.
const std::vector<std::string>& operator_names(OpKind kind);
bool has_operator(OpKind kind, const std::string& name);
std::vector<OperatorSpec> operator_specs(OpKind kind, std::size_t hidden);

// Parameters are named "<prefix>.<param>" and drawn from streams keyed by
// (seed, name). Unknown names raise ConfigError.
OperatorPtr make_operator(OpKind kind, const std::string& name, std::size_t hidden, std::uint64_t seed,
                          const std::string& prefix);

}  // namespace muse
