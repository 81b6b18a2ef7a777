#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muse/searchspace.hpp"

namespace muse {

enum class PathKind { linear, sequence };
enum class Topology { chain, dag };

const char* to_string(PathKind kind);
const char* to_string(Topology topology);
Topology parse_topology(const std::string& text);

// sum_o softmax(alpha)_o * o(inputs). Empty operator lists raise ConfigError.
ag::Tensor mixed_op(std::span<const ag::Tensor> inputs, const ag::Tensor& alpha, const std::vector<OperatorPtr>& ops);

// Index of the largest logit; ties go to the lowest index.
std::size_t argmax_index(std::span<const double> logits);
// Index of the smallest logit; ties go to the highest index, so that pruning
// to one operator agrees with argmax_index.
std::size_t argmin_index(std::span<const double> logits);

struct CellChainConfig {
    PathKind kind = PathKind::linear;
    std::size_t hidden = 8;
    std::size_t depth = 3;  // 1 fusion cell + depth - 1 transformation cells
    Topology topology = Topology::chain;
    std::vector<std::string> fusion_ops;     // empty: whole registry
    std::vector<std::string> transform_ops;  // empty: whole registry
    std::uint64_t seed = 0;
    std::string prefix = "linear";
};

// Edge (i, j) carries node i's output to node j. Node 0 is the input pair,
// node 1 the fusion cell, nodes 2..depth the transformation cells.
struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    std::vector<OperatorPtr> ops;
    ag::Tensor alpha;  // [|ops|] logits; undefined on discrete edges
    bool enabled = true;

    bool fusion() const { return from == 0; }
    std::string label() const;
    std::vector<std::string> op_names() const;
    // Softmax of alpha, or {1} on a discrete edge.
    std::vector<double> weights() const;
};

// Operator names per edge, in edge order.
using Architecture = std::vector<std::vector<std::string>>;

class CellChain {
public:
    // Mixed chain with every edge holding the configured operator space.
    static CellChain create(const CellChainConfig& config);
    // Chain with explicit per-edge operator lists. A discrete chain needs
    // exactly one operator per edge and holds no architecture weights.
    static CellChain create(const CellChainConfig& config, const Architecture& arch, bool discrete);

    CellChain(CellChain&&) = default;
    CellChain& operator=(CellChain&&) = default;

    const CellChainConfig& config() const { return config_; }
    PathKind kind() const { return config_.kind; }
    bool discrete() const { return discrete_; }
    const std::vector<Edge>& edges() const { return edges_; }
    Edge& edge(std::size_t from, std::size_t to);

    // Linear: [.. x D_h] pair -> [.. x D_h]. Sequence: [B x L_a x D_h] and
    // [B x L_b x D_h] -> mean over the fused sequence, [B x D_h].
    ag::Tensor forward(const ag::Tensor& a, const ag::Tensor& b) const;
    // Output of the last cell before any sequence pooling.
    ag::Tensor cell_output(const ag::Tensor& a, const ag::Tensor& b) const;

    void collect_weights(std::vector<NamedTensor>& out) const;
    void collect_arch(std::vector<NamedTensor>& out) const;

    Architecture architecture() const;
    // One line per edge: "edge(i,j): chosen [name=weight ...]".
    std::string genotype() const;

    // argmax operator per edge, keeping its trained parameters.
    CellChain discretize() const;
    // Drops the lowest-weight operator on every transformation edge; the
    // survivors keep their logits and parameters. The fusion edge is never
    // pruned. ContractError when an edge is down to one operator.
    CellChain prune_lowest() const;

private:
    CellChain() = default;
    CellChain derive(const Architecture& arch, bool discrete) const;

    CellChainConfig config_;
    bool discrete_ = false;
    std::vector<Edge> edges_;
};

}  // namespace muse
