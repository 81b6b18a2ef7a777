#include "muse/cells.hpp"

#include <cstdio>
#include <sstream>

#include "muse/errors.hpp"

namespace muse {

using ag::Tensor;

const char* to_string(PathKind kind) { return kind == PathKind::linear ? "linear" : "sequence"; }
const char* to_string(Topology topology) { return topology == Topology::chain ? "chain" : "dag"; }

Topology parse_topology(const std::string& text) {
    if (text == "chain") return Topology::chain;
    if (text == "dag") return Topology::dag;
    throw ConfigError("topology must be chain or dag, got '" + text + "'");
}

Tensor mixed_op(std::span<const Tensor> inputs, const Tensor& alpha, const std::vector<OperatorPtr>& ops) {
    if (ops.empty()) throw ConfigError("mixed operator with an empty operator set");
    if (alpha.numel() != ops.size()) {
        throw DimensionError("mixed operator has " + std::to_string(ops.size()) + " operators but " +
                             std::to_string(alpha.numel()) + " logits");
    }
    std::vector<Tensor> outs;
    outs.reserve(ops.size());
    for (const auto& op : ops) outs.push_back(op->forward(inputs));
    return ag::weighted_sum(ag::softmax(alpha, 0), outs);
}

std::size_t argmax_index(std::span<const double> logits) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
    return best;
}

std::size_t argmin_index(std::span<const double> logits) {
    std::size_t worst = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] <= logits[worst]) worst = i;
    return worst;
}

std::string Edge::label() const { return "edge(" + std::to_string(from) + "," + std::to_string(to) + ")"; }

std::vector<std::string> Edge::op_names() const {
    std::vector<std::string> names;
    for (const auto& op : ops) names.push_back(op->name());
    return names;
}

std::vector<double> Edge::weights() const {
    if (!alpha.defined()) return std::vector<double>(ops.size(), 1.0);
    ag::NoGradGuard guard;
    auto w = ag::softmax(alpha, 0);
    return {w.values().begin(), w.values().end()};
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> edge_list(std::size_t depth, Topology topology) {
    std::vector<std::pair<std::size_t, std::size_t>> e{{0, 1}};
    for (std::size_t j = 2; j <= depth; ++j) {
        if (topology == Topology::chain) {
            e.emplace_back(j - 1, j);
        } else {
            for (std::size_t i = 1; i < j; ++i) e.emplace_back(i, j);
        }
    }
    return e;
}

OpKind fusion_kind(PathKind k) { return k == PathKind::linear ? OpKind::fusion : OpKind::seq_fusion; }
OpKind transform_kind(PathKind k) { return k == PathKind::linear ? OpKind::linear_transform : OpKind::seq_transform; }

}  // namespace

CellChain CellChain::create(const CellChainConfig& config) {
    auto fusion = config.fusion_ops.empty() ? operator_names(fusion_kind(config.kind)) : config.fusion_ops;
    auto transform = config.transform_ops.empty() ? operator_names(transform_kind(config.kind)) : config.transform_ops;
    Architecture arch;
    for (auto [from, to] : edge_list(config.depth, config.topology)) arch.push_back(from == 0 ? fusion : transform);
    return create(config, arch, false);
}

CellChain CellChain::create(const CellChainConfig& config, const Architecture& arch, bool discrete) {
    if (config.depth < 1) throw ConfigError("cell depth must be at least 1");
    if (config.hidden < 1) throw ConfigError("hidden width must be at least 1");
    const auto pairs = edge_list(config.depth, config.topology);
    if (arch.size() != pairs.size()) {
        throw ConfigError(std::string(to_string(config.kind)) + " architecture lists " + std::to_string(arch.size()) +
                          " edges, expected " + std::to_string(pairs.size()));
    }
    CellChain chain;
    chain.config_ = config;
    chain.discrete_ = discrete;
    for (std::size_t e = 0; e < pairs.size(); ++e) {
        Edge edge;
        edge.from = pairs[e].first;
        edge.to = pairs[e].second;
        if (arch[e].empty()) throw ConfigError(edge.label() + " has an empty operator set");
        if (discrete && arch[e].size() != 1) throw ContractError(edge.label() + " of a discrete chain needs one operator");
        const OpKind kind = edge.fusion() ? fusion_kind(config.kind) : transform_kind(config.kind);
        const std::string base = config.prefix + "." + edge.label();
        for (const auto& name : arch[e]) {
            for (const auto& seen : edge.ops)
                if (seen->name() == name) throw ConfigError(edge.label() + " lists operator " + name + " twice");
            edge.ops.push_back(make_operator(kind, name, config.hidden, config.seed, base + "." + name));
        }
        if (!discrete) edge.alpha = Tensor::zeros({arch[e].size()}, true);
        chain.edges_.push_back(std::move(edge));
    }
    return chain;
}

Edge& CellChain::edge(std::size_t from, std::size_t to) {
    for (auto& e : edges_)
        if (e.from == from && e.to == to) return e;
    throw ContractError("no edge(" + std::to_string(from) + "," + std::to_string(to) + ")");
}

Tensor CellChain::cell_output(const Tensor& a, const Tensor& b) const {
    const std::size_t n = config_.depth;
    std::vector<Tensor> nodes(n + 1);
    for (std::size_t j = 1; j <= n; ++j) {
        Tensor acc;
        for (const auto& e : edges_) {
            if (e.to != j || !e.enabled) continue;
            if (e.from != 0 && !nodes[e.from].defined()) continue;
            const Tensor pair[2] = {a, b};
            std::span<const Tensor> in = e.from == 0 ? std::span<const Tensor>(pair, 2)
                                                     : std::span<const Tensor>(&nodes[e.from], 1);
            Tensor out = discrete_ ? e.ops[0]->forward(in) : mixed_op(in, e.alpha, e.ops);
            acc = acc.defined() ? ag::add(acc, out) : out;
        }
        if (!acc.defined()) {
            throw ConfigError(std::string(to_string(config_.kind)) + " cell " + std::to_string(j) +
                              " is unreachable with the enabled edges");
        }
        nodes[j] = acc;
    }
    return nodes[n];
}

Tensor CellChain::forward(const Tensor& a, const Tensor& b) const {
    Tensor out = cell_output(a, b);
    if (config_.kind == PathKind::sequence) return ag::mean(out, out.rank() - 2);
    return out;
}

void CellChain::collect_weights(std::vector<NamedTensor>& out) const {
    for (const auto& e : edges_)
        for (const auto& op : e.ops) op->collect(out);
}

void CellChain::collect_arch(std::vector<NamedTensor>& out) const {
    for (const auto& e : edges_) {
        if (e.alpha.defined()) {
            out.push_back({config_.prefix + ".alpha(" + std::to_string(e.from) + "," + std::to_string(e.to) + ")", e.alpha});
        }
    }
}

Architecture CellChain::architecture() const {
    Architecture arch;
    for (const auto& e : edges_) arch.push_back(e.op_names());
    return arch;
}

std::string CellChain::genotype() const {
    std::ostringstream os;
    for (const auto& e : edges_) {
        const auto w = e.weights();
        const std::size_t best = e.alpha.defined() ? argmax_index(e.alpha.values()) : 0;
        os << e.label() << ": " << e.ops[best]->name() << " [";
        for (std::size_t o = 0; o < e.ops.size(); ++o) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.6f", w[o]);
            os << (o ? " " : "") << e.ops[o]->name() << "=" << buf;
        }
        os << "]\n";
    }
    return os.str();
}

CellChain CellChain::derive(const Architecture& arch, bool discrete) const {
    CellChain next = create(config_, arch, discrete);
    std::vector<NamedTensor> from, to;
    collect_weights(from);
    next.collect_weights(to);
    copy_parameters(from, to);
    for (std::size_t e = 0; e < edges_.size(); ++e) next.edges_[e].enabled = edges_[e].enabled;
    return next;
}

CellChain CellChain::discretize() const {
    if (discrete_) return derive(architecture(), true);
    Architecture arch;
    for (const auto& e : edges_) arch.push_back({e.ops[argmax_index(e.alpha.values())]->name()});
    return derive(arch, true);
}

CellChain CellChain::prune_lowest() const {
    if (discrete_) throw ContractError("cannot prune a discrete chain");
    Architecture arch = architecture();
    std::vector<std::vector<double>> logits;
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        const auto& edge = edges_[e];
        std::vector<double> a(edge.alpha.values().begin(), edge.alpha.values().end());
        if (!edge.fusion()) {
            if (edge.ops.size() < 2) throw ContractError(edge.label() + " is down to one operator");
            const std::size_t drop = argmin_index(a);
            arch[e].erase(arch[e].begin() + static_cast<std::ptrdiff_t>(drop));
            a.erase(a.begin() + static_cast<std::ptrdiff_t>(drop));
        }
        logits.push_back(std::move(a));
    }
    if (edges_.size() == 1) throw ContractError("chain has no transformation edges to prune");
    CellChain next = derive(arch, false);
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        std::copy(logits[e].begin(), logits[e].end(), next.edges_[e].alpha.mutable_values().begin());
    }
    return next;
}

}  // namespace muse
