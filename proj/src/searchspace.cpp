#include "muse/searchspace.hpp"

#include <cmath>
#include <map>

#include "muse/errors.hpp"

namespace muse {

using ag::Tensor;

const char* to_string(OpKind kind) {
    switch (kind) {
        case OpKind::fusion: return "fusion";
        case OpKind::seq_fusion: return "seq_fusion";
        case OpKind::linear_transform: return "linear_transform";
        case OpKind::seq_transform: return "seq_transform";
    }
    return "?";
}

std::vector<NamedTensor> Operator::parameters() const {
    std::vector<NamedTensor> out;
    collect(out);
    return out;
}

namespace {

void check_arity(const Operator& op, std::span<const Tensor> in) {
    if (in.size() != op.arity()) {
        throw ContractError(op.name() + " expects " + std::to_string(op.arity()) + " input(s), got " +
                            std::to_string(in.size()));
    }
}

void check_pair(const Operator& op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(op.name() + " fusion: " + ag::shape_str(a.shape()) + " vs " + ag::shape_str(b.shape()));
    }
}

// Sum, Max, Average.
class PointwiseFusion final : public Operator {
public:
    PointwiseFusion(std::string name, Tensor (*fn)(const Tensor&, const Tensor&))
        : Operator(std::move(name), OpKind::fusion), fn_(fn) {}
    Tensor forward(std::span<const Tensor> in) const override {
        check_arity(*this, in);
        check_pair(*this, in[0], in[1]);
        return fn_(in[0], in[1]);
    }

private:
    Tensor (*fn_)(const Tensor&, const Tensor&);
};

Tensor average(const Tensor& a, const Tensor& b) { return ag::scale(ag::add(a, b), 0.5); }

class ConcatFusion final : public Operator {
public:
    ConcatFusion(std::size_t hidden, std::uint64_t seed, const std::string& prefix)
        : Operator("Concat", OpKind::fusion), fc_(Linear::create(seed, prefix + ".fc", 2 * hidden, hidden)) {}
    Tensor forward(std::span<const Tensor> in) const override {
        check_arity(*this, in);
        check_pair(*this, in[0], in[1]);
        return fc_(ag::concat({in[0], in[1]}, in[0].rank() - 1));
    }
    void collect(std::vector<NamedTensor>& out) const override { fc_.collect(out); }

private:
    Linear fc_;
};

class SequenceConcat final : public Operator {
public:
    SequenceConcat() : Operator("Concat", OpKind::seq_fusion) {}
    Tensor forward(std::span<const Tensor> in) const override {
        check_arity(*this, in);
        const auto& a = in[0];
        const auto& b = in[1];
        if (a.rank() < 2 || a.rank() != b.rank() || a.shape().back() != b.shape().back()) {
            throw DimensionError("sequence Concat: " + ag::shape_str(a.shape()) + " vs " + ag::shape_str(b.shape()));
        }
        return ag::concat({a, b}, a.rank() - 2);
    }
};

class Activation final : public Operator {
public:
    Activation(std::string name, Tensor (*fn)(const Tensor&)) : Operator(std::move(name), OpKind::linear_transform), fn_(fn) {}
    Tensor forward(std::span<const Tensor> in) const override {
        check_arity(*this, in);
        return fn_(in[0]);
    }

private:
    Tensor (*fn_)(const Tensor&);
};

class Skip final : public Operator {
public:
    explicit Skip(OpKind kind) : Operator("Skip", kind) {}
    Tensor forward(std::span<const Tensor> in) const override {
        check_arity(*this, in);
        return in[0];
    }
};

class Mlp final : public Operator {
public:
    Mlp(std::size_t hidden, std::uint64_t seed, const std::string& prefix)
        : Operator("MLP", OpKind::linear_transform),
          fc1_(Linear::create(seed, prefix + ".fc1", hidden, hidden)),
          fc2_(Linear::create(seed, prefix + ".fc2", hidden, hidden)) {}
    Tensor forward(std::span<const Tensor> in) const override {
        check_arity(*this, in);
        return fc2_(ag::sigmoid(fc1_(in[0])));
    }
    void collect(std::vector<NamedTensor>& out) const override {
        fc1_.collect(out);
        fc2_.collect(out);
    }

private:
    Linear fc1_, fc2_;
};

// Sequence ops work on [B x L x D]; a lone [L x D] sequence is lifted to a
// batch of one.
class SequenceOp : public Operator {
public:
    using Operator::Operator;
    Tensor forward(std::span<const Tensor> in) const final {
        check_arity(*this, in);
        const Tensor& x = in[0];
        if (x.rank() == 2) {
            auto y = run(ag::reshape(x, {1, x.dim(0), x.dim(1)}));
            return ag::reshape(y, x.shape());
        }
        if (x.rank() != 3) throw DimensionError(name() + " expects [B x L x D], got " + ag::shape_str(x.shape()));
        return run(x);
    }

protected:
    virtual Tensor run(const Tensor& x) const = 0;
};

// Gate layout follows the common (PyTorch) convention: input-to-hidden and
// hidden-to-hidden matrices with G stacked gate blocks of width D.
struct RecurrentWeights {
    Tensor w_ih, w_hh, b_ih, b_hh;

    RecurrentWeights(std::size_t hidden, std::size_t gates, std::uint64_t seed, const std::string& prefix) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
        w_ih = init_uniform(seed, prefix + ".weight_ih", {hidden, gates * hidden}, bound);
        w_hh = init_uniform(seed, prefix + ".weight_hh", {hidden, gates * hidden}, bound);
        b_ih = init_uniform(seed, prefix + ".bias_ih", {gates * hidden}, bound);
        b_hh = init_uniform(seed, prefix + ".bias_hh", {gates * hidden}, bound);
    }
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
        out.push_back({prefix + ".weight_ih", w_ih});
        out.push_back({prefix + ".weight_hh", w_hh});
        out.push_back({prefix + ".bias_ih", b_ih});
        out.push_back({prefix + ".bias_hh", b_hh});
    }
};

class Recurrent final : public SequenceOp {
public:
    enum class Cell { rnn, lstm, gru };

    Recurrent(Cell cell, std::size_t hidden, std::uint64_t seed, std::string prefix)
        : SequenceOp(cell == Cell::rnn ? "RNN" : cell == Cell::lstm ? "LSTM" : "GRU", OpKind::seq_transform),
          cell_(cell),
          hidden_(hidden),
          prefix_(std::move(prefix)),
          w_(hidden, cell == Cell::rnn ? 1 : cell == Cell::lstm ? 4 : 3, seed, prefix_) {}

    void collect(std::vector<NamedTensor>& out) const override { w_.collect(prefix_, out); }

protected:
    Tensor run(const Tensor& x) const override {
        const std::size_t batch = x.dim(0), len = x.dim(1), d = hidden_;
        if (x.dim(2) != d) throw DimensionError(name() + " expects width " + std::to_string(d));
        Tensor h = Tensor::zeros({batch, d});
        Tensor c = Tensor::zeros({batch, d});
        std::vector<Tensor> outputs;
        outputs.reserve(len);
        for (std::size_t t = 0; t < len; ++t) {
            Tensor xi = ag::affine(ag::select(x, 1, t), w_.w_ih, w_.b_ih);
            Tensor hh = ag::affine(h, w_.w_hh, w_.b_hh);
            auto gate = [d](const Tensor& g, std::size_t k) { return ag::narrow(g, 1, k * d, d); };
            switch (cell_) {
                case Cell::rnn:
                    h = ag::tanh(ag::add(xi, hh));
                    break;
                case Cell::lstm: {
                    Tensor g = ag::add(xi, hh);
                    Tensor i = ag::sigmoid(gate(g, 0));
                    Tensor f = ag::sigmoid(gate(g, 1));
                    Tensor cand = ag::tanh(gate(g, 2));
                    Tensor o = ag::sigmoid(gate(g, 3));
                    c = ag::add(ag::mul(f, c), ag::mul(i, cand));
                    h = ag::mul(o, ag::tanh(c));
                    break;
                }
                case Cell::gru: {
                    Tensor r = ag::sigmoid(ag::add(gate(xi, 0), gate(hh, 0)));
                    Tensor z = ag::sigmoid(ag::add(gate(xi, 1), gate(hh, 1)));
                    Tensor n = ag::tanh(ag::add(gate(xi, 2), ag::mul(r, gate(hh, 2))));
                    // (1 - z) * n + z * h
                    h = ag::add(n, ag::mul(z, ag::sub(h, n)));
                    break;
                }
            }
            outputs.push_back(h);
        }
        return ag::stack(outputs, 1);
    }

private:
    Cell cell_;
    std::size_t hidden_;
    std::string prefix_;
    RecurrentWeights w_;
};

struct LayerNormParams {
    std::string name;
    Tensor gain, bias;

    LayerNormParams(std::string n, std::size_t d)
        : name(std::move(n)), gain(Tensor::full({d}, 1.0, true)), bias(Tensor::zeros({d}, true)) {}
    Tensor operator()(const Tensor& x) const { return ag::layer_norm(x, gain, bias); }
    void collect(std::vector<NamedTensor>& out) const {
        out.push_back({name + ".gain", gain});
        out.push_back({name + ".bias", bias});
    }
};

// Post-norm encoder block: single-head self-attention, then a ReLU
// feed-forward of inner width 2D, each wrapped in residual + layer norm.
class TransformerBlock final : public SequenceOp {
public:
    TransformerBlock(std::size_t hidden, std::uint64_t seed, const std::string& prefix)
        : SequenceOp("Transformer", OpKind::seq_transform),
          hidden_(hidden),
          q_(Linear::create(seed, prefix + ".q", hidden, hidden)),
          k_(Linear::create(seed, prefix + ".k", hidden, hidden)),
          v_(Linear::create(seed, prefix + ".v", hidden, hidden)),
          o_(Linear::create(seed, prefix + ".o", hidden, hidden)),
          ff1_(Linear::create(seed, prefix + ".ff1", hidden, 2 * hidden)),
          ff2_(Linear::create(seed, prefix + ".ff2", 2 * hidden, hidden)),
          ln1_(prefix + ".ln1", hidden),
          ln2_(prefix + ".ln2", hidden) {}

    void collect(std::vector<NamedTensor>& out) const override {
        for (const Linear* l : {&q_, &k_, &v_, &o_, &ff1_, &ff2_}) l->collect(out);
        ln1_.collect(out);
        ln2_.collect(out);
    }

protected:
    Tensor run(const Tensor& x) const override {
        if (x.dim(2) != hidden_) throw DimensionError("Transformer expects width " + std::to_string(hidden_));
        const double inv = 1.0 / std::sqrt(static_cast<double>(hidden_));
        Tensor scores = ag::scale(ag::bmm(q_(x), ag::transpose_last(k_(x))), inv);
        Tensor attn = o_(ag::bmm(ag::softmax(scores, 2), v_(x)));
        Tensor h = ln1_(ag::add(x, attn));
        return ln2_(ag::add(h, ff2_(ag::relu(ff1_(h)))));
    }

private:
    std::size_t hidden_;
    Linear q_, k_, v_, o_, ff1_, ff2_;
    LayerNormParams ln1_, ln2_;
};

}  // namespace

const std::vector<std::string>& operator_names(OpKind kind) {
    static const std::vector<std::string> fusion{"Sum", "Max", "Average", "Concat"};
    static const std::vector<std::string> seq_fusion{"Concat"};
    static const std::vector<std::string> linear{"Sigmoid", "ReLU", "Tanh", "GELU", "Softsign", "Skip", "MLP"};
    static const std::vector<std::string> seq{"Transformer", "RNN", "LSTM", "GRU", "Skip"};
    switch (kind) {
        case OpKind::fusion: return fusion;
        case OpKind::seq_fusion: return seq_fusion;
        case OpKind::linear_transform: return linear;
        case OpKind::seq_transform: return seq;
    }
    throw ContractError("unknown operator kind");
}

bool has_operator(OpKind kind, const std::string& name) {
    for (const auto& n : operator_names(kind))
        if (n == name) return true;
    return false;
}

OperatorPtr make_operator(OpKind kind, const std::string& name, std::size_t hidden, std::uint64_t seed,
                          const std::string& prefix) {
    if (hidden == 0) throw ConfigError("hidden width must be positive");
    switch (kind) {
        case OpKind::fusion:
            if (name == "Sum") return std::make_unique<PointwiseFusion>(name, ag::add);
            if (name == "Max") return std::make_unique<PointwiseFusion>(name, ag::maximum);
            if (name == "Average") return std::make_unique<PointwiseFusion>(name, average);
            if (name == "Concat") return std::make_unique<ConcatFusion>(hidden, seed, prefix);
            break;
        case OpKind::seq_fusion:
            if (name == "Concat") return std::make_unique<SequenceConcat>();
            break;
        case OpKind::linear_transform:
            if (name == "Sigmoid") return std::make_unique<Activation>(name, ag::sigmoid);
            if (name == "ReLU") return std::make_unique<Activation>(name, ag::relu);
            if (name == "Tanh") return std::make_unique<Activation>(name, ag::tanh);
            if (name == "GELU") return std::make_unique<Activation>(name, ag::gelu);
            if (name == "Softsign") return std::make_unique<Activation>(name, ag::softsign);
            if (name == "Skip") return std::make_unique<Skip>(kind);
            if (name == "MLP") return std::make_unique<Mlp>(hidden, seed, prefix);
            break;
        case OpKind::seq_transform:
            if (name == "Transformer") return std::make_unique<TransformerBlock>(hidden, seed, prefix);
            if (name == "RNN") return std::make_unique<Recurrent>(Recurrent::Cell::rnn, hidden, seed, prefix);
            if (name == "LSTM") return std::make_unique<Recurrent>(Recurrent::Cell::lstm, hidden, seed, prefix);
            if (name == "GRU") return std::make_unique<Recurrent>(Recurrent::Cell::gru, hidden, seed, prefix);
            if (name == "Skip") return std::make_unique<Skip>(kind);
            break;
    }
    throw ConfigError("unknown " + std::string(to_string(kind)) + " operator '" + name + "'");
}

std::vector<OperatorSpec> operator_specs(OpKind kind, std::size_t hidden) {
    std::vector<OperatorSpec> specs;
    for (const auto& name : operator_names(kind)) {
        OperatorSpec s{name, kind, {}};
        for (const auto& p : make_operator(kind, name, hidden, 0, name)->parameters()) s.param_shapes.push_back(p.tensor.shape());
        specs.push_back(std::move(s));
    }
    return specs;
}

}  // namespace muse
