#include "muse/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "muse/errors.hpp"

namespace muse::ag {

namespace {
thread_local int no_grad_depth = 0;
}

bool grad_enabled() { return no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void TensorImpl::accumulate(std::span<const double> g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::vector<double>& TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (values.size() != shape_numel(shape)) {
        throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows, bool requires_grad) {
    std::vector<double> v;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("ragged matrix literal");
        v.insert(v.end(), r.begin(), r.end());
    }
    return from({rows.size(), cols}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->values.size(); }
std::span<const double> Tensor::values() const { return impl_->values; }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::is_leaf() const { return !impl_->backward_fn; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }
std::span<double> Tensor::mutable_values() { return impl_->values; }
std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }

Tensor Tensor::detach() const { return from(shape(), impl_->values, false); }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad();
        if (any) {
            impl->requires_grad = true;
            impl->parents.reserve(inputs.size());
            for (auto& t : inputs) impl->parents.push_back(std::move(t.impl_));
            impl->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(impl));
}

std::size_t backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward on undefined tensor");
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    TensorImpl* root = loss.impl_.get();
    if (root->consumed) throw ContractError("backward already ran through this graph");
    if (!root->requires_grad) throw ContractError("loss is not connected to any tensor requiring grad");

    // Iterative post-order DFS gives a topological order.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorImpl* n : order) {
        if (n->consumed) throw ContractError("backward already ran through part of this graph");
        if (!n->backward_fn && !n->grad.empty()) {
            throw ContractError("leaf of shape " + shape_str(n->shape) +
                                " already holds a gradient; reset gradients before backward");
        }
    }

    root->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* n = *it;
        if (!n->backward_fn) continue;
        n->grad_buffer();
        n->backward_fn(*n);
    }
    // Release the graph; leaves keep their gradients.
    for (TensorImpl* n : order) {
        if (!n->backward_fn) continue;
        n->consumed = true;
        n->backward_fn = nullptr;
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
    for (TensorImpl* n : order) n->parents.clear();
    return order.size();
}

}  // namespace muse::ag
