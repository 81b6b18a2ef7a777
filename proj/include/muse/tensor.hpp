#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace muse::ag {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl;

// Dense row-major f64 tensor with an optional gradient buffer. Copies share
// storage; values are only mutated by optimizers and parameter loading.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t numel() const;

    std::span<const double> values() const;
    double item() const;
    double operator[](std::size_t flat) const { return values()[flat]; }

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    // Empty span when no gradient is populated.
    std::span<const double> grad() const;
    void zero_grad();

    // Writable view for optimizers and parameter loading. Must not be used
    // while a graph that reads this tensor is pending backward.
    std::span<double> mutable_values();
    std::span<double> mutable_grad();

    // Same values, cut from the graph.
    Tensor detach() const;

    TensorImpl* impl() const { return impl_.get(); }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;

    friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                              std::function<void(TensorImpl&)>);
    friend std::size_t backward(const Tensor& loss);
};

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty when absent
    bool requires_grad = false;
    bool consumed = false;  // backward already ran through this node
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    void accumulate(std::span<const double> g);
    std::vector<double>& grad_buffer();
};

// Builds an op result; records the backward closure only when some input
// requires a gradient and gradient mode is on.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward_fn);

// Reverse sweep from a scalar loss. Populates grads on every reachable leaf
// that requires one and returns the number of graph nodes visited. Throws a
// ContractError if the loss is not scalar, is disconnected, was already
// backpropagated, or if any reachable leaf still holds a gradient.
std::size_t backward(const Tensor& loss);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops require equal shapes; there is no
// implicit broadcasting (use expand / add_bias).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Elementwise max; ties send the gradient to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// a * s where s holds a single element.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
// Tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
Tensor gelu(const Tensor& a);
Tensor softsign(const Tensor& a);
Tensor abs(const Tensor& a);

enum class Elementwise { add, mul, sigmoid, tanh, relu, gelu, softsign };
Tensor elementwise(Elementwise op, std::span<const Tensor> inputs);

// [m x k] x [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [B x m x k] x [B x k x n].
Tensor bmm(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose_last(const Tensor& a);
// x[... x in] * W[in x out] (+ bias[out] when defined).
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias = {});
// x[... x n] + bias[n].
Tensor add_bias(const Tensor& x, const Tensor& bias);

enum class Reduce { sum, mean, max };
// Removes `axis`. Max routes its gradient to the first maximal element.
Tensor reduce(Reduce op, const Tensor& t, std::size_t axis);
Tensor sum(const Tensor& t, std::size_t axis);
Tensor mean(const Tensor& t, std::size_t axis);
Tensor max(const Tensor& t, std::size_t axis);
Tensor sum_all(const Tensor& t);
Tensor mean_all(const Tensor& t);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& t, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor stack(std::span<const Tensor> parts, std::size_t axis);
// Drops `axis`, keeping position `index`.
Tensor select(const Tensor& t, std::size_t axis, std::size_t index);
// Keeps [start, start + length) along `axis`.
Tensor narrow(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& t, Shape shape);
// Inserts a new axis at `axis` with `count` copies.
Tensor expand(const Tensor& t, std::size_t axis, std::size_t count);

// Divides each slice along the last axis by its L2 norm; zero slices stay zero.
Tensor l2_normalize(const Tensor& t);
// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Cosine over the last axis; 0 when either side is the zero vector.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);
// sum_i w[i] * xs[i] for a 1-D weight vector and equally shaped inputs.
Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> xs);
// Mean binary cross-entropy of probabilities against 0/1 targets, with the
// probabilities clamped to [eps, 1 - eps].
Tensor bce(const Tensor& probs, std::span<const double> targets, double eps = 1e-7);

}  // namespace muse::ag
