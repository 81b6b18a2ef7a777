#include <algorithm>
#include <cmath>
#include <numbers>

#include "muse/errors.hpp"
#include "muse/tensor.hpp"

namespace muse::ag {

namespace {

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit a;
    for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
    a.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    return a;
}

void check_axis(const Tensor& t, std::size_t axis, const char* op) {
    if (axis >= t.rank()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape r;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != axis) r.push_back(s[i]);
    }
    if (r.empty()) r.push_back(1);
    return r;
}

TensorImpl& parent(TensorImpl& self, std::size_t i) { return *self.parents[i]; }

// Unary pointwise op with derivative expressed through input x and output y.
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
    auto x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return make_result(a.shape(), std::move(out), {a}, [dfdx](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.values[i], self.values[i]);
    });
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto x = a.values(), y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = parent(self, k);
            if (p.requires_grad) p.accumulate(self.grad);
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto x = a.values(), y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        auto& pa = parent(self, 0);
        if (pa.requires_grad) pa.accumulate(self.grad);
        auto& pb = parent(self, 1);
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto x = a.values(), y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.values[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.values[i];
        }
    });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "maximum");
    auto x = a.values(), y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= y[i] ? x[i] : y[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const bool first = pa.values[i] >= pb.values[i];
            TensorImpl& dst = first ? pa : pb;
            if (dst.requires_grad) dst.grad_buffer()[i] += self.grad[i];
        }
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) {
    return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw DimensionError("mul_scalar: expected one-element scale, got " + shape_str(s.shape()));
    const double k = s.item();
    auto x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * k;
    return make_result(a.shape(), std::move(out), {a, s}, [](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& ps = parent(self, 1);
        const double k = ps.values[0];
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.values[i];
            ps.grad_buffer()[0] += acc;
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
    return unary(
        a,
        [](double x) { return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x))); },
        [](double x, double) {
            const double u = kSqrt2OverPi * (x + kGeluC * x * x * x);
            const double t = std::tanh(u);
            const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        });
}

Tensor softsign(const Tensor& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::fabs(x)); },
        [](double x, double) {
            const double d = 1.0 + std::fabs(x);
            return 1.0 / (d * d);
        });
}

Tensor abs(const Tensor& a) {
    return unary(a, [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor elementwise(Elementwise op, std::span<const Tensor> inputs) {
    const std::size_t arity = (op == Elementwise::add || op == Elementwise::mul) ? 2 : 1;
    if (inputs.size() != arity) {
        throw ContractError("elementwise: expected " + std::to_string(arity) + " inputs, got " +
                            std::to_string(inputs.size()));
    }
    switch (op) {
        case Elementwise::add: return add(inputs[0], inputs[1]);
        case Elementwise::mul: return mul(inputs[0], inputs[1]);
        case Elementwise::sigmoid: return sigmoid(inputs[0]);
        case Elementwise::tanh: return tanh(inputs[0]);
        case Elementwise::relu: return relu(inputs[0]);
        case Elementwise::gelu: return gelu(inputs[0]);
        case Elementwise::softsign: return softsign(inputs[0]);
    }
    throw ContractError("elementwise: unknown op");
}

namespace {

// c[m x n] += a[m x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_acc_bt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            c[i * k + p] += acc;
        }
    }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_acc_at(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        if (pa.requires_grad) gemm_acc_bt(self.grad.data(), pb.values.data(), pa.grad_buffer().data(), m, k, n);
        if (pb.requires_grad) gemm_acc_at(pa.values.data(), self.grad.data(), pb.grad_buffer().data(), m, k, n);
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    std::vector<double> out(B * m * n, 0.0);
    for (std::size_t s = 0; s < B; ++s) {
        gemm_acc(a.values().data() + s * m * k, b.values().data() + s * k * n, out.data() + s * m * n, m, k, n);
    }
    return make_result({B, m, n}, std::move(out), {a, b}, [B, m, k, n](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        for (std::size_t s = 0; s < B; ++s) {
            const double* g = self.grad.data() + s * m * n;
            if (pa.requires_grad) {
                gemm_acc_bt(g, pb.values.data() + s * k * n, pa.grad_buffer().data() + s * m * k, m, k, n);
            }
            if (pb.requires_grad) {
                gemm_acc_at(pa.values.data() + s * m * k, g, pb.grad_buffer().data() + s * k * n, m, k, n);
            }
        }
    });
}

Tensor transpose_last(const Tensor& a) {
    if (a.rank() < 2) throw DimensionError("transpose_last: rank < 2 for " + shape_str(a.shape()));
    Shape s = a.shape();
    const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
    const std::size_t batch = a.numel() / (r * c);
    std::swap(s[s.size() - 2], s[s.size() - 1]);
    auto x = a.values();
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = x[b * r * c + i * c + j];
        }
    }
    return make_result(std::move(s), std::move(out), {a}, [batch, r, c](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
            }
        }
    });
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
        throw DimensionError("affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
    const std::size_t rows = x.numel() / in;
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
        throw DimensionError("affine: bias " + shape_str(bias.shape()) + " does not match weight " +
                             shape_str(weight.shape()));
    }
    Shape s = x.shape();
    s.back() = out_dim;
    std::vector<double> out(rows * out_dim, 0.0);
    if (has_bias) {
        auto bv = bias.values();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * out_dim);
    }
    gemm_acc(x.values().data(), weight.values().data(), out.data(), rows, in, out_dim);
    std::vector<Tensor> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result(std::move(s), std::move(out), std::move(inputs), [rows, in, out_dim](TensorImpl& self) {
        auto& px = parent(self, 0);
        auto& pw = parent(self, 1);
        if (px.requires_grad) gemm_acc_bt(self.grad.data(), pw.values.data(), px.grad_buffer().data(), rows, in, out_dim);
        if (pw.requires_grad) gemm_acc_at(px.values.data(), self.grad.data(), pw.grad_buffer().data(), rows, in, out_dim);
        if (self.parents.size() > 2) {
            auto& pb = parent(self, 2);
            if (pb.requires_grad) {
                auto& g = pb.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < out_dim; ++j) g[j] += self.grad[r * out_dim + j];
                }
            }
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
    }
    const std::size_t n = bias.dim(0), rows = x.numel() / n;
    auto xv = x.values();
    auto bv = bias.values();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xv[r * n + j] + bv[j];
    }
    return make_result(x.shape(), std::move(out), {x, bias}, [rows, n](TensorImpl& self) {
        auto& px = parent(self, 0);
        auto& pb = parent(self, 1);
        if (px.requires_grad) px.accumulate(self.grad);
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
            }
        }
    });
}

Tensor reduce(Reduce op, const Tensor& t, std::size_t axis) {
    check_axis(t, axis, "reduce");
    const auto sp = split_at(t.shape(), axis);
    auto x = t.values();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    std::vector<std::size_t> arg;
    if (op == Reduce::max) arg.assign(out.size(), 0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t dst = o * sp.inner + i;
            if (op == Reduce::max) {
                std::size_t best = 0;
                double bv = x[o * sp.n * sp.inner + i];
                for (std::size_t k = 1; k < sp.n; ++k) {
                    const double v = x[(o * sp.n + k) * sp.inner + i];
                    if (v > bv) {
                        bv = v;
                        best = k;
                    }
                }
                out[dst] = bv;
                arg[dst] = best;
            } else {
                double acc = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) acc += x[(o * sp.n + k) * sp.inner + i];
                out[dst] = op == Reduce::mean ? acc / static_cast<double>(sp.n) : acc;
            }
        }
    }
    return make_result(drop_axis(t.shape(), axis), std::move(out), {t},
                       [op, sp, arg = std::move(arg)](TensorImpl& self) {
                           auto& p = parent(self, 0);
                           if (!p.requires_grad) return;
                           auto& g = p.grad_buffer();
                           const double w = op == Reduce::mean ? 1.0 / static_cast<double>(sp.n) : 1.0;
                           for (std::size_t o = 0; o < sp.outer; ++o) {
                               for (std::size_t i = 0; i < sp.inner; ++i) {
                                   const std::size_t src = o * sp.inner + i;
                                   if (op == Reduce::max) {
                                       g[(o * sp.n + arg[src]) * sp.inner + i] += self.grad[src];
                                   } else {
                                       for (std::size_t k = 0; k < sp.n; ++k) {
                                           g[(o * sp.n + k) * sp.inner + i] += w * self.grad[src];
                                       }
                                   }
                               }
                           }
                       });
}

Tensor sum(const Tensor& t, std::size_t axis) { return reduce(Reduce::sum, t, axis); }
Tensor mean(const Tensor& t, std::size_t axis) { return reduce(Reduce::mean, t, axis); }
Tensor max(const Tensor& t, std::size_t axis) { return reduce(Reduce::max, t, axis); }
Tensor sum_all(const Tensor& t) { return sum(reshape(t, {t.numel()}), 0); }
Tensor mean_all(const Tensor& t) { return mean(reshape(t, {t.numel()}), 0); }

Tensor softmax(const Tensor& t, std::size_t axis) {
    check_axis(t, axis, "softmax");
    const auto sp = split_at(t.shape(), axis);
    auto x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
            double m = x[at(0)];
            for (std::size_t k = 1; k < sp.n; ++k) m = std::max(m, x[at(k)]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.n; ++k) {
                out[at(k)] = std::exp(x[at(k)] - m);
                z += out[at(k)];
            }
            for (std::size_t k = 0; k < sp.n; ++k) out[at(k)] /= z;
        }
    }
    return make_result(t.shape(), std::move(out), {t}, [sp](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                auto at = [&](std::size_t k) { return (o * sp.n + k) * sp.inner + i; };
                double dot = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) dot += self.grad[at(k)] * self.values[at(k)];
                for (std::size_t k = 0; k < sp.n; ++k) g[at(k)] += self.values[at(k)] * (self.grad[at(k)] - dot);
            }
        }
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    check_axis(parts[0], axis, "concat");
    const Shape& ref = parts[0].shape();
    Shape s = ref;
    s[axis] = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Shape& ps = parts[p].shape();
        bool ok = ps.size() == ref.size();
        for (std::size_t d = 0; ok && d < ps.size(); ++d) ok = d == axis || ps[d] == ref[d];
        if (!ok) {
            throw DimensionError("concat: input " + std::to_string(p) + " has shape " + shape_str(ps) +
                                 ", incompatible with input 0 shape " + shape_str(ref) + " along axis " +
                                 std::to_string(axis));
        }
        s[axis] += ps[axis];
    }
    const auto out_sp = split_at(s, axis);
    std::vector<double> out(shape_numel(s));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const auto sp = split_at(p.shape(), axis);
        auto x = p.values();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(x.begin() + o * sp.n * sp.inner, sp.n * sp.inner,
                        out.begin() + (o * out_sp.n + off) * out_sp.inner);
        }
        off += sp.n;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return make_result(std::move(s), std::move(out), std::move(inputs),
                       [axis, out_sp, offsets = std::move(offsets)](TensorImpl& self) {
                           for (std::size_t p = 0; p < self.parents.size(); ++p) {
                               auto& src = parent(self, p);
                               if (!src.requires_grad) continue;
                               const auto sp = split_at(src.shape, axis);
                               auto& g = src.grad_buffer();
                               for (std::size_t o = 0; o < sp.outer; ++o) {
                                   const double* from = self.grad.data() + (o * out_sp.n + offsets[p]) * out_sp.inner;
                                   double* to = g.data() + o * sp.n * sp.inner;
                                   for (std::size_t k = 0; k < sp.n * sp.inner; ++k) to[k] += from[k];
                               }
                           }
                       });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
    return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor stack(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("stack: no inputs");
    if (axis > parts[0].rank()) throw DimensionError("stack: axis out of range");
    std::vector<Tensor> expanded;
    expanded.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
        expanded.push_back(reshape(p, std::move(s)));
    }
    return concat(expanded, axis);
}

Tensor narrow(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length) {
    check_axis(t, axis, "narrow");
    const auto sp = split_at(t.shape(), axis);
    if (length == 0 || start + length > sp.n) {
        throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") outside axis of size " + std::to_string(sp.n));
    }
    Shape s = t.shape();
    s[axis] = length;
    auto x = t.values();
    std::vector<double> out(sp.outer * length * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(x.begin() + (o * sp.n + start) * sp.inner, length * sp.inner,
                    out.begin() + o * length * sp.inner);
    }
    return make_result(std::move(s), std::move(out), {t}, [sp, start, length](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* from = self.grad.data() + o * length * sp.inner;
            double* to = g.data() + (o * sp.n + start) * sp.inner;
            for (std::size_t k = 0; k < length * sp.inner; ++k) to[k] += from[k];
        }
    });
}

Tensor select(const Tensor& t, std::size_t axis, std::size_t index) {
    return reshape(narrow(t, axis, index, 1), drop_axis(t.shape(), axis));
}

Tensor reshape(const Tensor& t, Shape shape) {
    if (shape_numel(shape) != t.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(t.values().begin(), t.values().end());
    return make_result(std::move(shape), std::move(out), {t}, [](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (p.requires_grad) p.accumulate(self.grad);
    });
}

Tensor expand(const Tensor& t, std::size_t axis, std::size_t count) {
    if (axis > t.rank()) throw DimensionError("expand: axis out of range for " + shape_str(t.shape()));
    if (count == 0) throw DimensionError("expand: count must be positive");
    Shape s = t.shape();
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), count);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= t.shape()[i];
    for (std::size_t i = axis; i < t.rank(); ++i) inner *= t.shape()[i];
    auto x = t.values();
    std::vector<double> out(outer * count * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t c = 0; c < count; ++c) {
            std::copy_n(x.begin() + o * inner, inner, out.begin() + (o * count + c) * inner);
        }
    }
    return make_result(std::move(s), std::move(out), {t}, [outer, count, inner](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t c = 0; c < count; ++c) {
                const double* from = self.grad.data() + (o * count + c) * inner;
                for (std::size_t k = 0; k < inner; ++k) g[o * inner + k] += from[k];
            }
        }
    });
}

Tensor l2_normalize(const Tensor& t) {
    const std::size_t n = t.shape().back(), rows = t.numel() / n;
    auto x = t.values();
    std::vector<double> out(x.size(), 0.0);
    std::vector<double> norms(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < n; ++j) ss += x[r * n + j] * x[r * n + j];
        norms[r] = std::sqrt(ss);
        if (norms[r] > 0.0) {
            for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] / norms[r];
        }
    }
    return make_result(t.shape(), std::move(out), {t}, [rows, n, norms = std::move(norms)](TensorImpl& self) {
        auto& p = parent(self, 0);
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            if (norms[r] == 0.0) continue;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += self.grad[r * n + j] * self.values[r * n + j];
            for (std::size_t j = 0; j < n; ++j) {
                g[r * n + j] += (self.grad[r * n + j] - self.values[r * n + j] * dot) / norms[r];
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t n = x.shape().back(), rows = x.numel() / n;
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
    }
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    std::vector<double> xhat(xv.size()), inv_std(rows), out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (xv[r * n + j] - mu) * (xv[r * n + j] - mu);
        var /= static_cast<double>(n);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (xv[r * n + j] - mu) * inv_std[r];
            out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gain, bias},
                       [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
                           auto& px = parent(self, 0);
                           auto& pg = parent(self, 1);
                           auto& pb = parent(self, 2);
                           const double dn = static_cast<double>(n);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* go = self.grad.data() + r * n;
                               if (pg.requires_grad) {
                                   auto& g = pg.grad_buffer();
                                   for (std::size_t j = 0; j < n; ++j) g[j] += go[j] * xhat[r * n + j];
                               }
                               if (pb.requires_grad) {
                                   auto& g = pb.grad_buffer();
                                   for (std::size_t j = 0; j < n; ++j) g[j] += go[j];
                               }
                               if (px.requires_grad) {
                                   double s1 = 0.0, s2 = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double dh = go[j] * pg.values[j];
                                       s1 += dh;
                                       s2 += dh * xhat[r * n + j];
                                   }
                                   auto& g = px.grad_buffer();
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const double dh = go[j] * pg.values[j];
                                       g[r * n + j] += inv_std[r] * (dh - s1 / dn - xhat[r * n + j] * s2 / dn);
                                   }
                               }
                           }
                       });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "cosine_similarity");
    const std::size_t n = a.shape().back(), rows = a.numel() / n;
    auto x = a.values(), y = b.values();
    std::vector<double> out(rows, 0.0), na(rows), nb(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0, sa = 0.0, sb = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            dot += x[r * n + j] * y[r * n + j];
            sa += x[r * n + j] * x[r * n + j];
            sb += y[r * n + j] * y[r * n + j];
        }
        na[r] = std::sqrt(sa);
        nb[r] = std::sqrt(sb);
        if (na[r] > 0.0 && nb[r] > 0.0) out[r] = dot / (na[r] * nb[r]);
    }
    Shape s = a.shape();
    s.pop_back();
    if (s.empty()) s.push_back(1);
    return make_result(std::move(s), std::move(out), {a, b},
                       [rows, n, na = std::move(na), nb = std::move(nb)](TensorImpl& self) {
                           auto& pa = parent(self, 0);
                           auto& pb = parent(self, 1);
                           for (std::size_t r = 0; r < rows; ++r) {
                               if (na[r] == 0.0 || nb[r] == 0.0) continue;
                               const double c = self.values[r], g = self.grad[r];
                               const double* x = pa.values.data() + r * n;
                               const double* y = pb.values.data() + r * n;
                               if (pa.requires_grad) {
                                   auto& ga = pa.grad_buffer();
                                   for (std::size_t j = 0; j < n; ++j) {
                                       ga[r * n + j] += g * (y[j] / (na[r] * nb[r]) - c * x[j] / (na[r] * na[r]));
                                   }
                               }
                               if (pb.requires_grad) {
                                   auto& gb = pb.grad_buffer();
                                   for (std::size_t j = 0; j < n; ++j) {
                                       gb[r * n + j] += g * (x[j] / (na[r] * nb[r]) - c * y[j] / (nb[r] * nb[r]));
                                   }
                               }
                           }
                       });
}

Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> xs) {
    if (weights.rank() != 1 || weights.dim(0) != xs.size()) {
        throw DimensionError("weighted_sum: " + std::to_string(xs.size()) + " inputs but weights " +
                             shape_str(weights.shape()));
    }
    if (xs.empty()) throw ContractError("weighted_sum: no inputs");
    for (std::size_t i = 1; i < xs.size(); ++i) require_same_shape(xs[0], xs[i], "weighted_sum");
    auto w = weights.values();
    std::vector<double> out(xs[0].numel(), 0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        auto x = xs[i].values();
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += w[i] * x[j];
    }
    std::vector<Tensor> inputs{weights};
    inputs.insert(inputs.end(), xs.begin(), xs.end());
    return make_result(xs[0].shape(), std::move(out), std::move(inputs), [](TensorImpl& self) {
        auto& pw = parent(self, 0);
        for (std::size_t i = 1; i < self.parents.size(); ++i) {
            auto& px = parent(self, i);
            if (pw.requires_grad) {
                double acc = 0.0;
                for (std::size_t j = 0; j < self.grad.size(); ++j) acc += self.grad[j] * px.values[j];
                pw.grad_buffer()[i - 1] += acc;
            }
            if (px.requires_grad) {
                const double wi = pw.values[i - 1];
                auto& g = px.grad_buffer();
                for (std::size_t j = 0; j < g.size(); ++j) g[j] += wi * self.grad[j];
            }
        }
    });
}

Tensor bce(const Tensor& probs, std::span<const double> targets, double eps) {
    if (probs.numel() != targets.size()) {
        throw DimensionError("bce: " + std::to_string(probs.numel()) + " predictions vs " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t n = targets.size();
    auto p = probs.values();
    std::vector<double> tgt(targets.begin(), targets.end());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = std::clamp(p[i], eps, 1.0 - eps);
        loss -= tgt[i] * std::log(q) + (1.0 - tgt[i]) * std::log(1.0 - q);
    }
    loss /= static_cast<double>(n);
    return make_result({1}, {loss}, {probs}, [n, eps, tgt = std::move(tgt)](TensorImpl& self) {
        auto& pp = parent(self, 0);
        if (!pp.requires_grad) return;
        auto& g = pp.grad_buffer();
        const double go = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Straight-through at the clamp bounds so saturated mistakes still
            // receive a gradient.
            const double q = std::clamp(pp.values[i], eps, 1.0 - eps);
            g[i] += go * (-tgt[i] / q + (1.0 - tgt[i]) / (1.0 - q));
        }
    });
}

}  // namespace muse::ag
