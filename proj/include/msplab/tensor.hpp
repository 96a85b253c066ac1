#pragma once

// Dense float64 tensors with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node. Ops whose inputs require
// gradients record a backward closure on the output node; backward() walks
// the reachable graph in reverse topological order. Leaf gradients
// accumulate across backward() calls until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace msplab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // reads this->grad, accumulates into parents

    bool is_leaf() const { return !backward; }

    std::vector<double>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto extent : shape) {
            if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("shape " + shape_str(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const double> data() const { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }

    bool has_grad() const { return !node_->grad.empty(); }

    /// Gradient values; zeros when nothing has been accumulated yet.
    std::vector<double> grad() const {
        if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
        return node_->grad;
    }

    void zero_grad() { node_->grad.clear(); }

    /// In-place parameter update hook for optimizers. Only valid on leaves.
    std::span<double> mutable_data() {
        if (!node_->is_leaf()) throw ContractError("mutable_data() on a non-leaf tensor");
        return node_->data;
    }

    /// A new leaf holding a copy of the values, outside any graph.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    friend void backward(const Tensor& loss);

    // op implementations need node access
    friend struct TensorAccess;

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;
};

namespace detail {
inline bool& grad_mode_disabled() {
    thread_local bool disabled = false;
    return disabled;
}
} // namespace detail

/// While alive, ops on this thread record no graph.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_disabled()) { detail::grad_mode_disabled() = true; }
    ~NoGradGuard() { detail::grad_mode_disabled() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

struct TensorAccess {
    static detail::Node& node(const Tensor& t) { return *t.node_; }
    static const std::shared_ptr<detail::Node>& ptr(const Tensor& t) { return t.node_; }

    /// Output node wired to `inputs`. Records a backward closure only when
    /// some input requires a gradient.
    static Tensor make(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                       std::function<void(detail::Node&)> backward_fn) {
        auto node = std::make_shared<detail::Node>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        if (!detail::grad_mode_disabled()) {
            for (const auto& in : inputs) {
                if (in.requires_grad()) node->requires_grad = true;
            }
        }
        if (node->requires_grad) {
            for (const auto& in : inputs) node->parents.push_back(in.node_);
            node->backward = std::move(backward_fn);
        }
        return Tensor(std::move(node));
    }
};

/// Reverse-mode sweep from a scalar loss. Interior gradients are rebuilt on
/// every call; leaf gradients accumulate.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward() requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) return;

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node_.get(), 0}};
    seen.insert(loss.node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (!node->is_leaf()) node->grad.assign(node->data.size(), 0.0);
    }
    loss.node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
    // release interior buffers; leaves keep theirs
    for (auto* node : order) {
        if (!node->is_leaf()) node->grad.clear();
    }
}

// ---------------------------------------------------------------------------
// ops

/// [m x k] * [k x n] -> [m x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto A = a.data();
    const auto B = b.data();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    auto* an = &TensorAccess::node(a);
    auto* bn = &TensorAccess::node(b);
    return TensorAccess::make({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& self) {
        const auto& G = self.grad;
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * bn->data[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = an->data[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

/// Elementwise sum of equal shapes, or [m x n] + [n] with the vector added to every row.
inline Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = a.shape() == b.shape();
    const bool row_bias = a.rank() == 2 && b.rank() == 1 && a.dim(1) == b.dim(0);
    if (!same && !row_bias) {
        throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto A = a.data();
    const auto B = b.data();
    const std::size_t width = b.numel();
    std::vector<double> out(A.begin(), A.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i % width];
    auto* an = &TensorAccess::node(a);
    auto* bn = &TensorAccess::node(b);
    return TensorAccess::make(a.shape(), std::move(out), {a, b}, [an, bn, width](detail::Node& self) {
        if (an->requires_grad) {
            auto& ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % width] += self.grad[i];
        }
    });
}

/// max(0, x); the subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& x) {
    const auto X = x.data();
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] > 0.0 ? X[i] : 0.0;
    auto* xn = &TensorAccess::node(x);
    return TensorAccess::make(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (xn->data[i] > 0.0) gx[i] += self.grad[i];
    });
}

inline Tensor sum(const Tensor& x) {
    const auto X = x.data();
    const double total = std::accumulate(X.begin(), X.end(), 0.0);
    auto* xn = &TensorAccess::node(x);
    return TensorAccess::make({1}, {total}, {x}, [xn](detail::Node& self) {
        auto& gx = xn->grad_buffer();
        for (auto& g : gx) g += self.grad[0];
    });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    auto* xn = &TensorAccess::node(x);
    return TensorAccess::make(std::move(shape), std::move(out), {x}, [xn](detail::Node& self) {
        auto& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
    });
}

namespace detail {

struct ConvDims {
    std::size_t batch, c_in, h, w, c_out;
    bool batched;
};

inline ConvDims conv_dims(const Tensor& x, const Tensor& kernels) {
    if (kernels.rank() != 4 || kernels.dim(2) != 3 || kernels.dim(3) != 3) {
        throw DimensionError("conv2d: kernels must be [c_out x c_in x 3 x 3], got " + shape_str(kernels.shape()));
    }
    ConvDims d{};
    if (x.rank() == 3) {
        d = {1, x.dim(0), x.dim(1), x.dim(2), kernels.dim(0), false};
    } else if (x.rank() == 4) {
        d = {x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernels.dim(0), true};
    } else {
        throw DimensionError("conv2d: input must be [c x h x w] or [n x c x h x w], got " + shape_str(x.shape()));
    }
    if (kernels.dim(1) != d.c_in) {
        throw DimensionError("conv2d: input " + shape_str(x.shape()) + " has " + std::to_string(d.c_in) +
                             " channels but kernels " + shape_str(kernels.shape()) + " expect " +
                             std::to_string(kernels.dim(1)));
    }
    return d;
}

} // namespace detail

/// 3x3 cross-correlation, stride 1, zero padding 1. Accepts [c x h x w] or a
/// batch [n x c x h x w]; `bias`, when defined, is [c_out].
inline Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias = Tensor()) {
    const auto d = detail::conv_dims(x, kernels);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.c_out)) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " + std::to_string(d.c_out) +
                             " output channels");
    }
    const auto X = x.data();
    const auto K = kernels.data();
    const std::size_t hw = d.h * d.w;
    std::vector<double> out(d.batch * d.c_out * hw, 0.0);
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t co = 0; co < d.c_out; ++co) {
            double* o = out.data() + (n * d.c_out + co) * hw;
            if (bias.defined()) std::fill(o, o + hw, bias[co]);
            for (std::size_t ci = 0; ci < d.c_in; ++ci) {
                const double* in = X.data() + (n * d.c_in + ci) * hw;
                const double* k = K.data() + (co * d.c_in + ci) * 9;
                for (std::size_t r = 0; r < d.h; ++r)
                    for (std::size_t c = 0; c < d.w; ++c) {
                        double acc = 0.0;
                        for (int dr = -1; dr <= 1; ++dr) {
                            const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
                            if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(d.h)) continue;
                            for (int dc = -1; dc <= 1; ++dc) {
                                const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
                                if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(d.w)) continue;
                                acc += k[(dr + 1) * 3 + (dc + 1)] * in[rr * d.w + cc];
                            }
                        }
                        o[r * d.w + c] += acc;
                    }
            }
        }
    Shape shape = d.batched ? Shape{d.batch, d.c_out, d.h, d.w} : Shape{d.c_out, d.h, d.w};
    auto* xn = &TensorAccess::node(x);
    auto* kn = &TensorAccess::node(kernels);
    detail::Node* bn = bias.defined() ? &TensorAccess::node(bias) : nullptr;
    auto fn = [xn, kn, bn, d, hw](detail::Node& self) {
        const auto& G = self.grad;
        double* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        double* gk = kn->requires_grad ? kn->grad_buffer().data() : nullptr;
        for (std::size_t n = 0; n < d.batch; ++n)
            for (std::size_t co = 0; co < d.c_out; ++co) {
                const double* g = G.data() + (n * d.c_out + co) * hw;
                if (bn && bn->requires_grad) {
                    auto& gb = bn->grad_buffer();
                    for (std::size_t i = 0; i < hw; ++i) gb[co] += g[i];
                }
                for (std::size_t ci = 0; ci < d.c_in; ++ci) {
                    const std::size_t in_off = (n * d.c_in + ci) * hw;
                    const std::size_t k_off = (co * d.c_in + ci) * 9;
                    for (std::size_t r = 0; r < d.h; ++r)
                        for (std::size_t c = 0; c < d.w; ++c) {
                            const double gv = g[r * d.w + c];
                            if (gv == 0.0) continue;
                            for (int dr = -1; dr <= 1; ++dr) {
                                const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
                                if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(d.h)) continue;
                                for (int dc = -1; dc <= 1; ++dc) {
                                    const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
                                    if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(d.w)) continue;
                                    const std::size_t xi = in_off + rr * d.w + cc;
                                    const std::size_t ki = k_off + (dr + 1) * 3 + (dc + 1);
                                    if (gk) gk[ki] += gv * xn->data[xi];
                                    if (gx) gx[xi] += gv * kn->data[ki];
                                }
                            }
                        }
                }
            }
    };
    if (bias.defined()) return TensorAccess::make(std::move(shape), std::move(out), {x, kernels, bias}, fn);
    return TensorAccess::make(std::move(shape), std::move(out), {x, kernels}, fn);
}

/// Non-overlapping window x window average pooling over the trailing two
/// axes of [c x h x w] or [n x c x h x w]. Trailing rows/cols that do not fill
/// a window are dropped.
inline Tensor mean_pool2d(const Tensor& x, std::size_t window = 2) {
    if (x.rank() != 3 && x.rank() != 4) {
        throw DimensionError("mean_pool2d: expected 3-d or 4-d input, got " + shape_str(x.shape()));
    }
    const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
    if (window == 0 || h < window || w < window) {
        throw DimensionError("mean_pool2d: window " + std::to_string(window) + " larger than " + shape_str(x.shape()));
    }
    const std::size_t planes = x.numel() / (h * w);
    const std::size_t oh = h / window, ow = w / window;
    const double scale = 1.0 / static_cast<double>(window * window);
    const auto X = x.data();
    std::vector<double> out(planes * oh * ow, 0.0);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < oh * window; ++r)
            for (std::size_t c = 0; c < ow * window; ++c)
                out[(p * oh + r / window) * ow + c / window] += X[(p * h + r) * w + c] * scale;
    Shape shape = x.shape();
    shape[shape.size() - 2] = oh;
    shape[shape.size() - 1] = ow;
    auto* xn = &TensorAccess::node(x);
    return TensorAccess::make(std::move(shape), std::move(out), {x},
                              [xn, planes, h, w, oh, ow, window, scale](detail::Node& self) {
                                  auto& gx = xn->grad_buffer();
                                  for (std::size_t p = 0; p < planes; ++p)
                                      for (std::size_t r = 0; r < oh * window; ++r)
                                          for (std::size_t c = 0; c < ow * window; ++c)
                                              gx[(p * h + r) * w + c] +=
                                                  self.grad[(p * oh + r / window) * ow + c / window] * scale;
                              });
}

/// Numerically stable softmax of one logit row.
inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> probs(logits.size());
    if (logits.empty()) return probs;
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += (probs[i] = std::exp(logits[i] - top));
    for (auto& p : probs) p /= z;
    return probs;
}

struct CrossEntropyResult {
    Tensor loss;                // scalar; mean over rows for batched input
    std::vector<double> probs;  // row-major, same layout as the logits
};

/// Softmax cross-entropy. `logits` is [C] with one label, or [n x C] with n
/// labels, in which case the loss is the batch mean.
inline CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
    std::size_t rows = 0, classes = 0;
    if (logits.rank() == 1) {
        rows = 1;
        classes = logits.dim(0);
    } else if (logits.rank() == 2) {
        rows = logits.dim(0);
        classes = logits.dim(1);
    } else {
        throw DimensionError("softmax_cross_entropy: logits must be [C] or [n x C], got " + shape_str(logits.shape()));
    }
    if (labels.size() != rows) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(rows) + " logit rows");
    }
    for (auto label : labels) {
        if (label >= classes) {
            throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
    }
    const auto L = logits.data();
    std::vector<double> probs(L.size());
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = L.subspan(r * classes, classes);
        const double top = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += (probs[r * classes + c] = std::exp(row[c] - top));
        for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] /= z;
        // -log p_y = log z - (l_y - max)
        total += std::log(z) - (row[labels[r]] - top);
    }
    const double inv_rows = 1.0 / static_cast<double>(rows);
    auto* ln = &TensorAccess::node(logits);
    std::vector<std::size_t> label_copy(labels.begin(), labels.end());
    Tensor loss = TensorAccess::make(
        {1}, {total * inv_rows}, {logits},
        [ln, probs, label_copy = std::move(label_copy), classes, inv_rows](detail::Node& self) {
            auto& gl = ln->grad_buffer();
            const double g = self.grad[0] * inv_rows;
            for (std::size_t r = 0; r < label_copy.size(); ++r)
                for (std::size_t c = 0; c < classes; ++c) {
                    const double onehot = (c == label_copy[r]) ? 1.0 : 0.0;
                    gl[r * classes + c] += g * (probs[r * classes + c] - onehot);
                }
        });
    return {std::move(loss), std::move(probs)};
}

inline CrossEntropyResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    const std::size_t labels[1] = {label};
    return softmax_cross_entropy(logits, std::span<const std::size_t>(labels));
}

} // namespace msplab
