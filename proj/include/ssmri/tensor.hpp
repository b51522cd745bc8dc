#pragma once

// Dense-tensor engine with reverse-mode autodiff on an explicit tape.
// Templated on the scalar type: training runs in float, verification
// oracles instantiate the same graph in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace ssmri::ad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until needed
    bool requires_grad = false;
    bool is_op_output = false;
    std::string name;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_leaf(Shape shape, std::vector<T> data, bool requires_grad = false,
                     std::string name = {}) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    n->name = std::move(name);
    return n;
}

template <typename T>
NodePtr<T> make_full(const Shape& shape, T fill, bool requires_grad = false) {
    return make_leaf<T>(shape, std::vector<T>(static_cast<std::size_t>(numel_of(shape)), fill),
                        requires_grad);
}

// Value copy cut off from any tape.
template <typename T>
NodePtr<T> detach(const NodePtr<T>& x) {
    return make_leaf<T>(x->shape, x->value, false);
}

template <typename T>
class Tape {
  public:
    struct Op {
        NodePtr<T> out;
        std::function<void()> backward;
    };

    static NodePtr<T> alloc(Shape shape, bool requires_grad) {
        auto out = std::make_shared<Node<T>>();
        out->shape = std::move(shape);
        out->value.resize(static_cast<std::size_t>(numel_of(out->shape)), T(0));
        out->requires_grad = requires_grad;
        out->is_op_output = true;
        return out;
    }

    void push(NodePtr<T> out, std::function<void()> backward_rule) {
        ops_.push_back(Op{std::move(out), std::move(backward_rule)});
    }

    // Accumulates into the grad buffers of every requires_grad leaf reachable
    // from `loss`. Intermediate grads are reset per call, so repeated calls
    // add another full vector-Jacobian product into the leaves.
    void backward(const NodePtr<T>& loss) {
        if (loss->numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss->shape));
        bool found = false;
        for (auto& op : ops_)
            if (op.out == loss) { found = true; break; }
        if (!found) throw std::invalid_argument("backward: loss node is not on this tape");

        for (auto& op : ops_) {
            op.out->ensure_grad();
            op.out->zero_grad();
        }
        loss->grad[0] = T(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
    }

    std::size_t size() const { return ops_.size(); }
    void clear() { ops_.clear(); }

  private:
    std::vector<Op> ops_;
};

namespace detail {

template <typename T>
void check_same_shape(const NodePtr<T>& a, const NodePtr<T>& b, const char* op) {
    if (a->shape != b->shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) +
                                    " vs " + shape_str(b->shape));
}

template <typename T>
inline void accumulate(const NodePtr<T>& n, const std::vector<T>& g) {
    if (!n->requires_grad) return;
    n->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) n->grad[i] += g[i];
}

} // namespace detail

// ---- binary elementwise (shapes must match exactly; no broadcasting) ----

template <typename T>
NodePtr<T> add(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = Tape<T>::alloc(a->shape, a->requires_grad || b->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] + b->value[i];
    if (out->requires_grad)
        tape.push(out, [a, b, out]() {
            detail::accumulate(a, out->grad);
            detail::accumulate(b, out->grad);
        });
    return out;
}

template <typename T>
NodePtr<T> sub(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = Tape<T>::alloc(a->shape, a->requires_grad || b->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] - b->value[i];
    if (out->requires_grad)
        tape.push(out, [a, b, out]() {
            detail::accumulate(a, out->grad);
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < b->numel(); ++i) b->grad[i] -= out->grad[i];
            }
        });
    return out;
}

template <typename T>
NodePtr<T> mul(Tape<T>& tape, const NodePtr<T>& a, const NodePtr<T>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = Tape<T>::alloc(a->shape, a->requires_grad || b->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] * b->value[i];
    if (out->requires_grad)
        tape.push(out, [a, b, out]() {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < a->numel(); ++i)
                    a->grad[i] += out->grad[i] * b->value[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < b->numel(); ++i)
                    b->grad[i] += out->grad[i] * a->value[i];
            }
        });
    return out;
}

template <typename T>
NodePtr<T> scalar_mul(Tape<T>& tape, const NodePtr<T>& a, T s) {
    auto out = Tape<T>::alloc(a->shape, a->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] * s;
    if (out->requires_grad)
        tape.push(out, [a, out, s]() {
            a->ensure_grad();
            for (std::int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[i] * s;
        });
    return out;
}

template <typename T>
NodePtr<T> scalar_add(Tape<T>& tape, const NodePtr<T>& a, T s) {
    auto out = Tape<T>::alloc(a->shape, a->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] + s;
    if (out->requires_grad)
        tape.push(out, [a, out]() { detail::accumulate(a, out->grad); });
    return out;
}

// ---- unary elementwise ----

template <typename T>
NodePtr<T> relu(Tape<T>& tape, const NodePtr<T>& a) {
    auto out = Tape<T>::alloc(a->shape, a->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = a->value[i] > T(0) ? a->value[i] : T(0);
    if (out->requires_grad)
        tape.push(out, [a, out]() {
            a->ensure_grad();
            for (std::int64_t i = 0; i < a->numel(); ++i)
                if (a->value[i] > T(0)) a->grad[i] += out->grad[i];
        });
    return out;
}

template <typename T>
NodePtr<T> leaky_relu(Tape<T>& tape, const NodePtr<T>& a, T alpha) {
    auto out = Tape<T>::alloc(a->shape, a->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i)
        out->value[i] = a->value[i] > T(0) ? a->value[i] : alpha * a->value[i];
    if (out->requires_grad)
        tape.push(out, [a, out, alpha]() {
            a->ensure_grad();
            for (std::int64_t i = 0; i < a->numel(); ++i)
                a->grad[i] += out->grad[i] * (a->value[i] > T(0) ? T(1) : alpha);
        });
    return out;
}

template <typename T>
NodePtr<T> tanh_op(Tape<T>& tape, const NodePtr<T>& a) {
    auto out = Tape<T>::alloc(a->shape, a->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = std::tanh(a->value[i]);
    if (out->requires_grad)
        tape.push(out, [a, out]() {
            a->ensure_grad();
            for (std::int64_t i = 0; i < a->numel(); ++i)
                a->grad[i] += out->grad[i] * (T(1) - out->value[i] * out->value[i]);
        });
    return out;
}

// subgradient 0 at the origin
template <typename T>
NodePtr<T> abs_op(Tape<T>& tape, const NodePtr<T>& a) {
    auto out = Tape<T>::alloc(a->shape, a->requires_grad);
    for (std::int64_t i = 0; i < a->numel(); ++i) out->value[i] = std::abs(a->value[i]);
    if (out->requires_grad)
        tape.push(out, [a, out]() {
            a->ensure_grad();
            for (std::int64_t i = 0; i < a->numel(); ++i) {
                T x = a->value[i];
                if (x > T(0)) a->grad[i] += out->grad[i];
                else if (x < T(0)) a->grad[i] -= out->grad[i];
            }
        });
    return out;
}

// ---- reductions ----

template <typename T>
NodePtr<T> sum(Tape<T>& tape, const NodePtr<T>& a) {
    if (a->numel() == 0) throw std::invalid_argument("sum: empty tensor");
    auto out = Tape<T>::alloc(Shape{1}, a->requires_grad);
    T acc = T(0);
    for (std::int64_t i = 0; i < a->numel(); ++i) acc += a->value[i];
    out->value[0] = acc;
    if (out->requires_grad)
        tape.push(out, [a, out]() {
            a->ensure_grad();
            for (std::int64_t i = 0; i < a->numel(); ++i) a->grad[i] += out->grad[0];
        });
    return out;
}

template <typename T>
NodePtr<T> mean(Tape<T>& tape, const NodePtr<T>& a) {
    if (a->numel() == 0) throw std::invalid_argument("mean: empty tensor");
    auto out = Tape<T>::alloc(Shape{1}, a->requires_grad);
    T acc = T(0);
    for (std::int64_t i = 0; i < a->numel(); ++i) acc += a->value[i];
    const T inv = T(1) / static_cast<T>(a->numel());
    out->value[0] = acc * inv;
    if (out->requires_grad)
        tape.push(out, [a, out, inv]() {
            a->ensure_grad();
            const T g = out->grad[0] * inv;
            for (std::int64_t i = 0; i < a->numel(); ++i) a->grad[i] += g;
        });
    return out;
}

// ---- convolution ----

enum class PadMode { Zero, Reflect };

namespace kern {

// Raw value kernels shared by conv forward/backward. Layouts are NCHW
// row-major. OpenMP-parallel over independent output slices; each output
// element is reduced serially, so results are thread-count independent.

template <typename T>
void conv_forward(const T* in, const T* w, const T* bias, T* out, std::int64_t N, std::int64_t Ci,
                  std::int64_t H, std::int64_t W, std::int64_t Co, std::int64_t kH, std::int64_t kW,
                  std::int64_t stride, std::int64_t Ho, std::int64_t Wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Co; ++co) {
            T* op = out + (n * Co + co) * Ho * Wo;
            for (std::int64_t oh = 0; oh < Ho; ++oh)
                for (std::int64_t ow = 0; ow < Wo; ++ow) {
                    T acc = bias ? bias[co] : T(0);
                    for (std::int64_t ci = 0; ci < Ci; ++ci) {
                        const T* ip = in + ((n * Ci + ci) * H + oh * stride) * W + ow * stride;
                        const T* wp = w + ((co * Ci + ci) * kH) * kW;
                        for (std::int64_t kh = 0; kh < kH; ++kh) {
                            const T* ir = ip + kh * W;
                            const T* wr = wp + kh * kW;
                            for (std::int64_t kw = 0; kw < kW; ++kw) acc += ir[kw] * wr[kw];
                        }
                    }
                    op[oh * Wo + ow] = acc;
                }
        }
}

// Adjoint of the linear part of conv_forward: scatters `g` (shape
// N,Co,Ho,Wo) back through weights into shape N,Ci,H,W. Gather form,
// parallel over (n, ci).
template <typename T>
void conv_backward_input(const T* g, const T* w, T* gin, std::int64_t N, std::int64_t Ci,
                         std::int64_t H, std::int64_t W, std::int64_t Co, std::int64_t kH,
                         std::int64_t kW, std::int64_t stride, std::int64_t Ho, std::int64_t Wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t ci = 0; ci < Ci; ++ci) {
            T* gp = gin + (n * Ci + ci) * H * W;
            for (std::int64_t ih = 0; ih < H; ++ih)
                for (std::int64_t iw = 0; iw < W; ++iw) {
                    T acc = T(0);
                    for (std::int64_t kh = 0; kh < kH; ++kh) {
                        std::int64_t t = ih - kh;
                        if (t < 0 || t % stride) continue;
                        std::int64_t oh = t / stride;
                        if (oh >= Ho) continue;
                        for (std::int64_t kw = 0; kw < kW; ++kw) {
                            std::int64_t u = iw - kw;
                            if (u < 0 || u % stride) continue;
                            std::int64_t ow = u / stride;
                            if (ow >= Wo) continue;
                            for (std::int64_t co = 0; co < Co; ++co)
                                acc += w[((co * Ci + ci) * kH + kh) * kW + kw] *
                                       g[((n * Co + co) * Ho + oh) * Wo + ow];
                        }
                    }
                    gp[ih * W + iw] += acc;
                }
        }
}

template <typename T>
void conv_backward_weight(const T* in, const T* g, T* gw, std::int64_t N, std::int64_t Ci,
                          std::int64_t H, std::int64_t W, std::int64_t Co, std::int64_t kH,
                          std::int64_t kW, std::int64_t stride, std::int64_t Ho, std::int64_t Wo) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t kh = 0; kh < kH; ++kh)
                for (std::int64_t kw = 0; kw < kW; ++kw) {
                    T acc = T(0);
                    for (std::int64_t n = 0; n < N; ++n)
                        for (std::int64_t oh = 0; oh < Ho; ++oh)
                            for (std::int64_t ow = 0; ow < Wo; ++ow)
                                acc += in[((n * Ci + ci) * H + oh * stride + kh) * W + ow * stride + kw] *
                                       g[((n * Co + co) * Ho + oh) * Wo + ow];
                    gw[((co * Ci + ci) * kH + kh) * kW + kw] += acc;
                }
}

} // namespace kern

namespace detail {

// Reflect index into [0, n) without repeating the edge sample.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

// Pads NCHW data; Zero inserts zeros, Reflect mirrors without edge repeat.
template <typename T>
std::vector<T> pad_nchw(const std::vector<T>& x, std::int64_t N, std::int64_t C, std::int64_t H,
                        std::int64_t W, std::int64_t p, PadMode mode) {
    if (p == 0) return x;
    const std::int64_t Hp = H + 2 * p, Wp = W + 2 * p;
    std::vector<T> out(static_cast<std::size_t>(N * C * Hp * Wp), T(0));
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = x.data() + nc * H * W;
        T* dst = out.data() + nc * Hp * Wp;
        for (std::int64_t i = 0; i < Hp; ++i)
            for (std::int64_t j = 0; j < Wp; ++j) {
                std::int64_t si = i - p, sj = j - p;
                if (mode == PadMode::Zero) {
                    if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                } else {
                    si = reflect_index(si, H);
                    sj = reflect_index(sj, W);
                }
                dst[i * Wp + j] = src[si * W + sj];
            }
    }
    return out;
}

// Adjoint of pad_nchw: folds padded gradient back onto the unpadded grid.
template <typename T>
void pad_adjoint_nchw(const std::vector<T>& gp, std::vector<T>& g, std::int64_t N, std::int64_t C,
                      std::int64_t H, std::int64_t W, std::int64_t p, PadMode mode) {
    if (p == 0) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gp[i];
        return;
    }
    const std::int64_t Hp = H + 2 * p, Wp = W + 2 * p;
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const T* src = gp.data() + nc * Hp * Wp;
        T* dst = g.data() + nc * H * W;
        for (std::int64_t i = 0; i < Hp; ++i)
            for (std::int64_t j = 0; j < Wp; ++j) {
                std::int64_t si = i - p, sj = j - p;
                if (mode == PadMode::Zero) {
                    if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                } else {
                    si = reflect_index(si, H);
                    sj = reflect_index(sj, W);
                }
                dst[si * W + sj] += src[i * Wp + j];
            }
    }
}

inline void check_conv_args(const Shape& in, const Shape& w, const Shape* b, std::int64_t stride,
                            std::int64_t padding, const char* op) {
    if (in.size() != 4) throw std::invalid_argument(std::string(op) + ": input must be 4-D, got " + shape_str(in));
    if (w.size() != 4) throw std::invalid_argument(std::string(op) + ": weight must be 4-D, got " + shape_str(w));
    if (b && b->size() != 1)
        throw std::invalid_argument(std::string(op) + ": bias must be 1-D, got " + shape_str(*b));
    if (stride < 1) throw std::invalid_argument(std::string(op) + ": stride must be >= 1");
    if (padding < 0) throw std::invalid_argument(std::string(op) + ": padding must be >= 0");
}

} // namespace detail

// Cross-correlation, NCHW. Output spatial size must be integral:
// Ho = (H + 2p - kH)/stride + 1.
template <typename T>
NodePtr<T> conv2d(Tape<T>& tape, const NodePtr<T>& input, const NodePtr<T>& weight,
                  const std::type_identity_t<NodePtr<T>>& bias, std::int64_t stride, std::int64_t padding,
                  PadMode mode = PadMode::Zero) {
    detail::check_conv_args(input->shape, weight->shape, bias ? &bias->shape : nullptr, stride,
                            padding, "conv2d");
    const std::int64_t N = input->shape[0], Ci = input->shape[1], H = input->shape[2], W = input->shape[3];
    const std::int64_t Co = weight->shape[0], kH = weight->shape[2], kW = weight->shape[3];
    if (weight->shape[1] != Ci)
        throw std::invalid_argument("conv2d: weight in-channel axis " + std::to_string(weight->shape[1]) +
                                    " does not match input channel axis " + std::to_string(Ci));
    if (bias && bias->shape[0] != Co)
        throw std::invalid_argument("conv2d: bias axis " + std::to_string(bias->shape[0]) +
                                    " does not match out-channel axis " + std::to_string(Co));
    const std::int64_t Hp = H + 2 * padding, Wp = W + 2 * padding;
    if (Hp < kH || Wp < kW || (Hp - kH) % stride || (Wp - kW) % stride)
        throw std::invalid_argument("conv2d: non-integral output size for input " +
                                    shape_str(input->shape) + ", kernel " + shape_str(weight->shape) +
                                    ", stride " + std::to_string(stride) + ", padding " +
                                    std::to_string(padding));
    const std::int64_t Ho = (Hp - kH) / stride + 1, Wo = (Wp - kW) / stride + 1;

    bool rg = input->requires_grad || weight->requires_grad || (bias && bias->requires_grad);
    auto out = Tape<T>::alloc(Shape{N, Co, Ho, Wo}, rg);
    auto padded = detail::pad_nchw(input->value, N, Ci, H, W, padding, mode);
    kern::conv_forward(padded.data(), weight->value.data(), bias ? bias->value.data() : nullptr,
                       out->value.data(), N, Ci, Hp, Wp, Co, kH, kW, stride, Ho, Wo);
    if (rg) {
        auto padded_keep = std::make_shared<std::vector<T>>(std::move(padded));
        tape.push(out, [input, weight, bias, out, padded_keep, N, Ci, H, W, Hp, Wp, Co, kH, kW,
                        stride, padding, mode, Ho, Wo]() {
            if (input->requires_grad) {
                input->ensure_grad();
                std::vector<T> gpad(static_cast<std::size_t>(N * Ci * Hp * Wp), T(0));
                kern::conv_backward_input(out->grad.data(), weight->value.data(), gpad.data(), N, Ci,
                                          Hp, Wp, Co, kH, kW, stride, Ho, Wo);
                detail::pad_adjoint_nchw(gpad, input->grad, N, Ci, H, W, padding, mode);
            }
            if (weight->requires_grad) {
                weight->ensure_grad();
                kern::conv_backward_weight(padded_keep->data(), out->grad.data(),
                                           weight->grad.data(), N, Ci, Hp, Wp, Co, kH, kW, stride,
                                           Ho, Wo);
            }
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        T acc = T(0);
                        const T* gp = out->grad.data() + (n * Co + co) * Ho * Wo;
                        for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
                        bias->grad[co] += acc;
                    }
            }
        });
    }
    return out;
}

// Exact adjoint of conv2d's linear part (zero padding only). Weight layout
// [Cin_of_this_op, Cout_of_this_op, kH, kW], matching the paired conv2d.
// Output spatial size: (H - 1)*stride - 2*padding + kH.
template <typename T>
NodePtr<T> conv_transpose2d(Tape<T>& tape, const NodePtr<T>& input, const NodePtr<T>& weight,
                            const std::type_identity_t<NodePtr<T>>& bias, std::int64_t stride, std::int64_t padding) {
    detail::check_conv_args(input->shape, weight->shape, bias ? &bias->shape : nullptr, stride,
                            padding, "conv_transpose2d");
    const std::int64_t N = input->shape[0], Ci = input->shape[1], h = input->shape[2], w = input->shape[3];
    const std::int64_t Co = weight->shape[1], kH = weight->shape[2], kW = weight->shape[3];
    if (weight->shape[0] != Ci)
        throw std::invalid_argument("conv_transpose2d: weight axis 0 " + std::to_string(weight->shape[0]) +
                                    " does not match input channel axis " + std::to_string(Ci));
    if (bias && bias->shape[0] != Co)
        throw std::invalid_argument("conv_transpose2d: bias axis " + std::to_string(bias->shape[0]) +
                                    " does not match out-channel axis " + std::to_string(Co));
    const std::int64_t Hp = (h - 1) * stride + kH, Wp = (w - 1) * stride + kW; // padded output
    const std::int64_t Ho = Hp - 2 * padding, Wo = Wp - 2 * padding;
    if (Ho < 1 || Wo < 1)
        throw std::invalid_argument("conv_transpose2d: output collapses to " + std::to_string(Ho) +
                                    "x" + std::to_string(Wo));

    bool rg = input->requires_grad || weight->requires_grad || (bias && bias->requires_grad);
    auto out = Tape<T>::alloc(Shape{N, Co, Ho, Wo}, rg);
    {
        std::vector<T> opad(static_cast<std::size_t>(N * Co * Hp * Wp), T(0));
        kern::conv_backward_input(input->value.data(), weight->value.data(), opad.data(), N, Co, Hp,
                                  Wp, Ci, kH, kW, stride, h, w);
        // crop padding and add bias
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t co = 0; co < Co; ++co)
                for (std::int64_t i = 0; i < Ho; ++i)
                    for (std::int64_t j = 0; j < Wo; ++j)
                        out->value[((n * Co + co) * Ho + i) * Wo + j] =
                            opad[((n * Co + co) * Hp + i + padding) * Wp + j + padding] +
                            (bias ? bias->value[co] : T(0));
    }
    if (rg) {
        tape.push(out, [input, weight, bias, out, N, Ci, h, w, Co, kH, kW, stride, padding, Hp, Wp,
                        Ho, Wo]() {
            // re-embed output grad into padded geometry
            std::vector<T> gpad(static_cast<std::size_t>(N * Co * Hp * Wp), T(0));
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t co = 0; co < Co; ++co)
                    for (std::int64_t i = 0; i < Ho; ++i)
                        for (std::int64_t j = 0; j < Wo; ++j)
                            gpad[((n * Co + co) * Hp + i + padding) * Wp + j + padding] =
                                out->grad[((n * Co + co) * Ho + i) * Wo + j];
            if (input->requires_grad) {
                input->ensure_grad();
                std::vector<T> gi(input->value.size(), T(0));
                kern::conv_forward<T>(gpad.data(), weight->value.data(), nullptr, gi.data(), N, Co,
                                      Hp, Wp, Ci, kH, kW, stride, h, w);
                for (std::size_t i = 0; i < gi.size(); ++i) input->grad[i] += gi[i];
            }
            if (weight->requires_grad) {
                weight->ensure_grad();
                kern::conv_backward_weight(gpad.data(), input->value.data(), weight->grad.data(), N,
                                           Co, Hp, Wp, Ci, kH, kW, stride, h, w);
            }
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        T acc = T(0);
                        const T* gp = out->grad.data() + (n * Co + co) * Ho * Wo;
                        for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
                        bias->grad[co] += acc;
                    }
            }
        });
    }
    return out;
}

// Per-(n, c) normalization: (x - mean) / sqrt(var + eps), biased variance.
template <typename T>
NodePtr<T> instance_norm(Tape<T>& tape, const NodePtr<T>& input, T eps) {
    if (input->shape.size() != 4)
        throw std::invalid_argument("instance_norm: input must be 4-D, got " + shape_str(input->shape));
    const std::int64_t NC = input->shape[0] * input->shape[1];
    const std::int64_t HW = input->shape[2] * input->shape[3];
    if (HW < 2) throw std::invalid_argument("instance_norm: spatial size must be >= 2");
    auto out = Tape<T>::alloc(input->shape, input->requires_grad);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(NC));
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < NC; ++s) {
        const T* x = input->value.data() + s * HW;
        T* y = out->value.data() + s * HW;
        T m = T(0);
        for (std::int64_t i = 0; i < HW; ++i) m += x[i];
        m /= static_cast<T>(HW);
        T v = T(0);
        for (std::int64_t i = 0; i < HW; ++i) v += (x[i] - m) * (x[i] - m);
        v /= static_cast<T>(HW);
        const T is = T(1) / std::sqrt(v + eps);
        (*inv_std)[s] = is;
        for (std::int64_t i = 0; i < HW; ++i) y[i] = (x[i] - m) * is;
    }
    if (out->requires_grad)
        tape.push(out, [input, out, inv_std, NC, HW]() {
            input->ensure_grad();
#pragma omp parallel for schedule(static)
            for (std::int64_t s = 0; s < NC; ++s) {
                const T* y = out->value.data() + s * HW;
                const T* g = out->grad.data() + s * HW;
                T* gx = input->grad.data() + s * HW;
                T gm = T(0), gym = T(0);
                for (std::int64_t i = 0; i < HW; ++i) {
                    gm += g[i];
                    gym += g[i] * y[i];
                }
                gm /= static_cast<T>(HW);
                gym /= static_cast<T>(HW);
                const T is = (*inv_std)[s];
                for (std::int64_t i = 0; i < HW; ++i) gx[i] += is * (g[i] - gm - y[i] * gym);
            }
        });
    return out;
}

// ---- structural ops ----

// Extract coil slice c from [C, 2, H, W] as [1, 2, H, W].
template <typename T>
NodePtr<T> select_coil(Tape<T>& tape, const NodePtr<T>& x, std::int64_t c) {
    if (x->shape.size() != 4)
        throw std::invalid_argument("select_coil: input must be 4-D, got " + shape_str(x->shape));
    if (c < 0 || c >= x->shape[0])
        throw std::invalid_argument("select_coil: coil index " + std::to_string(c) + " out of range");
    const std::int64_t block = x->shape[1] * x->shape[2] * x->shape[3];
    auto out = Tape<T>::alloc(Shape{1, x->shape[1], x->shape[2], x->shape[3]}, x->requires_grad);
    std::copy_n(x->value.data() + c * block, block, out->value.data());
    if (out->requires_grad)
        tape.push(out, [x, out, c, block]() {
            x->ensure_grad();
            for (std::int64_t i = 0; i < block; ++i) x->grad[c * block + i] += out->grad[i];
        });
    return out;
}

// |z| per pixel over a [C, 2, H, W] real/imag stack -> [C, H, W].
// Subgradient 0 at z = 0.
template <typename T>
NodePtr<T> complex_abs(Tape<T>& tape, const NodePtr<T>& x) {
    if (x->shape.size() != 4 || x->shape[1] != 2)
        throw std::invalid_argument("complex_abs: expected [C,2,H,W], got " + shape_str(x->shape));
    const std::int64_t C = x->shape[0], HW = x->shape[2] * x->shape[3];
    auto out = Tape<T>::alloc(Shape{C, x->shape[2], x->shape[3]}, x->requires_grad);
    for (std::int64_t c = 0; c < C; ++c) {
        const T* re = x->value.data() + (c * 2 + 0) * HW;
        const T* im = x->value.data() + (c * 2 + 1) * HW;
        T* y = out->value.data() + c * HW;
        for (std::int64_t i = 0; i < HW; ++i) y[i] = std::sqrt(re[i] * re[i] + im[i] * im[i]);
    }
    if (out->requires_grad)
        tape.push(out, [x, out, C, HW]() {
            x->ensure_grad();
            for (std::int64_t c = 0; c < C; ++c) {
                const T* re = x->value.data() + (c * 2 + 0) * HW;
                const T* im = x->value.data() + (c * 2 + 1) * HW;
                const T* y = out->value.data() + c * HW;
                const T* g = out->grad.data() + c * HW;
                T* gre = x->grad.data() + (c * 2 + 0) * HW;
                T* gim = x->grad.data() + (c * 2 + 1) * HW;
                for (std::int64_t i = 0; i < HW; ++i) {
                    if (y[i] > T(0)) {
                        gre[i] += g[i] * re[i] / y[i];
                        gim[i] += g[i] * im[i] / y[i];
                    }
                }
            }
        });
    return out;
}

// ---- ADAM ----

template <typename T>
struct AdamState {
    T beta1 = T(0.5);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::int64_t t = 0;
    std::vector<std::vector<T>> m, v;

    void init(const std::vector<NodePtr<T>>& params) {
        m.clear();
        v.clear();
        for (auto& p : params) {
            m.emplace_back(p->value.size(), T(0));
            v.emplace_back(p->value.size(), T(0));
        }
        t = 0;
    }
};

template <typename T>
void adam_step(const std::vector<NodePtr<T>>& params, AdamState<T>& st, T lr) {
    if (st.m.size() != params.size())
        throw std::invalid_argument("adam_step: state holds " + std::to_string(st.m.size()) +
                                    " moment buffers for " + std::to_string(params.size()) + " params");
    st.t += 1;
    const T bc1 = T(1) - std::pow(st.beta1, static_cast<T>(st.t));
    const T bc2 = T(1) - std::pow(st.beta2, static_cast<T>(st.t));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        if (st.m[pi].size() != p->value.size())
            throw std::invalid_argument("adam_step: moment shape mismatch for parameter '" + p->name + "'");
        p->ensure_grad();
        auto& m = st.m[pi];
        auto& v = st.v[pi];
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T g = p->grad[i];
            if (!std::isfinite(g))
                throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p->name + "'");
            m[i] = st.beta1 * m[i] + (T(1) - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (T(1) - st.beta2) * g * g;
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

} // namespace ssmri::ad
