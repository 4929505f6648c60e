#pragma once

// Minimal reverse-mode autodiff tensor engine. Dense row-major tensors,
// dynamic tape built through shared_ptr parent links, scalar backward.
// Matrix kernels are delegated to Eigen; everything else is plain loops.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tritransnet/common.hpp"

namespace ttn {

// Thread-local toggle: when disabled, ops do not record the tape.
struct GradMode {
    static bool& enabled() {
        thread_local bool on = true;
        return on;
    }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
    ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    bool leaf() const { return parents.empty(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <typename T>
class Tensor {
  public:
    std::shared_ptr<Node<T>> node;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node(std::move(n)) {}

    static Tensor from(Shape shape, std::vector<T> data) {
        if (shape_numel(shape) != (long)data.size())
            throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                             std::to_string(data.size()) + " elements");
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(n);
    }
    static Tensor full(const Shape& shape, T v) {
        return from(shape, std::vector<T>(shape_numel(shape), v));
    }
    static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }
    static Tensor ones(const Shape& shape) { return full(shape, T(1)); }
    static Tensor scalar(T v) { return from({1}, {v}); }
    static Tensor randn(Rng& rng, const Shape& shape, T stddev) {
        std::normal_distribution<double> d(0.0, 1.0);
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = T(d(rng)) * stddev;
        return from(shape, std::move(v));
    }

    bool defined() const { return node != nullptr; }
    const Shape& shape() const { return node->shape; }
    long rank() const { return (long)node->shape.size(); }
    long dim(long i) const { return node->shape[i]; }
    long size() const { return (long)node->data.size(); }
    T* data() { return node->data.data(); }
    const T* data() const { return node->data.data(); }
    std::vector<T>& vec() { return node->data; }
    const std::vector<T>& vec() const { return node->data; }
    std::vector<T>& grad() {
        node->ensure_grad();
        return node->grad;
    }
    bool requires_grad() const { return node->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node->requires_grad = b;
        return *this;
    }
    void zero_grad() {
        if (!node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), T(0));
    }

    T item() const {
        if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
        return node->data[0];
    }
    T at(std::initializer_list<long> idx) const {
        long off = 0;
        long d = 0;
        for (long i : idx) off = off * node->shape[d++] + i;
        return node->data[off];
    }

    // Value copy detached from the tape.
    Tensor detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = node->shape;
        n->data = node->data;
        return Tensor(n);
    }

    void backward() const;
};

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> bw) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool need = false;
    if (GradMode::enabled())
        for (const auto& in : inputs)
            if (in.node->requires_grad) need = true;
    if (need) {
        n->requires_grad = true;
        for (const auto& in : inputs) n->parents.push_back(in.node);
        n->backward = std::move(bw);
    }
    return Tensor<T>(n);
}

template <typename T>
void Tensor<T>::backward() const {
    if (size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(shape()));
    // Iterative post-order topological sort.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(node.get(), 0);
    seen.insert(node.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    // Non-leaf grads are scratch for this pass; leaf grads accumulate across calls.
    for (Node<T>* n : order)
        if (!n->leaf()) n->grad.assign(n->data.size(), T(0));
    node->ensure_grad();
    node->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Broadcasting machinery (NumPy trailing-dim rules).

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (size_t i = 0; i < r; ++i) {
        long ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        long eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                             shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

inline std::vector<long> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<long> ist(in.size());
    long s = 1;
    for (long i = (long)in.size() - 1; i >= 0; --i) {
        ist[i] = s;
        s *= in[i];
    }
    std::vector<long> st(out.size(), 0);
    size_t off = out.size() - in.size();
    for (size_t d = 0; d < in.size(); ++d)
        st[off + d] = (in[d] == 1 && out[off + d] != 1) ? 0 : ist[d];
    return st;
}

// Calls fn(flat_out, off_a, off_b) for every element of `out`.
template <class Fn>
inline void bcast_foreach(const Shape& out, const std::vector<long>& sta,
                          const std::vector<long>& stb, Fn&& fn) {
    long n = shape_numel(out);
    long r = (long)out.size();
    std::vector<long> idx(r, 0);
    long offa = 0, offb = 0;
    for (long o = 0; o < n; ++o) {
        fn(o, offa, offb);
        for (long d = r - 1; d >= 0; --d) {
            ++idx[d];
            offa += sta[d];
            offb += stb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            offa -= sta[d] * out[d];
            offb -= stb[d] * out[d];
        }
    }
}

template <typename T, class Fwd, class GradA, class GradB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd f, GradA ga,
                    GradB gb) {
    Shape os = broadcast_shape(a.shape(), b.shape(), name);
    auto sta = bcast_strides(a.shape(), os);
    auto stb = bcast_strides(b.shape(), os);
    std::vector<T> out((size_t)shape_numel(os));
    const T* av = a.data();
    const T* bv = b.data();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    } else {
        bcast_foreach(os, sta, stb, [&](long o, long oa, long ob) { out[o] = f(av[oa], bv[ob]); });
    }
    auto an = a.node;
    auto bn = b.node;
    return make_op<T>(os, std::move(out), {a, b}, [an, bn, sta, stb, ga, gb](Node<T>& self) {
        const T* av = an->data.data();
        const T* bv = bn->data.data();
        const T* ov = self.data.data();
        const T* go = self.grad.data();
        bool na = an->requires_grad, nb = bn->requires_grad;
        if (na) an->ensure_grad();
        if (nb) bn->ensure_grad();
        bcast_foreach(self.shape, sta, stb, [&](long o, long oa, long ob) {
            if (na) an->grad[oa] += go[o] * ga(av[oa], bv[ob], ov[o]);
            if (nb) bn->grad[ob] += go[o] * gb(av[oa], bv[ob], ov[o]);
        });
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(1); });
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
        [](T, T, T) { return T(-1); });
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
        [](T x, T, T) { return x; });
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
        [](T x, T y, T) { return -x / (y * y); });
}

template <typename T, class Fwd, class Grad>
Tensor<T> unary_op(const Tensor<T>& a, Fwd f, Grad g) {
    std::vector<T> out(a.vec().size());
    const T* av = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    auto an = a.node;
    return make_op<T>(a.shape(), std::move(out), {a}, [an, g](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T* av = an->data.data();
        const T* ov = self.data.data();
        const T* go = self.grad.data();
        for (size_t i = 0; i < self.data.size(); ++i) an->grad[i] += go[i] * g(av[i], ov[i]);
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op(
        a,
        [](T x) {
            return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                             : std::exp(x) / (T(1) + std::exp(x));
        },
        [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x / T(M_SQRT2))); },
        [](T x, T) {
            T phi = std::exp(-x * x / T(2)) / T(std::sqrt(2.0 * M_PI));
            return T(0.5) * (T(1) + std::erf(x / T(M_SQRT2))) + x * phi;
        });
}
template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
        [](T x, T) {
            return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        });
}
template <typename T>
Tensor<T> abs_val(const Tensor<T>& a) {
    return unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return unary_op(
        a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}
template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return mul_scalar(a, T(-1));
}

// ---------------------------------------------------------------------------
// Shape ops.

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto an = a.node;
    return make_op<T>(std::move(shape), std::vector<T>(a.vec()), {a}, [an](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<long>& perm) {
    long r = a.rank();
    if ((long)perm.size() != r) throw ShapeError("permute: rank mismatch");
    Shape os(r);
    for (long i = 0; i < r; ++i) os[i] = a.dim(perm[i]);
    // in-strides observed through the permutation
    std::vector<long> ist(r);
    long s = 1;
    for (long i = r - 1; i >= 0; --i) {
        ist[i] = s;
        s *= a.dim(i);
    }
    std::vector<long> pst(r);
    for (long i = 0; i < r; ++i) pst[i] = ist[perm[i]];
    std::vector<long> zero(r, 0);
    std::vector<T> out((size_t)a.size());
    const T* av = a.data();
    bcast_foreach(os, pst, zero, [&](long o, long oa, long) { out[o] = av[oa]; });
    auto an = a.node;
    return make_op<T>(os, std::move(out), {a}, [an, pst, zero](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T* go = self.grad.data();
        bcast_foreach(self.shape, pst, zero,
                      [&](long o, long oa, long) { an->grad[oa] += go[o]; });
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, long axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    long r = xs[0].rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: bad axis");
    Shape os = xs[0].shape();
    long total = 0;
    for (const auto& x : xs) {
        if (x.rank() != r) throw ShapeError("concat: rank mismatch");
        for (long d = 0; d < r; ++d)
            if (d != axis && x.dim(d) != os[d])
                throw ShapeError("concat: shape mismatch " + shape_str(x.shape()) + " vs " +
                                 shape_str(os));
        total += x.dim(axis);
    }
    os[axis] = total;
    long outer = 1, inner = 1;
    for (long d = 0; d < axis; ++d) outer *= os[d];
    for (long d = axis + 1; d < r; ++d) inner *= os[d];
    std::vector<T> out((size_t)shape_numel(os));
    std::vector<long> extents;
    long pos = 0;
    for (const auto& x : xs) {
        long e = x.dim(axis);
        extents.push_back(e);
        const T* xv = x.data();
        for (long o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total + pos) * inner, xv + o * e * inner,
                        sizeof(T) * (size_t)(e * inner));
        pos += e;
    }
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& x : xs) nodes.push_back(x.node);
    return make_op<T>(os, std::move(out), xs,
                      [nodes, extents, outer, inner, total](Node<T>& self) {
                          const T* go = self.grad.data();
                          long pos = 0;
                          for (size_t i = 0; i < nodes.size(); ++i) {
                              long e = extents[i];
                              if (nodes[i]->requires_grad) {
                                  nodes[i]->ensure_grad();
                                  T* g = nodes[i]->grad.data();
                                  for (long o = 0; o < outer; ++o) {
                                      const T* src = go + (o * total + pos) * inner;
                                      T* dst = g + o * e * inner;
                                      for (long j = 0; j < e * inner; ++j) dst[j] += src[j];
                                  }
                              }
                              pos += e;
                          }
                      });
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = 0;
    for (T v : a.vec()) s += v;
    auto an = a.node;
    return make_op<T>({1}, {s}, {a}, [an](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        T g = self.grad[0];
        for (auto& x : an->grad) x += g;
    });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
    return mul_scalar(sum_all(a), T(1) / T(a.size()));
}

// [B, ...] -> [B], summing everything but the leading axis.
template <typename T>
Tensor<T> sum_per_image(const Tensor<T>& a) {
    long b = a.dim(0);
    long inner = a.size() / b;
    std::vector<T> out((size_t)b, T(0));
    const T* av = a.data();
    for (long i = 0; i < b; ++i)
        for (long j = 0; j < inner; ++j) out[i] += av[i * inner + j];
    auto an = a.node;
    return make_op<T>({b}, std::move(out), {a}, [an, b, inner](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (long i = 0; i < b; ++i) {
            T g = self.grad[i];
            T* dst = an->grad.data() + i * inner;
            for (long j = 0; j < inner; ++j) dst[j] += g;
        }
    });
}

// Mean over the channel axis of [B,C,H,W], keepdim -> [B,1,H,W].
template <typename T>
Tensor<T> mean_channels(const Tensor<T>& a) {
    long b = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::vector<T> out((size_t)(b * hw), T(0));
    const T* av = a.data();
    for (long i = 0; i < b; ++i)
        for (long ch = 0; ch < c; ++ch)
            for (long j = 0; j < hw; ++j) out[i * hw + j] += av[(i * c + ch) * hw + j];
    for (auto& v : out) v /= T(c);
    auto an = a.node;
    return make_op<T>({b, 1, a.dim(2), a.dim(3)}, std::move(out), {a},
                      [an, b, c, hw](Node<T>& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          const T* go = self.grad.data();
                          for (long i = 0; i < b; ++i)
                              for (long ch = 0; ch < c; ++ch)
                                  for (long j = 0; j < hw; ++j)
                                      an->grad[(i * c + ch) * hw + j] += go[i * hw + j] / T(c);
                      });
}

// Max over the channel axis of [B,C,H,W] -> [B,1,H,W]; ties to the lowest channel.
template <typename T>
Tensor<T> max_channels(const Tensor<T>& a) {
    long b = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    std::vector<T> out((size_t)(b * hw));
    std::vector<long> arg((size_t)(b * hw));
    const T* av = a.data();
    for (long i = 0; i < b; ++i)
        for (long j = 0; j < hw; ++j) {
            T best = av[i * c * hw + j];
            long bc = 0;
            for (long ch = 1; ch < c; ++ch) {
                T v = av[(i * c + ch) * hw + j];
                if (v > best) {
                    best = v;
                    bc = ch;
                }
            }
            out[i * hw + j] = best;
            arg[i * hw + j] = (i * c + bc) * hw + j;
        }
    auto an = a.node;
    return make_op<T>({b, 1, a.dim(2), a.dim(3)}, std::move(out), {a},
                      [an, arg](Node<T>& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (size_t i = 0; i < arg.size(); ++i)
                              an->grad[arg[i]] += self.grad[i];
                      });
}

// ---------------------------------------------------------------------------
// Matrix multiply: rank-2, or batched with identical leading dims.

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    long r = a.rank();
    if (r < 2 || b.rank() != r) throw ShapeError("matmul: need equal ranks >= 2");
    for (long d = 0; d < r - 2; ++d)
        if (a.dim(d) != b.dim(d))
            throw ShapeError("matmul: batch mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    long m = a.dim(r - 2), k = a.dim(r - 1), k2 = b.dim(r - 2), n = b.dim(r - 1);
    if (k != k2)
        throw ShapeError("matmul: inner mismatch " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    long batch = a.size() / (m * k);
    Shape os(a.shape());
    os[r - 2] = m;
    os[r - 1] = n;
    std::vector<T> out((size_t)(batch * m * n));
    for (long i = 0; i < batch; ++i) {
        Eigen::Map<const MatRM<T>> A(a.data() + i * m * k, m, k);
        Eigen::Map<const MatRM<T>> B(b.data() + i * k * n, k, n);
        Eigen::Map<MatRM<T>> C(out.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    auto an = a.node;
    auto bn = b.node;
    return make_op<T>(os, std::move(out), {a, b}, [an, bn, batch, m, k, n](Node<T>& self) {
        const T* go = self.grad.data();
        if (an->requires_grad) an->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (long i = 0; i < batch; ++i) {
            Eigen::Map<const MatRM<T>> A(an->data.data() + i * m * k, m, k);
            Eigen::Map<const MatRM<T>> B(bn->data.data() + i * k * n, k, n);
            Eigen::Map<const MatRM<T>> G(go + i * m * n, m, n);
            if (an->requires_grad) {
                Eigen::Map<MatRM<T>> GA(an->grad.data() + i * m * k, m, k);
                GA.noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                Eigen::Map<MatRM<T>> GB(bn->grad.data() + i * k * n, k, n);
                GB.noalias() += A.transpose() * G;
            }
        }
    });
}

// x[..., in] * w[in, out] + b[out]; composed from recorded primitives.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    long in = w.dim(0), out = w.dim(1);
    if (x.dim(x.rank() - 1) != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
    long m = x.size() / in;
    Tensor<T> y = matmul(reshape(x, {m, in}), w);
    if (b.defined()) y = add(y, reshape(b, {1, out}));
    Shape os = x.shape();
    os.back() = out;
    return reshape(y, os);
}

// ---------------------------------------------------------------------------
// 2-D convolution via im2col + GEMM.
// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], optional b: [Cout].

template <typename T>
inline void im2col(const T* x, long cin, long h, long w, long kh, long kw, long stride, long pad,
                   long ho, long wo, MatRM<T>& col) {
    for (long c = 0; c < cin; ++c)
        for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
                long row = (c * kh + ky) * kw + kx;
                for (long oy = 0; oy < ho; ++oy) {
                    long iy = oy * stride - pad + ky;
                    for (long ox = 0; ox < wo; ++ox) {
                        long ix = ox * stride - pad + kx;
                        col(row, oy * wo + ox) =
                            (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(c * h + iy) * w + ix]
                                                                     : T(0);
                    }
                }
            }
}

template <typename T>
inline void col2im_acc(const MatRM<T>& col, long cin, long h, long w, long kh, long kw,
                       long stride, long pad, long ho, long wo, T* gx) {
    for (long c = 0; c < cin; ++c)
        for (long ky = 0; ky < kh; ++ky)
            for (long kx = 0; kx < kw; ++kx) {
                long row = (c * kh + ky) * kw + kx;
                for (long oy = 0; oy < ho; ++oy) {
                    long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (long ox = 0; ox < wo; ++ox) {
                        long ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        gx[(c * h + iy) * w + ix] += col(row, oy * wo + ox);
                    }
                }
            }
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, long stride,
                 long pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: need 4-D input and weight, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    long bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    long cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin)
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    long ho = (h + 2 * pad - kh) / stride + 1;
    long wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " too large for input " +
                         shape_str(x.shape()));
    long K = cin * kh * kw, P = ho * wo;
    std::vector<T> out((size_t)(bsz * cout * P));
    {
        MatRM<T> col(K, P);
        Eigen::Map<const MatRM<T>> W(w.data(), cout, K);
        for (long i = 0; i < bsz; ++i) {
            im2col(x.data() + i * cin * h * wd, cin, h, wd, kh, kw, stride, pad, ho, wo, col);
            Eigen::Map<MatRM<T>> O(out.data() + i * cout * P, cout, P);
            O.noalias() = W * col;
        }
    }
    if (b.defined()) {
        if (b.size() != cout) throw ShapeError("conv2d: bias " + shape_str(b.shape()));
        const T* bv = b.data();
        for (long i = 0; i < bsz; ++i)
            for (long c = 0; c < cout; ++c) {
                T* dst = out.data() + (i * cout + c) * P;
                for (long j = 0; j < P; ++j) dst[j] += bv[c];
            }
    }
    auto xn = x.node;
    auto wn = w.node;
    auto bn = b.defined() ? b.node : nullptr;
    std::vector<Tensor<T>> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    return make_op<T>({bsz, cout, ho, wo}, std::move(out), std::move(inputs),
                      [=](Node<T>& self) {
                          const T* go = self.grad.data();
                          if (xn->requires_grad) xn->ensure_grad();
                          if (wn->requires_grad) wn->ensure_grad();
                          MatRM<T> col(K, P);
                          Eigen::Map<const MatRM<T>> W(wn->data.data(), cout, K);
                          for (long i = 0; i < bsz; ++i) {
                              Eigen::Map<const MatRM<T>> G(go + i * cout * P, cout, P);
                              if (xn->requires_grad || wn->requires_grad)
                                  im2col(xn->data.data() + i * cin * h * wd, cin, h, wd, kh, kw,
                                         stride, pad, ho, wo, col);
                              if (wn->requires_grad) {
                                  Eigen::Map<MatRM<T>> GW(wn->grad.data(), cout, K);
                                  GW.noalias() += G * col.transpose();
                              }
                              if (xn->requires_grad) {
                                  MatRM<T> gcol = W.transpose() * G;
                                  col2im_acc(gcol, cin, h, wd, kh, kw, stride, pad, ho, wo,
                                             xn->grad.data() + i * cin * h * wd);
                              }
                          }
                          if (bn && bn->requires_grad) {
                              bn->ensure_grad();
                              for (long i = 0; i < bsz; ++i)
                                  for (long c = 0; c < cout; ++c) {
                                      const T* g = go + (i * cout + c) * P;
                                      T s = 0;
                                      for (long j = 0; j < P; ++j) s += g[j];
                                      bn->grad[c] += s;
                                  }
                          }
                      });
}

// ---------------------------------------------------------------------------
// Softmax over the last axis.

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& a) {
    long n = a.dim(a.rank() - 1);
    long rows = a.size() / n;
    std::vector<T> out((size_t)a.size());
    const T* av = a.data();
    for (long r = 0; r < rows; ++r) {
        const T* x = av + r * n;
        T* y = out.data() + r * n;
        T mx = x[0];
        for (long i = 1; i < n; ++i) mx = std::max(mx, x[i]);
        T s = 0;
        for (long i = 0; i < n; ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        for (long i = 0; i < n; ++i) y[i] /= s;
    }
    auto an = a.node;
    return make_op<T>(a.shape(), std::move(out), {a}, [an, rows, n](Node<T>& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        const T* y = self.data.data();
        const T* go = self.grad.data();
        for (long r = 0; r < rows; ++r) {
            const T* yr = y + r * n;
            const T* gr = go + r * n;
            T dot = 0;
            for (long i = 0; i < n; ++i) dot += gr[i] * yr[i];
            T* dst = an->grad.data() + r * n;
            for (long i = 0; i < n; ++i) dst[i] += yr[i] * (gr[i] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis with learnable scale/shift.

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6)) {
    long n = x.dim(x.rank() - 1);
    if (gamma.size() != n || beta.size() != n)
        throw ShapeError("layer_norm: scale/shift size must match last axis " +
                         std::to_string(n));
    long rows = x.size() / n;
    std::vector<T> out((size_t)x.size());
    const T* xv = x.data();
    const T* gv = gamma.data();
    const T* bv = beta.data();
    for (long r = 0; r < rows; ++r) {
        const T* xr = xv + r * n;
        T mu = 0;
        for (long i = 0; i < n; ++i) mu += xr[i];
        mu /= T(n);
        T var = 0;
        for (long i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= T(n);
        T inv = T(1) / std::sqrt(var + eps);
        T* yr = out.data() + r * n;
        for (long i = 0; i < n; ++i) yr[i] = (xr[i] - mu) * inv * gv[i] + bv[i];
    }
    auto xn = x.node;
    auto gn = gamma.node;
    auto bn = beta.node;
    return make_op<T>(x.shape(), std::move(out), {x, gamma, beta},
                      [xn, gn, bn, rows, n, eps](Node<T>& self) {
                          const T* xv = xn->data.data();
                          const T* gv = gn->data.data();
                          const T* go = self.grad.data();
                          if (xn->requires_grad) xn->ensure_grad();
                          if (gn->requires_grad) gn->ensure_grad();
                          if (bn->requires_grad) bn->ensure_grad();
                          std::vector<T> xhat((size_t)n), dxh((size_t)n);
                          for (long r = 0; r < rows; ++r) {
                              const T* xr = xv + r * n;
                              const T* gr = go + r * n;
                              T mu = 0;
                              for (long i = 0; i < n; ++i) mu += xr[i];
                              mu /= T(n);
                              T var = 0;
                              for (long i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
                              var /= T(n);
                              T inv = T(1) / std::sqrt(var + eps);
                              for (long i = 0; i < n; ++i) xhat[i] = (xr[i] - mu) * inv;
                              if (gn->requires_grad)
                                  for (long i = 0; i < n; ++i) gn->grad[i] += gr[i] * xhat[i];
                              if (bn->requires_grad)
                                  for (long i = 0; i < n; ++i) bn->grad[i] += gr[i];
                              if (xn->requires_grad) {
                                  T m1 = 0, m2 = 0;
                                  for (long i = 0; i < n; ++i) {
                                      dxh[i] = gr[i] * gv[i];
                                      m1 += dxh[i];
                                      m2 += dxh[i] * xhat[i];
                                  }
                                  m1 /= T(n);
                                  m2 /= T(n);
                                  T* dst = xn->grad.data() + r * n;
                                  for (long i = 0; i < n; ++i)
                                      dst[i] += inv * (dxh[i] - m1 - xhat[i] * m2);
                              }
                          }
                      });
}

// ---------------------------------------------------------------------------
// Bilinear resize, align-corners=false. Constant maps stay constant.

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, long ho, long wo) {
    if (x.rank() != 4) throw ShapeError("resize_bilinear: need [B,C,H,W]");
    long b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    struct Lerp {
        long i0, i1;
        T f;
    };
    auto make = [](long in, long out) {
        std::vector<Lerp> v((size_t)out);
        T scale = T(in) / T(out);
        for (long o = 0; o < out; ++o) {
            T s = (T(o) + T(0.5)) * scale - T(0.5);
            if (s < 0) s = 0;
            long i0 = (long)s;
            if (i0 > in - 1) i0 = in - 1;
            long i1 = std::min(i0 + 1, in - 1);
            v[o] = {i0, i1, s - T(i0)};
        }
        return v;
    };
    auto ly = make(h, ho), lx = make(w, wo);
    std::vector<T> out((size_t)(b * c * ho * wo));
    const T* xv = x.data();
    for (long i = 0; i < b * c; ++i) {
        const T* src = xv + i * h * w;
        T* dst = out.data() + i * ho * wo;
        for (long oy = 0; oy < ho; ++oy) {
            const Lerp& Y = ly[oy];
            for (long ox = 0; ox < wo; ++ox) {
                const Lerp& X = lx[ox];
                T top = src[Y.i0 * w + X.i0] * (T(1) - X.f) + src[Y.i0 * w + X.i1] * X.f;
                T bot = src[Y.i1 * w + X.i0] * (T(1) - X.f) + src[Y.i1 * w + X.i1] * X.f;
                dst[oy * wo + ox] = top * (T(1) - Y.f) + bot * Y.f;
            }
        }
    }
    auto xn = x.node;
    return make_op<T>({b, c, ho, wo}, std::move(out), {x},
                      [xn, ly, lx, b, c, h, w, ho, wo](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          const T* go = self.grad.data();
                          for (long i = 0; i < b * c; ++i) {
                              T* gx = xn->grad.data() + i * h * w;
                              const T* g = go + i * ho * wo;
                              for (long oy = 0; oy < ho; ++oy) {
                                  const auto& Y = ly[oy];
                                  for (long ox = 0; ox < wo; ++ox) {
                                      const auto& X = lx[ox];
                                      T v = g[oy * wo + ox];
                                      gx[Y.i0 * w + X.i0] += v * (T(1) - Y.f) * (T(1) - X.f);
                                      gx[Y.i0 * w + X.i1] += v * (T(1) - Y.f) * X.f;
                                      gx[Y.i1 * w + X.i0] += v * Y.f * (T(1) - X.f);
                                      gx[Y.i1 * w + X.i1] += v * Y.f * X.f;
                                  }
                              }
                          }
                      });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
    return resize_bilinear(x, x.dim(2) * 2, x.dim(3) * 2);
}

// ---------------------------------------------------------------------------
// Pooling.

// Max pooling; ties resolved toward the first element in row-major window order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, long k, long stride) {
    long b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    long ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("max_pool2d: window too large");
    std::vector<T> out((size_t)(b * c * ho * wo));
    std::vector<long> arg(out.size());
    const T* xv = x.data();
    for (long i = 0; i < b * c; ++i) {
        const T* src = xv + i * h * w;
        for (long oy = 0; oy < ho; ++oy)
            for (long ox = 0; ox < wo; ++ox) {
                T best = src[oy * stride * w + ox * stride];
                long bi = oy * stride * w + ox * stride;
                for (long ky = 0; ky < k; ++ky)
                    for (long kx = 0; kx < k; ++kx) {
                        long idx = (oy * stride + ky) * w + ox * stride + kx;
                        if (src[idx] > best) {
                            best = src[idx];
                            bi = idx;
                        }
                    }
                out[(i * ho + oy) * wo + ox] = best;
                arg[(i * ho + oy) * wo + ox] = i * h * w + bi;
            }
    }
    auto xn = x.node;
    return make_op<T>({b, c, ho, wo}, std::move(out), {x}, [xn, arg](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < arg.size(); ++i) xn->grad[arg[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, long k, long stride) {
    long b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    long ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw ShapeError("avg_pool2d: window too large");
    std::vector<T> out((size_t)(b * c * ho * wo), T(0));
    const T* xv = x.data();
    T inv = T(1) / T(k * k);
    for (long i = 0; i < b * c; ++i) {
        const T* src = xv + i * h * w;
        for (long oy = 0; oy < ho; ++oy)
            for (long ox = 0; ox < wo; ++ox) {
                T s = 0;
                for (long ky = 0; ky < k; ++ky)
                    for (long kx = 0; kx < k; ++kx)
                        s += src[(oy * stride + ky) * w + ox * stride + kx];
                out[(i * ho + oy) * wo + ox] = s * inv;
            }
    }
    auto xn = x.node;
    return make_op<T>({b, c, ho, wo}, std::move(out), {x},
                      [xn, b, c, h, w, ho, wo, k, stride, inv](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          const T* go = self.grad.data();
                          for (long i = 0; i < b * c; ++i) {
                              T* gx = xn->grad.data() + i * h * w;
                              for (long oy = 0; oy < ho; ++oy)
                                  for (long ox = 0; ox < wo; ++ox) {
                                      T g = go[(i * ho + oy) * wo + ox] * inv;
                                      for (long ky = 0; ky < k; ++ky)
                                          for (long kx = 0; kx < k; ++kx)
                                              gx[(oy * stride + ky) * w + ox * stride + kx] += g;
                                  }
                          }
                      });
}

// Stride-1 mean pooling with zero same-padding; zeros count in the divisor.
template <typename T>
Tensor<T> avg_pool_same(const Tensor<T>& x, long window) {
    if (window % 2 == 0) throw ShapeError("avg_pool_same: window must be odd");
    long b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    long pad = window / 2;
    T inv = T(1) / T(window * window);
    std::vector<T> out((size_t)x.size(), T(0));
    const T* xv = x.data();
    for (long i = 0; i < b * c; ++i) {
        const T* src = xv + i * h * w;
        T* dst = out.data() + i * h * w;
        for (long oy = 0; oy < h; ++oy)
            for (long ox = 0; ox < w; ++ox) {
                T s = 0;
                long y0 = std::max(oy - pad, 0L), y1 = std::min(oy + pad, h - 1);
                long x0 = std::max(ox - pad, 0L), x1 = std::min(ox + pad, w - 1);
                for (long iy = y0; iy <= y1; ++iy)
                    for (long ix = x0; ix <= x1; ++ix) s += src[iy * w + ix];
                dst[oy * w + ox] = s * inv;
            }
    }
    auto xn = x.node;
    return make_op<T>(x.shape(), std::move(out), {x},
                      [xn, b, c, h, w, pad, inv](Node<T>& self) {
                          if (!xn->requires_grad) return;
                          xn->ensure_grad();
                          const T* go = self.grad.data();
                          for (long i = 0; i < b * c; ++i) {
                              T* gx = xn->grad.data() + i * h * w;
                              const T* g = go + i * h * w;
                              for (long oy = 0; oy < h; ++oy)
                                  for (long ox = 0; ox < w; ++ox) {
                                      T v = g[oy * w + ox] * inv;
                                      long y0 = std::max(oy - pad, 0L),
                                           y1 = std::min(oy + pad, h - 1);
                                      long x0 = std::max(ox - pad, 0L),
                                           x1 = std::min(ox + pad, w - 1);
                                      for (long iy = y0; iy <= y1; ++iy)
                                          for (long ix = x0; ix <= x1; ++ix)
                                              gx[iy * w + ix] += v;
                                  }
                          }
                      });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    long b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out((size_t)(b * c), T(0));
    const T* xv = x.data();
    for (long i = 0; i < b * c; ++i) {
        T s = 0;
        for (long j = 0; j < hw; ++j) s += xv[i * hw + j];
        out[i] = s / T(hw);
    }
    auto xn = x.node;
    return make_op<T>({b, c, 1, 1}, std::move(out), {x}, [xn, hw](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            T g = self.grad[i] / T(hw);
            T* dst = xn->grad.data() + i * hw;
            for (long j = 0; j < hw; ++j) dst[j] += g;
        }
    });
}

template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
    long b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out((size_t)(b * c));
    std::vector<long> arg((size_t)(b * c));
    const T* xv = x.data();
    for (long i = 0; i < b * c; ++i) {
        T best = xv[i * hw];
        long bi = 0;
        for (long j = 1; j < hw; ++j)
            if (xv[i * hw + j] > best) {
                best = xv[i * hw + j];
                bi = j;
            }
        out[i] = best;
        arg[i] = i * hw + bi;
    }
    auto xn = x.node;
    return make_op<T>({b, c, 1, 1}, std::move(out), {x}, [xn, arg](Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < arg.size(); ++i) xn->grad[arg[i]] += self.grad[i];
    });
}

template <typename T>
inline bool all_finite(const Tensor<T>& x) {
    for (T v : x.vec())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace ttn
