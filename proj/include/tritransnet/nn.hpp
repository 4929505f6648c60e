#pragma once

// Parameterized building blocks on top of the tensor engine.

#include <string>
#include <utility>
#include <vector>

#include "tritransnet/tensor.hpp"

namespace ttn {

template <typename T>
struct ParamList {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) { items.emplace_back(name, t); }
    long count() const {
        long n = 0;
        for (const auto& [k, t] : items) n += t.size();
        return n;
    }
    void zero_grad() {
        for (auto& [k, t] : items) const_cast<Tensor<T>&>(t).zero_grad();
    }
};

// 3x3-style convolution block; fan-in scaled normal init, zero bias.
template <typename T>
struct Conv2d {
    Tensor<T> w, b;
    long stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(Rng& rng, long cin, long cout, long k, long stride_, long pad_, bool bias = true)
        : stride(stride_), pad(pad_) {
        T std_dev = std::sqrt(T(2) / T(cin * k * k));
        w = Tensor<T>::randn(rng, {cout, cin, k, k}, std_dev).set_requires_grad(true);
        if (bias) b = Tensor<T>::zeros({cout}).set_requires_grad(true);
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, w, b, stride, pad); }
    void params(ParamList<T>& p, const std::string& prefix) const {
        p.add(prefix + ".w", w);
        if (b.defined()) p.add(prefix + ".b", b);
    }
};

template <typename T>
struct Linear {
    Tensor<T> w, b;

    Linear() = default;
    // kind: 'f' fan-in scaled (CNN side), 't' transformer init (normal, std 0.02)
    Linear(Rng& rng, long in, long out, char kind = 'f') {
        T std_dev = kind == 't' ? T(0.02) : std::sqrt(T(2) / T(in));
        w = Tensor<T>::randn(rng, {in, out}, std_dev).set_requires_grad(true);
        b = Tensor<T>::zeros({out}).set_requires_grad(true);
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }
    void params(ParamList<T>& p, const std::string& prefix) const {
        p.add(prefix + ".w", w);
        p.add(prefix + ".b", b);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    T eps = T(1e-6);

    LayerNorm() = default;
    explicit LayerNorm(long n) {
        gamma = Tensor<T>::ones({n}).set_requires_grad(true);
        beta = Tensor<T>::zeros({n}).set_requires_grad(true);
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
    void params(ParamList<T>& p, const std::string& prefix) const {
        p.add(prefix + ".gamma", gamma);
        p.add(prefix + ".beta", beta);
    }
};

}  // namespace ttn
