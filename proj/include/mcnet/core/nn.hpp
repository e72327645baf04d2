#pragma once

#include <cmath>

#include "mcnet/core/module.hpp"
#include "mcnet/core/ops.hpp"
#include "mcnet/core/rng.hpp"

namespace mcnet {
namespace nn {

using ag::Var;

inline Tensor trunc_normal_init(std::vector<int64_t> shape, Rng& rng, float std = 0.02f) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.trunc_normal(0.0, std));
    return t;
}

inline Tensor kaiming_normal_init(std::vector<int64_t> shape, int64_t fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal(0.0, std));
    return t;
}

class Conv2d : public Module {
public:
    Conv2d(int64_t cin, int64_t cout, int64_t k, Rng& rng, int64_t stride = 1, int64_t pad = 0,
           int64_t dilation = 1, bool bias = true)
        : stride_(stride), pad_(pad), dilation_(dilation) {
        w = Var(kaiming_normal_init({cout, cin, k, k}, cin * k * k, rng));
        register_parameter("weight", w);
        if (bias) {
            b = Var(Tensor({cout}));
            register_parameter("bias", b);
        }
    }
    Var forward(const Var& x) { return ag::conv2d(x, w, b, stride_, pad_, dilation_); }

    Var w, b;

private:
    int64_t stride_, pad_, dilation_;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(int64_t c) {
        gamma = Var(Tensor::full({c}, 1.0f));
        beta = Var(Tensor({c}));
        running_mean = Tensor({c});
        running_var = Tensor::full({c}, 1.0f);
        register_parameter("weight", gamma);
        register_parameter("bias", beta);
        register_buffer("running_mean", running_mean);
        register_buffer("running_var", running_var);
    }
    Var forward(const Var& x) {
        return ag::batchnorm2d(x, gamma, beta, running_mean, running_var, training());
    }

    Var gamma, beta;
    Tensor running_mean, running_var;
};

// conv -> BN -> ReLU, the default convolution unit of the CNN half.
class ConvBnRelu : public Module {
public:
    ConvBnRelu(int64_t cin, int64_t cout, int64_t k, Rng& rng, int64_t stride = 1, int64_t pad = 0,
               int64_t dilation = 1)
        : conv(cin, cout, k, rng, stride, pad, dilation, /*bias=*/false), bn(cout) {
        register_module("conv", conv);
        register_module("bn", bn);
    }
    Var forward(const Var& x) { return ag::relu(bn.forward(conv.forward(x))); }

    Conv2d conv;
    BatchNorm2d bn;
};

class Linear : public Module {
public:
    Linear(int64_t cin, int64_t cout, Rng& rng, bool bias = true) {
        w = Var(trunc_normal_init({cin, cout}, rng));
        register_parameter("weight", w);
        if (bias) {
            b = Var(Tensor({cout}));
            register_parameter("bias", b);
        }
    }
    Var forward(const Var& x) { return ag::linear(x, w, b); }

    Var w, b;
};

class LayerNorm : public Module {
public:
    explicit LayerNorm(int64_t c) {
        gamma = Var(Tensor::full({c}, 1.0f));
        beta = Var(Tensor({c}));
        register_parameter("weight", gamma);
        register_parameter("bias", beta);
    }
    Var forward(const Var& x) { return ag::layernorm_lastdim(x, gamma, beta); }

    Var gamma, beta;
};

}  // namespace nn
}  // namespace mcnet
