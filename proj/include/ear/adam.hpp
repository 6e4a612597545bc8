#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "ear/tensor.hpp"

namespace ear {

struct AdamConfig {
    double lr{1e-3};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::int64_t t{0};
};

// One Adam step over the keys present in grads. Moments are created lazily;
// keys absent from grads are left untouched (both parameters and moments).
inline void adam_step(std::map<std::string, Tensor>& params,
                      const std::map<std::string, Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg) {
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (const auto& [key, g] : grads) {
        Tensor& p = params.at(key);
        Tensor& m = state.m.try_emplace(key, Tensor::zeros(p.shape())).first->second;
        Tensor& v = state.v.try_emplace(key, Tensor::zeros(p.shape())).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace ear
