#include "invsen/numkit/adam.hpp"

#include <cmath>
#include <string>

#include "invsen/error.hpp"

namespace invsen::numkit {

AdamState make_adam(std::span<const std::span<double>> params, const AdamConfig& config) {
    if (!(config.lr > 0.0)) throw Error(ErrorKind::config, "adam learning rate must be > 0");
    if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
        throw Error(ErrorKind::config, "adam betas must lie in [0, 1)");
    }
    AdamState state;
    state.config = config;
    for (const auto& p : params) {
        state.m.emplace_back(p.size(), 0.0);
        state.v.emplace_back(p.size(), 0.0);
    }
    return state;
}

void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads) {
    if (params.size() != state.m.size() || grads.size() != params.size()) {
        throw Error(ErrorKind::shape, "adam_step: " + std::to_string(params.size()) + " parameter tensors, " +
                                          std::to_string(grads.size()) + " gradients, state tracks " +
                                          std::to_string(state.m.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != state.m[i].size() || grads[i].size() != params[i].size()) {
            throw Error(ErrorKind::shape, "adam_step: tensor " + std::to_string(i) + " shape mismatch");
        }
    }
    const auto& c = state.config;
    ++state.t;
    const double t = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto p = params[i];
        const auto g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double mhat = m[j] / correction1;
            const double vhat = v[j] / correction2;
            p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

}  // namespace invsen::numkit
