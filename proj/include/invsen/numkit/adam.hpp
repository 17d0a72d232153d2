#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace invsen::numkit {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments mirroring a list of parameter tensors.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
    AdamConfig config;
};

/// Zero moments shaped like `params`.
AdamState make_adam(std::span<const std::span<double>> params, const AdamConfig& config);

/// One bias-corrected Adam update; increments t exactly once.
void adam_step(AdamState& state, std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads);

}  // namespace invsen::numkit
