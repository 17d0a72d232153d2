#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

namespace invsen::numkit {

struct GradCheckOptions {
    double relative_step = 1e-5;    // h = relative_step * max(1, |p|)
    double denominator_floor = 1e-6;  // relative error uses max(|a|, |n|, floor)
    std::size_t max_coords_per_tensor = 0;  // 0 checks every coordinate
    std::uint64_t seed = 0;                 // picks coordinates when sampling
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::size_t checked = 0;
    std::string worst;  // "tensor <i>[<j>]: analytic=..., numeric=..."
};

/// Central-difference check of `grads` against `loss`, which must read the
/// current values of `params`. Each probed coordinate is restored exactly.
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const std::span<double>> params,
                                  std::span<const std::span<const double>> grads, double tolerance,
                                  const GradCheckOptions& options = {});

}  // namespace invsen::numkit
