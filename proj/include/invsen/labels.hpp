#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace invsen {

/// Hard assignment of n samples to k groups; every label lies in [0, k).
struct ClusterLabels {
    std::vector<int> labels;
    std::size_t k = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const int> view() const noexcept { return labels; }
    void validate() const;

    /// k is taken as max(label) + 1.
    static ClusterLabels from(std::vector<int> labels);
};

}  // namespace invsen
