#include "invsen/labels.hpp"

#include <algorithm>
#include <string>

#include "invsen/error.hpp"

namespace invsen {

void ClusterLabels::validate() const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
            throw Error(ErrorKind::config, "label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                               " outside [0, " + std::to_string(k) + ")");
        }
    }
}

ClusterLabels ClusterLabels::from(std::vector<int> labels) {
    ClusterLabels out;
    out.k = labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1);
    out.labels = std::move(labels);
    out.validate();
    return out;
}

}  // namespace invsen
