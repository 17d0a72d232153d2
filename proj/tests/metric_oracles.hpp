#pragma once

// Slow, direct reference implementations of the clustering metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace oracle {

inline int label_count(std::span<const int> x) { return x.empty() ? 0 : *std::max_element(x.begin(), x.end()) + 1; }

// Best match count over every bijection between padded label sets.
inline std::int64_t best_matches(std::span<const int> pred, std::span<const int> truth) {
    const int k = std::max(label_count(pred), label_count(truth));
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::int64_t best = 0;
    do {
        std::int64_t m = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) m += perm[static_cast<std::size_t>(pred[i])] == truth[i];
        best = std::max(best, m);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

inline double accuracy(std::span<const int> pred, std::span<const int> truth) {
    return static_cast<double>(best_matches(pred, truth)) / static_cast<double>(pred.size());
}

// Adjusted Rand index from the four pair counts over all n(n-1)/2 sample pairs.
inline double ari(std::span<const int> pred, std::span<const int> truth) {
    std::int64_t a = 0, b = 0, c = 0, d = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = i + 1; j < pred.size(); ++j) {
            const bool sp = pred[i] == pred[j], st = truth[i] == truth[j];
            if (sp && st) ++a;
            else if (sp) ++b;
            else if (st) ++c;
            else ++d;
        }
    const std::int64_t num = 2 * (a * d - b * c);
    const std::int64_t den = (a + b) * (b + d) + (a + c) * (c + d);
    if (den == 0) return 1.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline double entropy(std::span<const int> x) {
    std::vector<double> count(static_cast<std::size_t>(label_count(x)), 0.0);
    for (int v : x) count[static_cast<std::size_t>(v)] += 1;
    const double n = static_cast<double>(x.size());
    double h = 0;
    for (double c : count)
        if (c > 0) h -= c / n * std::log(c / n);
    return h;
}

inline double mutual_information(std::span<const int> x, std::span<const int> y) {
    const auto kx = static_cast<std::size_t>(label_count(x)), ky = static_cast<std::size_t>(label_count(y));
    std::vector<double> joint(kx * ky, 0.0), px(kx, 0.0), py(ky, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        joint[static_cast<std::size_t>(x[i]) * ky + static_cast<std::size_t>(y[i])] += 1;
        px[static_cast<std::size_t>(x[i])] += 1;
        py[static_cast<std::size_t>(y[i])] += 1;
    }
    const double n = static_cast<double>(x.size());
    double mi = 0;
    for (std::size_t i = 0; i < kx; ++i)
        for (std::size_t j = 0; j < ky; ++j) {
            const double p = joint[i * ky + j] / n;
            if (p > 0) mi += p * std::log(p / (px[i] / n * (py[j] / n)));
        }
    return mi;
}

inline double nmi(std::span<const int> pred, std::span<const int> truth) {
    const double hp = entropy(pred), ht = entropy(truth);
    if (hp == 0.0 && ht == 0.0) return 1.0;
    if (hp == 0.0 || ht == 0.0) return 0.0;
    return mutual_information(pred, truth) / std::sqrt(hp * ht);
}

// Every labeling of n samples into at most k groups, numbered by first
// appearance (each partition exactly once).
inline std::vector<std::vector<int>> canonical_labelings(std::size_t n, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    auto rec = [&](auto&& self, int used) -> void {
        if (cur.size() == n) {
            out.push_back(cur);
            return;
        }
        for (int l = 0; l <= std::min(used, k - 1); ++l) {
            cur.push_back(l);
            self(self, std::max(used, l + 1));
            cur.pop_back();
        }
    };
    rec(rec, 0);
    return out;
}

}  // namespace oracle
