#include "invsen/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "invsen/error.hpp"
#include "invsen/fsutil.hpp"

namespace invsen::evalmetrics {

namespace {

void check_lengths(std::span<const int> a, std::span<const int> b, const char* what) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::shape, std::string(what) + ": label lengths differ (" + std::to_string(a.size()) +
                                          " vs " + std::to_string(b.size()) + ")");
    }
}

std::size_t label_range(std::span<const int> labels) {
    int top = -1;
    for (int l : labels) {
        if (l < 0) throw Error(ErrorKind::shape, "labels must be non-negative, got " + std::to_string(l));
        top = std::max(top, l);
    }
    return static_cast<std::size_t>(top + 1);
}

double xlogx_ratio(double p, double q) { return p > 0.0 ? p * std::log(p / q) : 0.0; }

double entropy_of_counts(std::span<const std::int64_t> counts, double n) {
    double h = 0.0;
    for (auto c : counts) {
        if (c > 0) {
            const double p = static_cast<double>(c) / n;
            h -= p * std::log(p);
        }
    }
    return h;
}

double mi_of_table(const ContingencyTable& t) {
    if (t.total == 0) return 0.0;
    const double n = static_cast<double>(t.total);
    double mi = 0.0;
    for (std::size_t p = 0; p < t.k_pred(); ++p) {
        for (std::size_t q = 0; q < t.k_true(); ++q) {
            const auto c = t.counts[p][q];
            if (c == 0) continue;
            const double joint = static_cast<double>(c) / n;
            const double outer = static_cast<double>(t.row_sums[p]) * static_cast<double>(t.col_sums[q]) / (n * n);
            mi += xlogx_ratio(joint, outer);
        }
    }
    return std::max(mi, 0.0);
}

std::int64_t pairs(std::int64_t m) { return m * (m - 1) / 2; }

}  // namespace

ContingencyTable contingency(std::span<const int> pred, std::span<const int> truth) {
    check_lengths(pred, truth, "contingency");
    ContingencyTable t;
    const std::size_t kp = label_range(pred);
    const std::size_t kt = label_range(truth);
    t.counts.assign(kp, std::vector<std::int64_t>(kt, 0));
    t.row_sums.assign(kp, 0);
    t.col_sums.assign(kt, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto p = static_cast<std::size_t>(pred[i]);
        const auto q = static_cast<std::size_t>(truth[i]);
        ++t.counts[p][q];
        ++t.row_sums[p];
        ++t.col_sums[q];
    }
    t.total = static_cast<std::int64_t>(pred.size());
    return t;
}

std::vector<std::size_t> optimal_assignment(const Matrix& cost) {
    const std::size_t n = cost.rows();
    if (cost.cols() != n) throw Error(ErrorKind::shape, "assignment cost must be square, got " + cost.shape_string());
    if (!cost.all_finite()) throw Error(ErrorKind::numerical, "assignment cost has non-finite entries");
    if (n == 0) return {};
    // Kuhn-Munkres with row/column potentials; 1-based with a virtual column 0.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t row = 1; row <= n; ++row) {
        match[0] = row;
        std::size_t col0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[col0] = 1;
            const std::size_t r0 = match[col0];
            double delta = inf;
            std::size_t col1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(r0 - 1, j - 1) - u[r0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = col0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
        } while (match[col0] != 0);
        do {
            const std::size_t col1 = way[col0];
            match[col0] = match[col1];
            col0 = col1;
        } while (col0 != 0);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t j = 1; j <= n; ++j) perm[match[j] - 1] = j - 1;
    return perm;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
    check_lengths(pred, truth, "accuracy");
    if (pred.empty()) throw Error(ErrorKind::shape, "accuracy of empty labelings");
    const ContingencyTable t = contingency(pred, truth);
    const std::size_t k = std::max(t.k_pred(), t.k_true());
    Matrix cost(k, k);
    for (std::size_t p = 0; p < t.k_pred(); ++p) {
        for (std::size_t q = 0; q < t.k_true(); ++q) cost(p, q) = -static_cast<double>(t.counts[p][q]);
    }
    const auto perm = optimal_assignment(cost);
    std::int64_t matched = 0;
    for (std::size_t p = 0; p < t.k_pred(); ++p) {
        if (perm[p] < t.k_true()) matched += t.counts[p][perm[p]];
    }
    return static_cast<double>(matched) / static_cast<double>(t.total);
}

double accuracy(const ClusterLabels& pred, const ClusterLabels& truth) { return accuracy(pred.view(), truth.view()); }

double entropy(std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    std::vector<std::int64_t> counts(label_range(labels), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    return entropy_of_counts(counts, static_cast<double>(labels.size()));
}

double discrete_mi(std::span<const int> a, std::span<const int> b) {
    check_lengths(a, b, "discrete_mi");
    return mi_of_table(contingency(a, b));
}

double nmi(std::span<const int> pred, std::span<const int> truth) {
    check_lengths(pred, truth, "nmi");
    if (pred.empty()) throw Error(ErrorKind::shape, "nmi of empty labelings");
    const ContingencyTable t = contingency(pred, truth);
    const double n = static_cast<double>(t.total);
    const double hp = entropy_of_counts(t.row_sums, n);
    const double ht = entropy_of_counts(t.col_sums, n);
    if (hp == 0.0 && ht == 0.0) return 1.0;
    if (hp == 0.0 || ht == 0.0) return 0.0;
    return std::clamp(mi_of_table(t) / std::sqrt(hp * ht), 0.0, 1.0);
}

double nmi(const ClusterLabels& pred, const ClusterLabels& truth) { return nmi(pred.view(), truth.view()); }

double ari(std::span<const int> pred, std::span<const int> truth) {
    check_lengths(pred, truth, "ari");
    if (pred.size() < 2) throw Error(ErrorKind::shape, "ari needs at least 2 samples");
    const ContingencyTable t = contingency(pred, truth);
    std::int64_t index = 0, sum_pred = 0, sum_true = 0;
    for (const auto& row : t.counts) {
        for (auto c : row) index += pairs(c);
    }
    for (auto c : t.row_sums) sum_pred += pairs(c);
    for (auto c : t.col_sums) sum_true += pairs(c);
    const std::int64_t total = pairs(t.total);
    // (index - expected) / (max - expected) with every term scaled by 2 * C(n, 2).
    const std::int64_t num = 2 * (index * total - sum_pred * sum_true);
    const std::int64_t den = (sum_pred + sum_true) * total - 2 * sum_pred * sum_true;
    if (den == 0) return 1.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

double ari(const ClusterLabels& pred, const ClusterLabels& truth) { return ari(pred.view(), truth.view()); }

SubspacePreserving subspace_preserving(const sennet::CoefficientMatrix& coef, std::span<const int> truth) {
    const Matrix& c = coef.c;
    if (c.rows() != truth.size() || c.cols() != truth.size()) {
        throw Error(ErrorKind::shape, "coefficients " + c.shape_string() + " do not match " +
                                          std::to_string(truth.size()) + " labels");
    }
    SubspacePreserving out;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t j = 0; j < c.cols(); ++j) {
        double same = 0.0, all = 0.0;
        for (std::size_t i = 0; i < c.rows(); ++i) {
            const double a = std::abs(c(i, j));
            all += a;
            if (truth[i] == truth[j]) same += a;
        }
        if (all == 0.0) {
            ++out.skipped_columns;
            continue;
        }
        sum += same / all;
        ++used;
    }
    out.rate = used ? sum / static_cast<double>(used) : 0.0;
    return out;
}

double subspace_preserving_rate(const sennet::CoefficientMatrix& c, std::span<const int> truth) {
    return subspace_preserving(c, truth).rate;
}

void MetricsReport::validate() const {
    auto check = [](double v, double lo, double hi, const char* name) {
        if (!std::isfinite(v) || v < lo - 1e-12 || v > hi + 1e-12) {
            throw Error(ErrorKind::numerical, std::string("metric ") + name + " out of range: " + format_double(v));
        }
    };
    check(acc, 0.0, 1.0, "acc");
    check(nmi, 0.0, 1.0, "nmi");
    check(ari, -1.0, 1.0, "ari");
    check(mi_pred_bias, 0.0, std::numeric_limits<double>::max(), "mi_pred_bias");
    check(mi_true_bias, 0.0, std::numeric_limits<double>::max(), "mi_true_bias");
}

MetricsReport compute_metrics(std::span<const int> pred, std::span<const int> truth, std::span<const int> bias) {
    MetricsReport r;
    r.n = pred.size();
    r.acc = accuracy(pred, truth);
    r.nmi = nmi(pred, truth);
    r.ari = ari(pred, truth);
    if (!bias.empty()) {
        r.mi_pred_bias = discrete_mi(pred, bias);
        r.mi_true_bias = discrete_mi(truth, bias);
    }
    r.validate();
    return r;
}

std::string to_json(const MetricsReport& r) {
    // Field order is fixed; values use the shortest round-trip form.
    return "{\"acc\":" + format_double(r.acc) + ",\"nmi\":" + format_double(r.nmi) + ",\"ari\":" + format_double(r.ari) +
           ",\"mi_pred_bias\":" + format_double(r.mi_pred_bias) + ",\"mi_true_bias\":" +
           format_double(r.mi_true_bias) + ",\"n\":" + std::to_string(r.n) + "}";
}

std::string to_csv_row(const MetricsReport& r) {
    return format_double(r.acc) + "," + format_double(r.nmi) + "," + format_double(r.ari) + "," +
           format_double(r.mi_pred_bias) + "," + format_double(r.mi_true_bias) + "," + std::to_string(r.n);
}

MetricsReport metrics_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        MetricsReport r;
        r.acc = j.at("acc").get<double>();
        r.nmi = j.at("nmi").get<double>();
        r.ari = j.at("ari").get<double>();
        r.mi_pred_bias = j.at("mi_pred_bias").get<double>();
        r.mi_true_bias = j.at("mi_true_bias").get<double>();
        r.n = j.at("n").get<std::size_t>();
        r.validate();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("malformed metrics: ") + e.what());
    }
}

}  // namespace invsen::evalmetrics
