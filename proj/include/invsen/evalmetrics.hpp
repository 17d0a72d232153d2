#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "invsen/labels.hpp"
#include "invsen/numkit/matrix.hpp"
#include "invsen/sennet.hpp"

namespace invsen::evalmetrics {

using numkit::Matrix;

/// counts(p, t): samples with predicted label p and true label t.
struct ContingencyTable {
    std::vector<std::vector<std::int64_t>> counts;
    std::vector<std::int64_t> row_sums;  // per predicted label
    std::vector<std::int64_t> col_sums;  // per true label
    std::int64_t total = 0;

    std::size_t k_pred() const noexcept { return row_sums.size(); }
    std::size_t k_true() const noexcept { return col_sums.size(); }
};

/// Label ranges are taken from the data (max + 1); negative labels are rejected.
ContingencyTable contingency(std::span<const int> pred, std::span<const int> truth);

/// perm[row] = assigned column, minimizing sum cost(row, perm[row]).
std::vector<std::size_t> optimal_assignment(const Matrix& cost);

double accuracy(const ClusterLabels& pred, const ClusterLabels& truth);
double accuracy(std::span<const int> pred, std::span<const int> truth);

/// I / sqrt(H_pred * H_truth) in nats. Two constant labelings score 1; a
/// single constant labeling against a non-constant one scores 0.
double nmi(std::span<const int> pred, std::span<const int> truth);
double nmi(const ClusterLabels& pred, const ClusterLabels& truth);

/// Hubert-Arabie adjusted Rand index. Returns 1 when the expected and maximum
/// index coincide (both partitions trivial in the same way).
double ari(std::span<const int> pred, std::span<const int> truth);
double ari(const ClusterLabels& pred, const ClusterLabels& truth);

/// Plug-in entropy and mutual information in nats.
double entropy(std::span<const int> labels);
double discrete_mi(std::span<const int> a, std::span<const int> b);

struct SubspacePreserving {
    double rate = 0.0;
    std::size_t skipped_columns = 0;  // columns whose coefficients are all zero
};

/// Mean over columns j of the share of |c_ij| mass on samples i with s_i = s_j.
SubspacePreserving subspace_preserving(const sennet::CoefficientMatrix& c, std::span<const int> truth);
double subspace_preserving_rate(const sennet::CoefficientMatrix& c, std::span<const int> truth);

struct MetricsReport {
    double acc = 0.0;
    double nmi = 0.0;
    double ari = 0.0;
    double mi_pred_bias = 0.0;  // I(predicted clusters; bias)
    double mi_true_bias = 0.0;  // I(true clusters; bias)
    std::size_t n = 0;

    void validate() const;
    bool operator==(const MetricsReport&) const = default;
};

inline constexpr const char* kMetricsCsvHeader = "acc,nmi,ari,mi_pred_bias,mi_true_bias,n";

/// Empty `bias` leaves both MI fields at zero.
MetricsReport compute_metrics(std::span<const int> pred, std::span<const int> truth, std::span<const int> bias);

std::string to_json(const MetricsReport& r);
std::string to_csv_row(const MetricsReport& r);
MetricsReport metrics_from_json(const std::string& text);

}  // namespace invsen::evalmetrics
