#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "invsen/labels.hpp"
#include "invsen/numkit/matrix.hpp"
#include "invsen/sennet.hpp"

namespace invsen::cluster {

using numkit::Matrix;

/// Symmetric, non-negative graph weights with a zero diagonal.
struct AffinityMatrix {
    Matrix a;

    std::size_t n() const noexcept { return a.rows(); }
    /// Throws unless square, symmetric, non-negative, finite and zero on the diagonal.
    void validate() const;
};

/// |C| + |C^T|
AffinityMatrix affinity_from_coefficients(const sennet::CoefficientMatrix& c);
/// Affinity of the eval-mode coefficients of `x` against itself.
AffinityMatrix build_affinity(const sennet::SEModel& model, const Matrix& x);

/// Row-major CSV with an "n=<n>" header line.
std::string affinity_csv(const AffinityMatrix& a);
void save_affinity_csv(const AffinityMatrix& a, const std::filesystem::path& path);

enum class LaplacianKind { symmetric, unnormalized };
std::string to_string(LaplacianKind kind);
LaplacianKind laplacian_from_string(const std::string& name);

/// symmetric: I - D^{-1/2} A D^{-1/2}, with D^{-1/2} = 0 for isolated vertices.
/// unnormalized: D - A.
Matrix normalized_laplacian(const AffinityMatrix& a, LaplacianKind kind = LaplacianKind::symmetric);

struct EigenPairs {
    std::vector<double> values;  // ascending
    Matrix vectors;              // n x k, column j pairs with values[j]
    std::vector<double> residuals;
};

/// The k smallest eigenpairs of a symmetric matrix. Each column's largest
/// component is made positive so the output is reproducible. Throws a
/// numerical error listing the residuals if any ||Lv - lambda v|| exceeds tol.
EigenPairs smallest_eigenvectors(const Matrix& l, std::size_t k, double tol = 1e-8);

struct KMeansResult {
    ClusterLabels labels;
    Matrix centers;
    double wcss = 0.0;
};

/// k-means++ seeding and Lloyd iterations, best of `restarts` by
/// within-cluster sum of squares.
KMeansResult kmeans_fit(const Matrix& rows, std::size_t k, std::size_t restarts, std::size_t max_iter,
                        std::uint64_t seed);
ClusterLabels kmeans(const Matrix& rows, std::size_t k, std::size_t restarts, std::size_t max_iter,
                     std::uint64_t seed);

/// Scales every non-zero row to unit Euclidean length.
Matrix row_normalize(const Matrix& m);

struct SpectralConfig {
    std::size_t k = 2;
    std::size_t kmeans_restarts = 10;
    std::size_t kmeans_max_iter = 300;
    double eig_tol = 1e-8;
    std::uint64_t seed = 0;
    LaplacianKind laplacian = LaplacianKind::symmetric;

    void validate() const;
};

ClusterLabels spectral_cluster(const AffinityMatrix& a, const SpectralConfig& config);

}  // namespace invsen::cluster
