#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "invsen/labels.hpp"
#include "invsen/numkit/matrix.hpp"

namespace invsen::datagen {

using numkit::Matrix;

struct DataGenConfig {
    std::size_t k_subspaces = 3;
    std::size_t ambient_dim = 30;
    std::size_t subspace_rank = 4;
    std::size_t n_per_cluster = 200;
    double noise_sigma = 0.01;
    double bias_strength = 0.0;  // length of the additive bias displacement
    double bias_flip_e = 0.1;    // probability that the bias label disagrees with the cluster rule
    double label_flip = 0.0;     // extra flip of the rule label before colouring (0 for clustering)
    std::uint64_t seed = 0;

    void validate() const;
};

/// Subspace bases (d x r, orthonormal columns) and the two bias directions
/// (rows of a 2 x d matrix), orthogonal to every basis column.
struct SubspaceGeometry {
    std::vector<Matrix> bases;
    Matrix bias_directions;
};

struct Provenance {
    std::string source;  // "generator" or the file path it was loaded from
    std::optional<DataGenConfig> config;
    std::optional<SubspaceGeometry> geometry;
    double flip_e = 0.0;
    std::vector<int> origin;  // mixed-domain sets: 0 biased part, 1 decorrelated part
};

struct Dataset {
    Matrix x;  // samples x features
    std::optional<ClusterLabels> s;
    std::optional<std::vector<int>> b;
    std::string name;
    Provenance provenance;

    std::size_t n() const noexcept { return x.rows(); }
    std::size_t d() const noexcept { return x.cols(); }
    void validate() const;
};

/// Cluster -> bias rule group (parity of the cluster index).
int bias_group(int cluster);

SubspaceGeometry make_geometry(const DataGenConfig& config);

/// Noisy union of subspaces with a bias displacement whose label follows the
/// cluster rule except with probability e.
Dataset sample_dataset(const SubspaceGeometry& geometry, const DataGenConfig& config, double flip_e,
                       std::uint64_t sample_seed, std::string name);

Dataset generate(const DataGenConfig& config);

struct OodSplit {
    Dataset train;
    Dataset test;
};

/// Shared geometry, different samples; only the flip rate differs.
OodSplit make_ood_split(const DataGenConfig& config, double train_e, double test_e);

/// Shuffled union of a biased part (rate e_biased) and a decorrelated part
/// (rate 0.5); n_ratio is the biased fraction of k * n_per_cluster samples.
Dataset make_mixed_domain(const DataGenConfig& config, double e_biased, double n_ratio = 0.5);

/// Scale every sample (row) to unit L2 norm; all-zero rows are left alone.
void normalize_samples(Matrix& x);

struct LoadOptions {
    bool normalize = true;
};

/// CSV with header `# invsen-dataset v1 n=<n> d=<d> has_s=<0|1> has_b=<0|1>`.
Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {});
/// Written to a temporary sibling and renamed into place.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace invsen::datagen
