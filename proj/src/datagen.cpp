#include "invsen/datagen.hpp"

#include <cmath>

#include "invsen/error.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::datagen {

using numkit::Rng;

void DataGenConfig::validate() const {
    if (k_subspaces < 1) throw Error(ErrorKind::config, "k_subspaces must be >= 1");
    if (subspace_rank < 1 || subspace_rank >= ambient_dim) {
        throw Error(ErrorKind::config, "subspace_rank must lie in [1, ambient_dim)");
    }
    if (2 + k_subspaces * subspace_rank > ambient_dim) {
        throw Error(ErrorKind::config, "infeasible geometry: 2 bias directions + " + std::to_string(k_subspaces) +
                                           " x rank " + std::to_string(subspace_rank) + " exceeds ambient dim " +
                                           std::to_string(ambient_dim));
    }
    if (n_per_cluster < 1) throw Error(ErrorKind::config, "n_per_cluster must be >= 1");
    if (!(noise_sigma >= 0.0) || !(bias_strength >= 0.0)) {
        throw Error(ErrorKind::config, "noise_sigma and bias_strength must be >= 0");
    }
    if (!(bias_flip_e >= 0.0 && bias_flip_e <= 0.5)) throw Error(ErrorKind::config, "bias_flip_e must lie in [0, 0.5]");
    if (!(label_flip >= 0.0 && label_flip <= 1.0)) throw Error(ErrorKind::config, "label_flip must lie in [0, 1]");
}

void Dataset::validate() const {
    if (!x.all_finite()) throw Error(ErrorKind::numerical, "dataset '" + name + "' has non-finite features");
    if (s) {
        if (s->size() != n()) throw Error(ErrorKind::shape, "dataset '" + name + "': cluster label count mismatch");
        s->validate();
    }
    if (b) {
        if (b->size() != n()) throw Error(ErrorKind::shape, "dataset '" + name + "': bias label count mismatch");
        for (int v : *b)
            if (v < 0) throw Error(ErrorKind::config, "dataset '" + name + "': negative bias label");
    }
}

int bias_group(int cluster) { return cluster % 2; }

namespace {

// Orthonormalize the columns of `m` in place against `fixed` rows and each other
// (two passes of modified Gram-Schmidt).
void orthonormalize_columns(Matrix& m, const Matrix& fixed) {
    const std::size_t d = m.rows();
    for (std::size_t c = 0; c < m.cols(); ++c) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t f = 0; f < fixed.rows(); ++f) {
                double proj = 0.0;
                for (std::size_t i = 0; i < d; ++i) proj += fixed(f, i) * m(i, c);
                for (std::size_t i = 0; i < d; ++i) m(i, c) -= proj * fixed(f, i);
            }
            for (std::size_t p = 0; p < c; ++p) {
                double proj = 0.0;
                for (std::size_t i = 0; i < d; ++i) proj += m(i, p) * m(i, c);
                for (std::size_t i = 0; i < d; ++i) m(i, c) -= proj * m(i, p);
            }
        }
        double norm = 0.0;
        for (std::size_t i = 0; i < d; ++i) norm += m(i, c) * m(i, c);
        norm = std::sqrt(norm);
        if (!(norm > 1e-8)) throw Error(ErrorKind::numerical, "degenerate random basis draw");
        for (std::size_t i = 0; i < d; ++i) m(i, c) /= norm;
    }
}

}  // namespace

SubspaceGeometry make_geometry(const DataGenConfig& config) {
    config.validate();
    const std::size_t d = config.ambient_dim;
    Rng rng(numkit::derive_seed(config.seed, "geometry"));

    Matrix bias_cols(d, 2);
    for (double& v : bias_cols.values()) v = rng.normal();
    orthonormalize_columns(bias_cols, Matrix(0, d));

    SubspaceGeometry geo;
    geo.bias_directions = numkit::transpose(bias_cols);
    for (std::size_t c = 0; c < config.k_subspaces; ++c) {
        Matrix basis(d, config.subspace_rank);
        for (double& v : basis.values()) v = rng.normal();
        orthonormalize_columns(basis, geo.bias_directions);
        geo.bases.push_back(std::move(basis));
    }
    return geo;
}

namespace {

// Draws samples for `counts[c]` points of each cluster, cluster-major.
Dataset sample_counts(const SubspaceGeometry& geo, const DataGenConfig& config, double flip_e,
                      const std::vector<std::size_t>& counts, Rng& rng) {
    const std::size_t d = config.ambient_dim;
    const std::size_t r = config.subspace_rank;
    std::size_t n = 0;
    for (auto c : counts) n += c;

    Dataset ds;
    ds.x = Matrix(n, d);
    std::vector<int> s(n), b(n);
    std::vector<double> w(r);
    std::size_t row = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const Matrix& basis = geo.bases[c];
        for (std::size_t m = 0; m < counts[c]; ++m, ++row) {
            for (auto& wi : w) wi = rng.normal();
            auto x = ds.x.row(row);
            for (std::size_t i = 0; i < d; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < r; ++j) acc += basis(i, j) * w[j];
                x[i] = acc;
            }
            for (std::size_t i = 0; i < d; ++i) x[i] += config.noise_sigma * rng.normal();
            int label = bias_group(static_cast<int>(c));
            if (rng.bernoulli(config.label_flip)) label = 1 - label;
            if (rng.bernoulli(flip_e)) label = 1 - label;
            const auto dir = geo.bias_directions.row(static_cast<std::size_t>(label));
            for (std::size_t i = 0; i < d; ++i) x[i] += config.bias_strength * dir[i];
            s[row] = static_cast<int>(c);
            b[row] = label;
        }
    }
    ds.s = ClusterLabels{std::move(s), counts.size()};
    ds.b = std::move(b);
    ds.provenance.source = "generator";
    ds.provenance.config = config;
    ds.provenance.geometry = geo;
    ds.provenance.flip_e = flip_e;
    return ds;
}

}  // namespace

Dataset sample_dataset(const SubspaceGeometry& geometry, const DataGenConfig& config, double flip_e,
                       std::uint64_t sample_seed, std::string name) {
    config.validate();
    if (!(flip_e >= 0.0 && flip_e <= 0.5)) throw Error(ErrorKind::config, "flip rate must lie in [0, 0.5]");
    if (geometry.bases.size() != config.k_subspaces) throw Error(ErrorKind::shape, "geometry/config cluster count");
    Rng rng(sample_seed);
    std::vector<std::size_t> counts(config.k_subspaces, config.n_per_cluster);
    Dataset ds = sample_counts(geometry, config, flip_e, counts, rng);
    ds.name = std::move(name);
    return ds;
}

Dataset generate(const DataGenConfig& config) {
    const auto geo = make_geometry(config);
    return sample_dataset(geo, config, config.bias_flip_e, numkit::derive_seed(config.seed, "samples"), "plain");
}

OodSplit make_ood_split(const DataGenConfig& config, double train_e, double test_e) {
    const auto geo = make_geometry(config);
    OodSplit split;
    split.train = sample_dataset(geo, config, train_e, numkit::derive_seed(config.seed, "train"), "train");
    split.test = sample_dataset(geo, config, test_e, numkit::derive_seed(config.seed, "test"), "test");
    return split;
}

Dataset make_mixed_domain(const DataGenConfig& config, double e_biased, double n_ratio) {
    if (!(n_ratio > 0.0 && n_ratio <= 1.0)) throw Error(ErrorKind::config, "n_ratio must lie in (0, 1]");
    if (!(e_biased >= 0.0 && e_biased <= 0.5)) throw Error(ErrorKind::config, "flip rate must lie in [0, 0.5]");
    const auto geo = make_geometry(config);
    const std::size_t k = config.k_subspaces;
    const std::size_t total = k * config.n_per_cluster;
    const auto biased_total = static_cast<std::size_t>(std::llround(n_ratio * static_cast<double>(total)));

    // Spread the biased share over clusters so the global count is exact.
    std::vector<std::size_t> biased(k), unbiased(k);
    for (std::size_t c = 0; c < k; ++c) {
        biased[c] = (c + 1) * biased_total / k - c * biased_total / k;
        unbiased[c] = config.n_per_cluster - biased[c];
    }
    Rng biased_rng(numkit::derive_seed(config.seed, "mixed_biased"));
    Rng unbiased_rng(numkit::derive_seed(config.seed, "mixed_unbiased"));
    Dataset part_b = sample_counts(geo, config, e_biased, biased, biased_rng);
    Dataset part_u = sample_counts(geo, config, 0.5, unbiased, unbiased_rng);

    Rng shuffle_rng(numkit::derive_seed(config.seed, "mixed_shuffle"));
    const auto perm = shuffle_rng.permutation(total);
    Dataset ds;
    ds.name = "mixed";
    ds.x = Matrix(total, config.ambient_dim);
    std::vector<int> s(total), b(total), origin(total);
    for (std::size_t r = 0; r < total; ++r) {
        const std::size_t src = perm[r];
        const bool from_biased = src < part_b.n();
        const Dataset& part = from_biased ? part_b : part_u;
        const std::size_t idx = from_biased ? src : src - part_b.n();
        std::copy_n(part.x.row(idx).data(), config.ambient_dim, ds.x.row(r).data());
        s[r] = part.s->labels[idx];
        b[r] = (*part.b)[idx];
        origin[r] = from_biased ? 0 : 1;
    }
    ds.s = ClusterLabels{std::move(s), k};
    ds.b = std::move(b);
    ds.provenance.source = "generator";
    ds.provenance.config = config;
    ds.provenance.geometry = geo;
    ds.provenance.flip_e = e_biased;
    ds.provenance.origin = std::move(origin);
    return ds;
}

void normalize_samples(Matrix& x) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        double norm = 0.0;
        for (double v : row) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (double& v : row) v /= norm;
    }
}

}  // namespace invsen::datagen
