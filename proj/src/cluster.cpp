#include "invsen/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "invsen/error.hpp"
#include "invsen/fsutil.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::cluster {

void AffinityMatrix::validate() const {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw Error(ErrorKind::shape, "affinity must be square, got " + a.shape_string());
    for (std::size_t i = 0; i < n; ++i) {
        if (a(i, i) != 0.0) throw Error(ErrorKind::numerical, "affinity has a non-zero diagonal entry");
        for (std::size_t j = 0; j < n; ++j) {
            const double v = a(i, j);
            if (!std::isfinite(v) || v < 0.0) throw Error(ErrorKind::numerical, "affinity entry is negative or not finite");
            if (v != a(j, i)) throw Error(ErrorKind::numerical, "affinity is not symmetric");
        }
    }
}

AffinityMatrix affinity_from_coefficients(const sennet::CoefficientMatrix& coef) {
    const Matrix& c = coef.c;
    if (c.rows() != c.cols()) throw Error(ErrorKind::shape, "coefficient matrix must be square, got " + c.shape_string());
    const std::size_t n = c.rows();
    AffinityMatrix out{Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out.a(i, j) = i == j ? 0.0 : std::abs(c(i, j)) + std::abs(c(j, i));
        }
    }
    out.validate();
    return out;
}

AffinityMatrix build_affinity(const sennet::SEModel& model, const Matrix& x) {
    if (x.rows() < 2) throw Error(ErrorKind::shape, "affinity needs at least 2 samples");
    return affinity_from_coefficients(sennet::coefficients(model, x, numkit::Mode::eval));
}

std::string affinity_csv(const AffinityMatrix& a) {
    std::ostringstream os;
    os << "n=" << a.n() << '\n';
    for (std::size_t i = 0; i < a.n(); ++i) {
        for (std::size_t j = 0; j < a.n(); ++j) {
            if (j) os << ',';
            os << format_double(a.a(i, j));
        }
        os << '\n';
    }
    return os.str();
}

void save_affinity_csv(const AffinityMatrix& a, const std::filesystem::path& path) {
    write_file_atomic(path, affinity_csv(a));
}

std::string to_string(LaplacianKind kind) {
    return kind == LaplacianKind::symmetric ? "symmetric" : "unnormalized";
}

LaplacianKind laplacian_from_string(const std::string& name) {
    if (name == "symmetric") return LaplacianKind::symmetric;
    if (name == "unnormalized") return LaplacianKind::unnormalized;
    throw Error(ErrorKind::config, "unknown laplacian '" + name + "' (expected symmetric or unnormalized)");
}

Matrix normalized_laplacian(const AffinityMatrix& a, LaplacianKind kind) {
    const std::size_t n = a.n();
    if (a.a.cols() != n) throw Error(ErrorKind::shape, "affinity must be square, got " + a.a.shape_string());
    std::vector<double> degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) degree[i] += a.a(i, j);
    }
    Matrix l(n, n);
    if (kind == LaplacianKind::unnormalized) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) l(i, j) = (i == j ? degree[i] : 0.0) - a.a(i, j);
        }
        return l;
    }
    std::vector<double> inv_sqrt(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            l(i, j) = (i == j ? 1.0 : 0.0) - (inv_sqrt[i] * inv_sqrt[j]) * a.a(i, j);  // exact symmetry
        }
    }
    return l;
}

EigenPairs smallest_eigenvectors(const Matrix& l, std::size_t k, double tol) {
    const std::size_t n = l.rows();
    if (l.cols() != n) throw Error(ErrorKind::shape, "eigen input must be square, got " + l.shape_string());
    if (k == 0 || k > n) {
        throw Error(ErrorKind::shape, "requested " + std::to_string(k) + " eigenvectors of a " + std::to_string(n) +
                                          "x" + std::to_string(n) + " matrix");
    }
    if (!l.all_finite()) throw Error(ErrorKind::numerical, "eigen input has non-finite entries");

    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMajor> lm(l.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd sym = 0.5 * (lm + lm.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    if (solver.info() != Eigen::Success) throw Error(ErrorKind::numerical, "symmetric eigensolver did not converge");

    EigenPairs out;
    out.vectors = Matrix(n, k);
    for (std::size_t j = 0; j < k; ++j) {
        Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(j));
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        const double lambda = solver.eigenvalues()(static_cast<Eigen::Index>(j));
        out.values.push_back(lambda);
        out.residuals.push_back((lm * v - lambda * v).norm());
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(static_cast<Eigen::Index>(i));
    }
    if (*std::max_element(out.residuals.begin(), out.residuals.end()) > tol) {
        std::ostringstream os;
        os << "eigenpair residuals exceed " << tol << ":";
        for (double r : out.residuals) os << ' ' << r;
        throw Error(ErrorKind::numerical, os.str());
    }
    return out;
}

Matrix row_normalize(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        double ss = 0.0;
        for (double v : row) ss += v * v;
        if (ss > 0.0) {
            const double inv = 1.0 / std::sqrt(ss);
            for (double& v : row) v *= inv;
        }
    }
    return out;
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Matrix plus_plus_init(const Matrix& x, std::size_t k, numkit::Rng& rng) {
    const std::size_t n = x.rows();
    Matrix centers(k, x.cols());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t pick = static_cast<std::size_t>(rng.below(n));
    for (std::size_t c = 0; c < k; ++c) {
        std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(x.row(i), centers.row(c)));
            total += d2[i];
        }
        if (c + 1 == k) break;
        if (total <= 0.0) {
            pick = static_cast<std::size_t>(rng.below(n));
            continue;
        }
        const double target = rng.uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc > target && d2[i] > 0.0) {
                pick = i;
                break;
            }
        }
    }
    return centers;
}

KMeansResult lloyd(const Matrix& x, Matrix centers, std::size_t max_iter) {
    const std::size_t n = x.rows();
    const std::size_t k = centers.rows();
    std::vector<int> assign(n, -1);
    for (std::size_t it = 0; it < std::max<std::size_t>(max_iter, 1); ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist(x.row(i), centers.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(x.row(i), centers.row(c));
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed) break;
        Matrix sums(k, x.cols());
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(assign[i]);
            ++count[c];
            auto s = sums.row(c);
            const auto r = x.row(i);
            for (std::size_t f = 0; f < x.cols(); ++f) s[f] += r[f];
        }
        // Empty clusters keep their previous center.
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0) continue;
            auto dst = centers.row(c);
            const auto s = sums.row(c);
            for (std::size_t f = 0; f < x.cols(); ++f) dst[f] = s[f] / static_cast<double>(count[c]);
        }
    }
    KMeansResult out;
    for (std::size_t i = 0; i < n; ++i) out.wcss += sq_dist(x.row(i), centers.row(static_cast<std::size_t>(assign[i])));
    out.labels = ClusterLabels{std::move(assign), k};
    out.centers = std::move(centers);
    return out;
}

}  // namespace

KMeansResult kmeans_fit(const Matrix& rows, std::size_t k, std::size_t restarts, std::size_t max_iter,
                        std::uint64_t seed) {
    const std::size_t n = rows.rows();
    if (k == 0) throw Error(ErrorKind::config, "k-means needs k >= 1");
    if (k > n) {
        throw Error(ErrorKind::config, "k-means with k=" + std::to_string(k) + " exceeds the " + std::to_string(n) +
                                           " available points");
    }
    if (!rows.all_finite()) throw Error(ErrorKind::numerical, "k-means input has non-finite entries");
    KMeansResult best;
    best.wcss = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
        numkit::Rng rng(numkit::derive_seed(seed, static_cast<std::uint64_t>(r)));
        KMeansResult trial = lloyd(rows, plus_plus_init(rows, k, rng), max_iter);
        if (trial.wcss < best.wcss) best = std::move(trial);
    }
    return best;
}

ClusterLabels kmeans(const Matrix& rows, std::size_t k, std::size_t restarts, std::size_t max_iter,
                     std::uint64_t seed) {
    return kmeans_fit(rows, k, restarts, max_iter, seed).labels;
}

void SpectralConfig::validate() const {
    if (k == 0) throw Error(ErrorKind::config, "spectral clustering needs k >= 1");
    if (kmeans_restarts == 0) throw Error(ErrorKind::config, "kmeans_restarts must be >= 1");
    if (kmeans_max_iter == 0) throw Error(ErrorKind::config, "kmeans_max_iter must be >= 1");
    if (!(eig_tol > 0.0)) throw Error(ErrorKind::config, "eig_tol must be positive");
}

ClusterLabels spectral_cluster(const AffinityMatrix& a, const SpectralConfig& config) {
    config.validate();
    a.validate();
    const std::size_t n = a.n();
    if (config.k > n) {
        throw Error(ErrorKind::config,
                    "k=" + std::to_string(config.k) + " exceeds the number of samples " + std::to_string(n));
    }
    if (config.k == 1) return ClusterLabels{std::vector<int>(n, 0), 1};
    const Matrix l = normalized_laplacian(a, config.laplacian);
    // The unnormalized Laplacian has eigenvalues up to twice the max degree.
    double scale = 1.0;
    if (config.laplacian == LaplacianKind::unnormalized) {
        for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(l(i, i)));
    }
    const EigenPairs eig = smallest_eigenvectors(l, config.k, config.eig_tol * scale);
    return kmeans(row_normalize(eig.vectors), config.k, config.kmeans_restarts, config.kmeans_max_iter,
                  numkit::derive_seed(config.seed, "kmeans"));
}

}  // namespace invsen::cluster
