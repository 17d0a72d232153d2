#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "invsen/numkit/matrix.hpp"
#include "invsen/numkit/mlp.hpp"
#include "invsen/sennet.hpp"

namespace invsen::debias {

using numkit::Matrix;
using numkit::Mode;

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;

struct BiasHeadsConfig {
    std::vector<std::size_t> hidden{64, 32, 16};  // FC + batchnorm + ReLU each
    std::size_t n_classes = 2;
};

/// Bias classifiers g (over key embeddings u) and g' (over query embeddings v).
struct BiasHeads {
    numkit::MlpParams g;
    numkit::MlpParams g_prime;
    std::size_t n_classes = 2;

    void validate(std::size_t embed_dim) const;
};

BiasHeads make_heads(std::size_t embed_dim, const BiasHeadsConfig& config, std::uint64_t seed);

struct LossWeights {
    double lambda = 1.0;  // bias mitigation strength
    double mu = 1.0;      // cross-entropy relaxation weight
    double gamma = 200.0; // self-expression weight
    double delta = 0.9;   // elastic-net L1/L2 mix

    void validate() const;
};

Matrix softmax_rows(const Matrix& logits);

struct Posterior {
    Matrix logits;
    Matrix probs;
    numkit::MlpCache cache;
};

/// Class posterior of one head; rows sum to one.
Posterior head_posterior(const numkit::MlpParams& head, const Matrix& emb, Mode mode);
Matrix bias_posterior(const numkit::MlpParams& head, const Matrix& emb, Mode mode = Mode::eval);

/// Mean of -log p(true class).
double cross_entropy_loss(const Matrix& probs, std::span<const int> labels);
/// Mean over rows of sum_k p_k log p_k, i.e. minus the posterior entropy.
double entropy_confusion_loss(const Matrix& probs);
/// Mean posterior entropy (no clamping).
double mean_entropy(const Matrix& probs);
/// Fraction of rows whose argmax equals the label.
double head_accuracy(const Matrix& probs, std::span<const int> labels);

/// Gradients w.r.t. the logits that produced `probs` (softmax Jacobian applied).
Matrix cross_entropy_grad_logits(const Matrix& probs, std::span<const int> labels);
Matrix entropy_confusion_grad_logits(const Matrix& probs);

struct CombinedLosses {
    double l_se = 0.0;
    double l_ce_key = 0.0;
    double l_ce_query = 0.0;
    double l_conf_key = 0.0;
    double l_conf_query = 0.0;
    double total_report = 0.0;  // l_se + lambda*(conf terms) + mu*(ce terms)
};

double total_report(const CombinedLosses& l, const LossWeights& w);

/// Every term of the combined objective for one batch; no parameter updates.
CombinedLosses combined_losses(const sennet::SEModel& model, const BiasHeads& heads, const Matrix& batch,
                               std::span<const int> labels, const LossWeights& weights,
                               Mode mode = Mode::train);

void check_labels(std::span<const int> labels, std::size_t n_rows, std::size_t n_classes);

}  // namespace invsen::debias
