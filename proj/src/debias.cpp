#include "invsen/debias.hpp"

#include <algorithm>
#include <cmath>

#include "invsen/error.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::debias {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Pull a gradient w.r.t. softmax outputs back to the logits.
Matrix softmax_backward(const Matrix& probs, const Matrix& grad_probs) {
    Matrix out(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double inner = 0.0;
        for (std::size_t k = 0; k < probs.cols(); ++k) inner += probs(r, k) * grad_probs(r, k);
        for (std::size_t k = 0; k < probs.cols(); ++k) out(r, k) = probs(r, k) * (grad_probs(r, k) - inner);
    }
    return out;
}
}  // namespace

void BiasHeads::validate(std::size_t embed_dim) const {
    g.validate();
    g_prime.validate();
    if (n_classes < 2) throw Error(ErrorKind::config, "bias heads need at least 2 classes");
    for (const auto* head : {&g, &g_prime}) {
        if (head->input_width() != embed_dim) {
            throw Error(ErrorKind::shape, "bias head input width " + std::to_string(head->input_width()) +
                                              " does not match embedding width " + std::to_string(embed_dim));
        }
        if (head->output_width() != n_classes) {
            throw Error(ErrorKind::shape, "bias head output width does not match class count");
        }
    }
}

BiasHeads make_heads(std::size_t embed_dim, const BiasHeadsConfig& config, std::uint64_t seed) {
    if (config.n_classes < 2) throw Error(ErrorKind::config, "bias heads need at least 2 classes");
    std::vector<numkit::LayerSpec> specs;
    for (std::size_t w : config.hidden) specs.push_back({w, numkit::Activation::relu, true});
    specs.push_back({config.n_classes, numkit::Activation::none, false});
    numkit::Rng g_rng(numkit::derive_seed(seed, "bias_head_key"));
    numkit::Rng gp_rng(numkit::derive_seed(seed, "bias_head_query"));
    BiasHeads heads;
    heads.g = numkit::make_mlp(embed_dim, specs, g_rng);
    heads.g_prime = numkit::make_mlp(embed_dim, specs, gp_rng);
    heads.n_classes = config.n_classes;
    return heads;
}

void LossWeights::validate() const {
    if (!(lambda >= 0.0) || !(mu >= 0.0)) throw Error(ErrorKind::config, "lambda and mu must be >= 0");
    if (!(gamma > 0.0)) throw Error(ErrorKind::config, "gamma must be > 0");
    if (!(delta >= 0.0 && delta <= 1.0)) throw Error(ErrorKind::config, "delta must lie in [0, 1]");
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix probs(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto z = logits.row(r);
        const double zmax = *std::max_element(z.begin(), z.end());
        double total = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            probs(r, k) = std::exp(z[k] - zmax);
            total += probs(r, k);
        }
        for (std::size_t k = 0; k < z.size(); ++k) probs(r, k) /= total;
    }
    return probs;
}

Posterior head_posterior(const numkit::MlpParams& head, const Matrix& emb, Mode mode) {
    if (!emb.all_finite()) throw Error(ErrorKind::numerical, "bias_posterior: non-finite embedding");
    auto fwd = numkit::mlp_forward(head, emb, mode);
    Posterior post;
    post.probs = softmax_rows(fwd.output);
    post.logits = std::move(fwd.output);
    post.cache = std::move(fwd.cache);
    return post;
}

Matrix bias_posterior(const numkit::MlpParams& head, const Matrix& emb, Mode mode) {
    return head_posterior(head, emb, mode).probs;
}

void check_labels(std::span<const int> labels, std::size_t n_rows, std::size_t n_classes) {
    if (labels.size() != n_rows) {
        throw Error(ErrorKind::shape, "bias labels: " + std::to_string(labels.size()) + " labels for " +
                                          std::to_string(n_rows) + " samples");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
            throw Error(ErrorKind::config, "bias label " + std::to_string(labels[i]) + " at sample " +
                                               std::to_string(i) + " outside [0, " + std::to_string(n_classes) +
                                               ")");
        }
    }
}

double cross_entropy_loss(const Matrix& probs, std::span<const int> labels) {
    check_labels(labels, probs.rows(), probs.cols());
    if (probs.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r) total -= std::log(clamp_prob(probs(r, labels[r])));
    return total / static_cast<double>(probs.rows());
}

double entropy_confusion_loss(const Matrix& probs) {
    if (probs.rows() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r)
        for (std::size_t k = 0; k < probs.cols(); ++k) total += probs(r, k) * std::log(clamp_prob(probs(r, k)));
    return total / static_cast<double>(probs.rows());
}

double mean_entropy(const Matrix& probs) {
    if (probs.rows() == 0) return 0.0;
    double total = 0.0;
    for (double p : probs.values())
        if (p > 0.0) total -= p * std::log(p);
    return total / static_cast<double>(probs.rows());
}

double head_accuracy(const Matrix& probs, std::span<const int> labels) {
    check_labels(labels, probs.rows(), probs.cols());
    if (probs.rows() == 0) return 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto row = probs.row(r);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

Matrix cross_entropy_grad_logits(const Matrix& probs, std::span<const int> labels) {
    check_labels(labels, probs.rows(), probs.cols());
    // Log-softmax gradient (p - onehot) / n. The clamp only guards the logged
    // value, so a confidently wrong head still receives a gradient.
    Matrix grad = probs;
    const double nn = static_cast<double>(std::max<std::size_t>(1, probs.rows()));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        grad(r, static_cast<std::size_t>(labels[r])) -= 1.0;
        for (double& g : grad.row(r)) g /= nn;
    }
    return grad;
}

Matrix entropy_confusion_grad_logits(const Matrix& probs) {
    Matrix grad_probs(probs.rows(), probs.cols());
    const double nn = static_cast<double>(std::max<std::size_t>(1, probs.rows()));
    for (std::size_t r = 0; r < probs.rows(); ++r)
        for (std::size_t k = 0; k < probs.cols(); ++k) {
            grad_probs(r, k) = (std::log(clamp_prob(probs(r, k))) + 1.0) / nn;
        }
    return softmax_backward(probs, grad_probs);
}

double total_report(const CombinedLosses& l, const LossWeights& w) {
    return l.l_se + w.lambda * (l.l_conf_key + l.l_conf_query) + w.mu * (l.l_ce_key + l.l_ce_query);
}

CombinedLosses combined_losses(const sennet::SEModel& model, const BiasHeads& heads, const Matrix& batch,
                               std::span<const int> labels, const LossWeights& weights, Mode mode) {
    weights.validate();
    heads.validate(model.embed_dim());
    check_labels(labels, batch.rows(), heads.n_classes);
    const auto pass = sennet::embed(model, batch, mode);
    const auto se = sennet::se_loss_terms(model, batch, pass.embedding, weights.gamma, weights.delta);
    const Matrix pk = bias_posterior(heads.g, pass.embedding.u, mode);
    const Matrix pq = bias_posterior(heads.g_prime, pass.embedding.v, mode);
    CombinedLosses out;
    out.l_se = se.loss;
    out.l_ce_key = cross_entropy_loss(pk, labels);
    out.l_ce_query = cross_entropy_loss(pq, labels);
    out.l_conf_key = entropy_confusion_loss(pk);
    out.l_conf_query = entropy_confusion_loss(pq);
    out.total_report = total_report(out, weights);
    return out;
}

}  // namespace invsen::debias
