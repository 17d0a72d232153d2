#include "invsen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "invsen/fsutil.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::trainer {

void TrainConfig::validate() const {
    if (batch_size < 2) throw Error(ErrorKind::config, "batch_size must be >= 2");
    if (!(lr_main > 0.0) || !(lr_bias > 0.0)) throw Error(ErrorKind::config, "learning rates must be > 0");
    if (eval_every < 1) throw Error(ErrorKind::config, "eval_every must be >= 1");
    if (!(divergence_limit > 0.0)) throw Error(ErrorKind::config, "divergence_limit must be > 0");
    weights.validate();
}

TrainState init_state(const TrainConfig& config, std::size_t input_dim, std::size_t n_bias_classes) {
    config.validate();
    auto model_cfg = config.model;
    model_cfg.input_dim = input_dim;
    auto heads_cfg = config.heads;
    heads_cfg.n_classes = std::max<std::size_t>(heads_cfg.n_classes, n_bias_classes);

    TrainState state;
    state.seed = config.seed;
    state.model = sennet::make_model(model_cfg, numkit::derive_seed(config.seed, "sennet"));
    state.heads = debias::make_heads(model_cfg.embed_dim, heads_cfg, numkit::derive_seed(config.seed, "debias"));
    state.opt_main = numkit::make_adam(sennet::parameter_views(state.model), {.lr = config.lr_main});
    auto head_views = numkit::parameter_views(state.heads.g);
    auto gp = numkit::parameter_views(state.heads.g_prime);
    head_views.insert(head_views.end(), gp.begin(), gp.end());
    state.opt_bias = numkit::make_adam(head_views, {.lr = config.lr_bias});
    return state;
}

namespace {

// out += scale * add
void accumulate(Matrix& out, const Matrix& add, double scale) {
    numkit::require_shape(add, out.rows(), out.cols(), "gradient accumulation");
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += scale * add.data()[i];
}

}  // namespace

StepReport train_step(TrainState& state, const Matrix& batch, std::span<const int> labels,
                      const debias::LossWeights& weights, double divergence_limit, const StepOptions& options) {
    weights.validate();
    if (batch.rows() < 2) throw Error(ErrorKind::config, "train_step: batch needs at least 2 samples");
    const bool has_labels = !labels.empty();
    if (!has_labels && weights.lambda > 0.0) {
        throw Error(ErrorKind::config, "train_step: bias labels are required when lambda > 0");
    }
    if (has_labels) debias::check_labels(labels, batch.rows(), state.heads.n_classes);

    auto& model = state.model;
    auto pass = sennet::embed(model, batch, numkit::Mode::train);
    const auto& emb = pass.embedding;
    auto se = sennet::se_loss_terms(model, batch, emb, weights.gamma, weights.delta);

    StepReport report;
    report.losses.l_se = se.loss;

    Matrix grad_u = se.grad_u;
    Matrix grad_v = se.grad_v;
    if (options.capture_boundary) report.grad_u_se = se.grad_u;

    std::optional<debias::Posterior> post_k, post_q;
    numkit::MlpGrads head_g_grads, head_gp_grads;
    if (has_labels) {
        post_k = debias::head_posterior(state.heads.g, emb.u, numkit::Mode::train);
        post_q = debias::head_posterior(state.heads.g_prime, emb.v, numkit::Mode::train);
        report.losses.l_ce_key = debias::cross_entropy_loss(post_k->probs, labels);
        report.losses.l_ce_query = debias::cross_entropy_loss(post_q->probs, labels);
        report.losses.l_conf_key = debias::entropy_confusion_loss(post_k->probs);
        report.losses.l_conf_query = debias::entropy_confusion_loss(post_q->probs);
        report.acc_key = debias::head_accuracy(post_k->probs, labels);
        report.acc_query = debias::head_accuracy(post_q->probs, labels);
    }
    report.losses.total_report = debias::total_report(report.losses, weights);
    if (!std::isfinite(report.losses.total_report) || report.losses.total_report > divergence_limit) {
        std::ostringstream os;
        os << "training diverged at epoch " << state.epoch + 1 << ": l_se=" << report.losses.l_se
           << " total=" << report.losses.total_report;
        throw DivergenceError(os.str(), state);
    }

    if (has_labels) {
        // Heads: cross-entropy only. Their backward passes also give the
        // gradient of each loss term at the embedding boundary.
        const auto ce_k = numkit::mlp_backward(state.heads.g, post_k->cache,
                                               debias::cross_entropy_grad_logits(post_k->probs, labels));
        const auto ce_q = numkit::mlp_backward(state.heads.g_prime, post_q->cache,
                                               debias::cross_entropy_grad_logits(post_q->probs, labels));
        head_g_grads = ce_k.grads;
        head_gp_grads = ce_q.grads;
        if (weights.lambda != 0.0) {
            const auto conf_k = numkit::mlp_backward(state.heads.g, post_k->cache,
                                                     debias::entropy_confusion_grad_logits(post_k->probs));
            const auto conf_q = numkit::mlp_backward(state.heads.g_prime, post_q->cache,
                                                     debias::entropy_confusion_grad_logits(post_q->probs));
            accumulate(grad_u, conf_k.grad_input, weights.lambda);
            accumulate(grad_v, conf_q.grad_input, weights.lambda);
            // Gradient reversal: the feature nets ascend the heads' cross-entropy.
            accumulate(grad_u, ce_k.grad_input, -weights.lambda * weights.mu);
            accumulate(grad_v, ce_q.grad_input, -weights.lambda * weights.mu);
            if (options.capture_boundary) report.grad_u_conf_head = conf_k.grad_input;
        }
        if (options.capture_boundary) {
            report.grad_u_ce_head = ce_k.grad_input;
            report.grad_v_ce_head = ce_q.grad_input;
        }
    }
    if (options.capture_boundary) {
        report.grad_u_applied = grad_u;
        report.grad_v_applied = grad_v;
    }

    // Feature-net gradients, computed before any parameter changes.
    sennet::SEGradients main_grads;
    main_grads.key = numkit::mlp_backward(model.key_net, pass.key_cache, grad_u).grads;
    main_grads.query = numkit::mlp_backward(model.query_net, pass.query_cache, grad_v).grads;
    main_grads.beta_raw = se.grad_beta_raw;
    main_grads.alpha = se.grad_alpha;

    if (has_labels) {
        auto head_params = numkit::parameter_views(state.heads.g);
        auto gp_params = numkit::parameter_views(state.heads.g_prime);
        head_params.insert(head_params.end(), gp_params.begin(), gp_params.end());
        auto head_grads = numkit::gradient_views(head_g_grads);
        auto gp_grads = numkit::gradient_views(head_gp_grads);
        head_grads.insert(head_grads.end(), gp_grads.begin(), gp_grads.end());
        numkit::adam_step(state.opt_bias, head_params, head_grads);
        numkit::commit_batch_stats(state.heads.g, post_k->cache);
        numkit::commit_batch_stats(state.heads.g_prime, post_q->cache);
        report.heads_updated = true;
    }

    numkit::adam_step(state.opt_main, sennet::parameter_views(model), sennet::gradient_views(main_grads));
    numkit::commit_batch_stats(model.key_net, pass.key_cache);
    numkit::commit_batch_stats(model.query_net, pass.query_cache);
    if (model.learn_alpha) model.alpha = std::max(model.alpha, 1e-12);
    return report;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
    if (batch_size < 2) throw Error(ErrorKind::config, "batch_size must be >= 2");
    if (n < 2) throw Error(ErrorKind::config, "need at least 2 samples to train");
    numkit::Rng rng(numkit::derive_seed(numkit::derive_seed(seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    const auto perm = rng.permutation(n);
    // Near-equal batch sizes so every sample is used once per epoch.
    const std::size_t count = std::max<std::size_t>(1, n / batch_size);
    std::vector<std::vector<std::size_t>> batches(count);
    for (std::size_t b = 0; b < count; ++b) {
        const std::size_t begin = b * n / count;
        const std::size_t end = (b + 1) * n / count;
        batches[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

namespace {

std::size_t bias_class_count(const datagen::Dataset& ds) {
    if (!ds.b || ds.b->empty()) return 0;
    return static_cast<std::size_t>(*std::max_element(ds.b->begin(), ds.b->end()) + 1);
}

}  // namespace

void resume_fit(TrainState& state, const TrainConfig& config, const datagen::Dataset& dataset,
                const EpochCallback& on_epoch) {
    config.validate();
    dataset.validate();
    if (config.weights.lambda > 0.0 && !dataset.b) {
        throw Error(ErrorKind::config, "dataset '" + dataset.name + "' has no bias labels but lambda > 0");
    }
    if (dataset.d() != state.model.input_dim()) {
        throw Error(ErrorKind::shape, "dataset width " + std::to_string(dataset.d()) + " does not match model input " +
                                          std::to_string(state.model.input_dim()));
    }
    std::vector<int> batch_labels;
    while (state.epoch < config.epochs) {
        const auto batches = epoch_batches(dataset.n(), config.batch_size, state.seed, state.epoch);
        EpochRecord rec;
        rec.epoch = state.epoch + 1;
        for (const auto& idx : batches) {
            const Matrix batch = numkit::gather_rows(dataset.x, idx);
            batch_labels.clear();
            if (dataset.b)
                for (auto i : idx) batch_labels.push_back((*dataset.b)[i]);
            const auto report = train_step(state, batch, batch_labels, config.weights, config.divergence_limit);
            rec.l_se += report.losses.l_se;
            rec.l_conf_key += report.losses.l_conf_key;
            rec.l_conf_query += report.losses.l_conf_query;
            rec.l_ce_key += report.losses.l_ce_key;
            rec.l_ce_query += report.losses.l_ce_query;
            rec.bias_head_acc += 0.5 * (report.acc_key + report.acc_query);
        }
        const double nb = static_cast<double>(batches.size());
        rec.l_se /= nb;
        rec.l_conf_key /= nb;
        rec.l_conf_query /= nb;
        rec.l_ce_key /= nb;
        rec.l_ce_query /= nb;
        rec.bias_head_acc /= nb;
        state.history.push_back(rec);
        ++state.epoch;
        if (config.checkpoint_path && (state.epoch % config.eval_every == 0 || state.epoch == config.epochs)) {
            save_checkpoint(state, config, *config.checkpoint_path);
        }
        if (on_epoch) on_epoch(state);
    }
}

TrainState fit(const TrainConfig& config, const datagen::Dataset& dataset, const EpochCallback& on_epoch) {
    config.validate();
    if (config.weights.lambda > 0.0 && !dataset.b) {
        throw Error(ErrorKind::config, "dataset '" + dataset.name + "' has no bias labels but lambda > 0");
    }
    TrainState state = init_state(config, dataset.d(), bias_class_count(dataset));
    resume_fit(state, config, dataset, on_epoch);
    return state;
}

std::string history_csv(const std::vector<EpochRecord>& history, std::size_t eval_every) {
    std::ostringstream os;
    for (std::size_t c = 0; c < kHistoryColumns.size(); ++c) os << (c ? "," : "") << kHistoryColumns[c];
    os << '\n';
    const std::size_t every = std::max<std::size_t>(1, eval_every);
    for (std::size_t i = 0; i < history.size(); ++i) {
        const auto& r = history[i];
        if (r.epoch % every != 0 && i + 1 != history.size()) continue;
        os << r.epoch << ',' << format_double(r.l_se) << ',' << format_double(r.l_conf_key) << ','
           << format_double(r.l_conf_query) << ',' << format_double(r.l_ce_key) << ','
           << format_double(r.l_ce_query) << ',' << format_double(r.bias_head_acc) << '\n';
    }
    return os.str();
}

}  // namespace invsen::trainer
