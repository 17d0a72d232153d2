#include "invsen/sennet.hpp"

#include <cmath>

#include "invsen/error.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::sennet {

double softplus(double x) {
    // log(1 + e^x) without overflow for large |x|
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
    if (!(y > 0.0)) throw Error(ErrorKind::config, "softplus_inverse needs y > 0");
    return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double SEModel::beta() const { return softplus(beta_raw); }

void SEModel::validate() const {
    key_net.validate();
    query_net.validate();
    if (key_net.input_width() != query_net.input_width()) {
        throw Error(ErrorKind::shape, "key and query nets disagree on input width");
    }
    if (key_net.output_width() != query_net.output_width()) {
        throw Error(ErrorKind::shape, "key and query nets disagree on embedding width");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorKind::config, "alpha must be > 0");
}

SEModel make_model(const SEModelConfig& config, std::uint64_t seed) {
    if (config.input_dim == 0 || config.embed_dim == 0) {
        throw Error(ErrorKind::config, "model input and embedding widths must be positive");
    }
    std::vector<numkit::LayerSpec> specs;
    // He scaling keeps initial inner products clear of the soft-threshold dead zone.
    for (std::size_t w : config.hidden) specs.push_back({w, numkit::Activation::relu, false, numkit::Init::he});
    specs.push_back({config.embed_dim, numkit::Activation::tanh, false});

    numkit::Rng key_rng(numkit::derive_seed(seed, "key_net"));
    numkit::Rng query_rng(numkit::derive_seed(seed, "query_net"));
    SEModel model;
    model.key_net = numkit::make_mlp(config.input_dim, specs, key_rng);
    model.query_net = numkit::make_mlp(config.input_dim, specs, query_rng);
    model.beta_raw = softplus_inverse(config.beta_init);
    model.alpha = config.alpha;
    model.learn_alpha = config.learn_alpha;
    model.swap_roles = config.swap_roles;
    model.validate();
    return model;
}

double soft_threshold(double t, double beta) {
    if (t > beta) return t - beta;
    if (t < -beta) return t + beta;
    return 0.0;
}

double elastic_net_reg(double c, double delta) { return delta * std::abs(c) + 0.5 * (1.0 - delta) * c * c; }

EmbeddingPass embed(const SEModel& model, const Matrix& x, Mode mode) {
    auto key = numkit::mlp_forward(model.key_net, x, mode);
    auto query = numkit::mlp_forward(model.query_net, x, mode);
    EmbeddingPass pass;
    pass.embedding.u = std::move(key.output);
    pass.embedding.v = std::move(query.output);
    pass.key_cache = std::move(key.cache);
    pass.query_cache = std::move(query.cache);
    return pass;
}

namespace {

// Contributor-side and reconstructed-side embeddings for a same-set batch.
const Matrix& contributor_side(const SEModel& model, const Embedding& emb) {
    return model.swap_roles ? emb.u : emb.v;
}
const Matrix& reconstructed_side(const SEModel& model, const Embedding& emb) {
    return model.swap_roles ? emb.v : emb.u;
}

Matrix threshold_block(const SEModel& model, const Matrix& inner, bool mask_diagonal) {
    const double beta = model.beta();
    Matrix c(inner.rows(), inner.cols());
    for (std::size_t i = 0; i < inner.rows(); ++i)
        for (std::size_t j = 0; j < inner.cols(); ++j) {
            if (mask_diagonal && i == j) continue;
            c(i, j) = model.alpha * soft_threshold(inner(i, j), beta);
        }
    return c;
}

}  // namespace

CoefficientMatrix coefficients_from_embedding(const SEModel& model, const Embedding& emb) {
    const Matrix& a = contributor_side(model, emb);
    const Matrix& b = reconstructed_side(model, emb);
    return {threshold_block(model, numkit::matmul_nt(a, b), true)};
}

CoefficientMatrix coefficients(const SEModel& model, const Matrix& x, Mode mode) {
    return coefficients_from_embedding(model, embed(model, x, mode).embedding);
}

CoefficientMatrix coefficients(const SEModel& model, const Matrix& queries, const Matrix& keys, Mode mode) {
    if (queries.cols() != model.input_dim() || keys.cols() != model.input_dim()) {
        throw Error(ErrorKind::shape, "coefficients: feature width " + std::to_string(queries.cols()) + "/" +
                                          std::to_string(keys.cols()) + " does not match model input " +
                                          std::to_string(model.input_dim()));
    }
    const auto& contributor_net = model.swap_roles ? model.key_net : model.query_net;
    const auto& reconstructed_net = model.swap_roles ? model.query_net : model.key_net;
    const Matrix a = numkit::mlp_forward(contributor_net, queries, mode).output;
    const Matrix b = numkit::mlp_forward(reconstructed_net, keys, mode).output;
    return {threshold_block(model, numkit::matmul_nt(a, b), false)};
}

SELossTerms se_loss_terms(const SEModel& model, const Matrix& batch, const Embedding& emb, double gamma,
                          double delta) {
    const std::size_t n = batch.rows();
    if (n == 0) throw Error(ErrorKind::shape, "se_loss: empty batch");
    numkit::require_shape(emb.u, n, model.embed_dim(), "se_loss key embedding");
    numkit::require_shape(emb.v, n, model.embed_dim(), "se_loss query embedding");

    const Matrix& a = contributor_side(model, emb);
    const Matrix& b = reconstructed_side(model, emb);
    const Matrix inner = numkit::matmul_nt(a, b);
    const double beta = model.beta();
    const double nn = static_cast<double>(n);

    SELossTerms out;
    out.coefficients.c = threshold_block(model, inner, true);
    const Matrix& c = out.coefficients.c;

    // Row j of the residual is x_j minus its reconstruction sum_i c_ij x_i.
    Matrix residual = numkit::matmul_tn(c, batch);
    for (std::size_t k = 0; k < residual.size(); ++k) residual.data()[k] = batch.data()[k] - residual.data()[k];
    double sq = 0.0;
    for (double r : residual.values()) sq += r * r;
    out.reconstruction = gamma / (2.0 * nn) * sq;

    double reg = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) reg += elastic_net_reg(c(i, j), delta);
    out.regularization = reg / nn;
    out.loss = out.reconstruction + out.regularization;

    // dL/dc_ij = -(gamma/n) <x_i, r_j> + r'(c_ij)/n
    Matrix grad_c = numkit::matmul_nt(batch, residual);
    Matrix grad_inner(n, n);
    double grad_beta = 0.0;
    double grad_alpha = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double t = inner(i, j);
            if (std::abs(t) <= beta) continue;
            const double cij = c(i, j);
            const double sgn = cij > 0.0 ? 1.0 : (cij < 0.0 ? -1.0 : 0.0);
            const double dc = -gamma / nn * grad_c(i, j) + (delta * sgn + (1.0 - delta) * cij) / nn;
            grad_inner(i, j) = dc * model.alpha;
            grad_beta -= dc * model.alpha * (t > 0.0 ? 1.0 : -1.0);
            grad_alpha += dc * soft_threshold(t, beta);
        }
    out.grad_beta_raw = grad_beta * sigmoid(model.beta_raw);
    out.grad_alpha = model.learn_alpha ? grad_alpha : 0.0;

    Matrix grad_a = numkit::matmul(grad_inner, b);
    Matrix grad_b = numkit::matmul_tn(grad_inner, a);
    if (model.swap_roles) {
        out.grad_u = std::move(grad_a);
        out.grad_v = std::move(grad_b);
    } else {
        out.grad_v = std::move(grad_a);
        out.grad_u = std::move(grad_b);
    }
    return out;
}

SELossResult se_loss(const SEModel& model, const Matrix& batch, double gamma, double delta) {
    if (batch.cols() != model.input_dim()) {
        throw Error(ErrorKind::shape, "se_loss: batch width " + std::to_string(batch.cols()) +
                                          " does not match model input " + std::to_string(model.input_dim()));
    }
    auto pass = embed(model, batch, Mode::train);
    auto terms = se_loss_terms(model, batch, pass.embedding, gamma, delta);
    SELossResult result;
    result.loss = terms.loss;
    result.grads.key = numkit::mlp_backward(model.key_net, pass.key_cache, terms.grad_u).grads;
    result.grads.query = numkit::mlp_backward(model.query_net, pass.query_cache, terms.grad_v).grads;
    result.grads.beta_raw = terms.grad_beta_raw;
    result.grads.alpha = terms.grad_alpha;
    return result;
}

std::vector<std::span<double>> parameter_views(SEModel& model) {
    auto views = numkit::parameter_views(model.key_net);
    auto q = numkit::parameter_views(model.query_net);
    views.insert(views.end(), q.begin(), q.end());
    views.emplace_back(&model.beta_raw, 1);
    views.emplace_back(&model.alpha, 1);
    return views;
}

std::vector<std::span<const double>> gradient_views(const SEGradients& grads) {
    auto views = numkit::gradient_views(grads.key);
    auto q = numkit::gradient_views(grads.query);
    views.insert(views.end(), q.begin(), q.end());
    views.emplace_back(&grads.beta_raw, 1);
    views.emplace_back(&grads.alpha, 1);
    return views;
}

SEGradients zero_gradients(const SEModel& model) {
    return {numkit::zero_grads(model.key_net), numkit::zero_grads(model.query_net), 0.0, 0.0};
}

}  // namespace invsen::sennet
