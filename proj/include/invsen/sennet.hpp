#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "invsen/numkit/matrix.hpp"
#include "invsen/numkit/mlp.hpp"

namespace invsen::sennet {

using numkit::Matrix;
using numkit::Mode;

struct SEModelConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden{64, 64, 64};  // ReLU layers
    std::size_t embed_dim = 64;                   // tanh output layer
    double alpha = 1.0;
    bool learn_alpha = false;
    double beta_init = 0.1;
    // Off: c_ij pairs the key embedding of the reconstructed sample j with the
    // query embedding of the contributing sample i. On: the roles are exchanged.
    bool swap_roles = false;
};

/// Key/query self-expressive model, c_ij = alpha * T_beta(<key_j, query_i>).
struct SEModel {
    numkit::MlpParams key_net;
    numkit::MlpParams query_net;
    double beta_raw = 0.0;  // beta = softplus(beta_raw) keeps the threshold non-negative
    double alpha = 1.0;
    bool learn_alpha = false;
    bool swap_roles = false;

    double beta() const;
    std::size_t input_dim() const { return key_net.input_width(); }
    std::size_t embed_dim() const { return key_net.output_width(); }
    void validate() const;
};

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

SEModel make_model(const SEModelConfig& config, std::uint64_t seed);

/// sign(t) * max(0, |t| - beta)
double soft_threshold(double t, double beta);
/// delta*|c| + (1-delta)/2 * c^2
double elastic_net_reg(double c, double delta);

struct Embedding {
    Matrix u;  // key outputs
    Matrix v;  // query outputs
};

struct EmbeddingPass {
    Embedding embedding;
    numkit::MlpCache key_cache;
    numkit::MlpCache query_cache;
};

EmbeddingPass embed(const SEModel& model, const Matrix& x, Mode mode);

/// c(i, j) is the weight of sample i in the reconstruction of sample j, so
/// column j holds the self-expression of sample j. Same-set matrices have an
/// exactly zero diagonal.
struct CoefficientMatrix {
    Matrix c;
};

/// Coefficients of one sample set against itself; the diagonal is masked.
CoefficientMatrix coefficients(const SEModel& model, const Matrix& x, Mode mode);
/// Block of coefficients of `queries` (rows, contributors) for `keys` (columns,
/// reconstructed samples). No masking: the sets are treated as distinct.
CoefficientMatrix coefficients(const SEModel& model, const Matrix& queries, const Matrix& keys, Mode mode);
/// Same-set coefficients from precomputed embeddings.
CoefficientMatrix coefficients_from_embedding(const SEModel& model, const Embedding& emb);

struct SELossTerms {
    double loss = 0.0;
    double reconstruction = 0.0;
    double regularization = 0.0;
    Matrix grad_u;
    Matrix grad_v;
    double grad_beta_raw = 0.0;
    double grad_alpha = 0.0;  // zero unless model.learn_alpha
    CoefficientMatrix coefficients;
};

/// L = gamma/(2n) sum_j ||x_j - sum_{i!=j} c_ij x_i||^2 + 1/n sum_{i!=j} r(c_ij),
/// with gradients w.r.t. the embeddings, beta_raw and alpha.
SELossTerms se_loss_terms(const SEModel& model, const Matrix& batch, const Embedding& emb, double gamma,
                          double delta);

struct SEGradients {
    numkit::MlpGrads key;
    numkit::MlpGrads query;
    double beta_raw = 0.0;
    double alpha = 0.0;
};

struct SELossResult {
    double loss = 0.0;
    SEGradients grads;
};

/// Full forward + backward of the self-expression loss (train mode).
SELossResult se_loss(const SEModel& model, const Matrix& batch, double gamma, double delta);

/// Key net, query net, beta_raw, alpha (fixed order shared with the optimizer).
std::vector<std::span<double>> parameter_views(SEModel& model);
std::vector<std::span<const double>> gradient_views(const SEGradients& grads);
SEGradients zero_gradients(const SEModel& model);

}  // namespace invsen::sennet
