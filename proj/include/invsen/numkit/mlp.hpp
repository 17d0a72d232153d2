#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invsen/numkit/matrix.hpp"
#include "invsen/numkit/rng.hpp"

namespace invsen::numkit {

enum class Activation { relu, tanh, none };
enum class Mode { train, eval };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct BatchNorm {
    std::vector<double> scale;
    std::vector<double> shift;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
    double epsilon = 1e-5;
};

/// One fully-connected layer: z = x W + b, optional batchnorm on z, then activation.
/// W is stored [in x out] so a row-major batch multiplies without transposes.
struct DenseLayer {
    Matrix weights;
    std::vector<double> bias;
    Activation activation = Activation::none;
    std::optional<BatchNorm> batchnorm;

    std::size_t in_width() const { return weights.rows(); }
    std::size_t out_width() const { return weights.cols(); }
};

struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t input_width() const;
    std::size_t output_width() const;
    /// Checks layer chaining, vector lengths and batchnorm settings.
    void validate() const;
};

enum class Init { glorot, he };

struct LayerSpec {
    std::size_t width = 0;
    Activation activation = Activation::none;
    bool batchnorm = false;
    Init init = Init::glorot;
};

/// Uniform weights in ±sqrt(6/(fan_in+fan_out)) (glorot) or ±sqrt(6/fan_in) (he);
/// zero biases, unit BN scale.
MlpParams make_mlp(std::size_t input_width, std::span<const LayerSpec> layers, Rng& rng);

struct LayerCache {
    Matrix input;
    Matrix normalized;  // x̂ when batchnorm is present
    Matrix output;      // post-activation
    std::vector<double> batch_mean;
    std::vector<double> batch_var;
    std::vector<double> inv_std;
};

struct MlpCache {
    Mode mode = Mode::eval;
    std::vector<LayerCache> layers;
};

struct MlpForward {
    Matrix output;
    MlpCache cache;
};

/// Pure forward pass. In train mode batchnorm uses batch statistics (biased variance)
/// and the cache carries them; commit_batch_stats() folds them into the running stats.
MlpForward mlp_forward(const MlpParams& params, const Matrix& input, Mode mode);

/// Apply the running-stat update recorded by a train-mode forward pass.
void commit_batch_stats(MlpParams& params, const MlpCache& cache);

struct LayerGrads {
    Matrix weights;
    std::vector<double> bias;
    std::vector<double> scale;  // empty without batchnorm
    std::vector<double> shift;
};

struct MlpGrads {
    std::vector<LayerGrads> layers;
};

struct MlpBackward {
    MlpGrads grads;
    Matrix grad_input;
};

MlpGrads zero_grads(const MlpParams& params);
MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& grad_output);

/// Trainable tensors in a fixed order: per layer weights, bias, [scale, shift].
std::vector<std::span<double>> parameter_views(MlpParams& params);
std::vector<std::span<const double>> gradient_views(const MlpGrads& grads);
std::vector<std::span<double>> gradient_views_mut(MlpGrads& grads);

}  // namespace invsen::numkit
