#include "invsen/numkit/mlp.hpp"

#include <cmath>

#include "invsen/error.hpp"

namespace invsen::numkit {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::none: return "none";
    }
    return "none";
}

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "none") return Activation::none;
    throw Error(ErrorKind::format, "unknown activation '" + s + "'");
}

std::size_t MlpParams::input_width() const { return layers.empty() ? 0 : layers.front().in_width(); }

std::size_t MlpParams::output_width() const { return layers.empty() ? 0 : layers.back().out_width(); }

void MlpParams::validate() const {
    if (layers.empty()) throw Error(ErrorKind::shape, "mlp has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::string where = "layer " + std::to_string(l);
        if (l > 0 && layer.in_width() != layers[l - 1].out_width()) {
            throw Error(ErrorKind::shape, where + ": input width " + std::to_string(layer.in_width()) +
                                              " does not chain from " +
                                              std::to_string(layers[l - 1].out_width()));
        }
        if (layer.bias.size() != layer.out_width()) throw Error(ErrorKind::shape, where + ": bias length");
        if (const auto& bn = layer.batchnorm) {
            const std::size_t w = layer.out_width();
            if (bn->scale.size() != w || bn->shift.size() != w || bn->running_mean.size() != w ||
                bn->running_var.size() != w) {
                throw Error(ErrorKind::shape, where + ": batchnorm vector length");
            }
            if (!(bn->epsilon > 0.0)) throw Error(ErrorKind::config, where + ": batchnorm epsilon must be > 0");
        }
    }
}

MlpParams make_mlp(std::size_t input_width, std::span<const LayerSpec> specs, Rng& rng) {
    MlpParams params;
    std::size_t in = input_width;
    for (const auto& spec : specs) {
        DenseLayer layer;
        layer.weights = Matrix(in, spec.width);
        const double fan = spec.init == Init::he ? static_cast<double>(in) : static_cast<double>(in + spec.width);
        const double limit = std::sqrt(6.0 / fan);
        for (double& w : layer.weights.values()) w = rng.uniform(-limit, limit);
        layer.bias.assign(spec.width, 0.0);
        layer.activation = spec.activation;
        if (spec.batchnorm) {
            BatchNorm bn;
            bn.scale.assign(spec.width, 1.0);
            bn.shift.assign(spec.width, 0.0);
            bn.running_mean.assign(spec.width, 0.0);
            bn.running_var.assign(spec.width, 1.0);
            layer.batchnorm = std::move(bn);
        }
        params.layers.push_back(std::move(layer));
        in = spec.width;
    }
    params.validate();
    return params;
}

namespace {

void apply_activation(Matrix& m, Activation a) {
    switch (a) {
    case Activation::relu:
        for (double& x : m.values()) x = x > 0.0 ? x : 0.0;
        break;
    case Activation::tanh:
        for (double& x : m.values()) x = std::tanh(x);
        break;
    case Activation::none: break;
    }
}

// grad wrt pre-activation given grad wrt output and the output itself.
void activation_backward(Matrix& grad, const Matrix& output, Activation a) {
    double* g = grad.data();
    const double* y = output.data();
    switch (a) {
    case Activation::relu:
        for (std::size_t i = 0; i < grad.size(); ++i)
            if (!(y[i] > 0.0)) g[i] = 0.0;
        break;
    case Activation::tanh:
        for (std::size_t i = 0; i < grad.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
        break;
    case Activation::none: break;
    }
}

}  // namespace

MlpForward mlp_forward(const MlpParams& params, const Matrix& input, Mode mode) {
    if (params.layers.empty()) throw Error(ErrorKind::shape, "mlp has no layers");
    MlpForward result;
    result.cache.mode = mode;
    result.cache.layers.reserve(params.layers.size());
    Matrix current = input;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        if (current.cols() != layer.in_width()) {
            throw Error(ErrorKind::shape, "mlp_forward layer " + std::to_string(l) + ": input has " +
                                              std::to_string(current.cols()) + " columns, layer expects " +
                                              std::to_string(layer.in_width()));
        }
        LayerCache lc;
        lc.input = current;
        Matrix z = matmul(current, layer.weights);
        const std::size_t n = z.rows();
        const std::size_t w = z.cols();
        for (std::size_t r = 0; r < n; ++r) {
            auto row = z.row(r);
            for (std::size_t c = 0; c < w; ++c) row[c] += layer.bias[c];
        }
        if (const auto& bn = layer.batchnorm) {
            lc.inv_std.assign(w, 0.0);
            if (mode == Mode::train) {
                if (n == 0) throw Error(ErrorKind::shape, "batchnorm needs a non-empty batch");
                lc.batch_mean.assign(w, 0.0);
                lc.batch_var.assign(w, 0.0);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < w; ++c) lc.batch_mean[c] += z(r, c);
                for (double& m : lc.batch_mean) m /= static_cast<double>(n);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < w; ++c) {
                        const double d = z(r, c) - lc.batch_mean[c];
                        lc.batch_var[c] += d * d;
                    }
                for (double& v : lc.batch_var) v /= static_cast<double>(n);
            }
            const auto& mean = mode == Mode::train ? lc.batch_mean : bn->running_mean;
            const auto& var = mode == Mode::train ? lc.batch_var : bn->running_var;
            for (std::size_t c = 0; c < w; ++c) lc.inv_std[c] = 1.0 / std::sqrt(var[c] + bn->epsilon);
            lc.normalized = Matrix(n, w);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    const double xhat = (z(r, c) - mean[c]) * lc.inv_std[c];
                    lc.normalized(r, c) = xhat;
                    z(r, c) = bn->scale[c] * xhat + bn->shift[c];
                }
        }
        apply_activation(z, layer.activation);
        lc.output = z;
        current = std::move(z);
        result.cache.layers.push_back(std::move(lc));
    }
    result.output = std::move(current);
    return result;
}

void commit_batch_stats(MlpParams& params, const MlpCache& cache) {
    if (cache.mode != Mode::train) return;
    if (cache.layers.size() != params.layers.size()) {
        throw Error(ErrorKind::shape, "commit_batch_stats: cache does not match network");
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& bn = params.layers[l].batchnorm;
        if (!bn) continue;
        const auto& lc = cache.layers[l];
        if (lc.batch_mean.size() != bn->running_mean.size()) {
            throw Error(ErrorKind::shape, "commit_batch_stats: stale cache at layer " + std::to_string(l));
        }
        for (std::size_t c = 0; c < lc.batch_mean.size(); ++c) {
            bn->running_mean[c] = bn->momentum * bn->running_mean[c] + (1.0 - bn->momentum) * lc.batch_mean[c];
            bn->running_var[c] = bn->momentum * bn->running_var[c] + (1.0 - bn->momentum) * lc.batch_var[c];
        }
    }
}

MlpGrads zero_grads(const MlpParams& params) {
    MlpGrads g;
    for (const auto& layer : params.layers) {
        LayerGrads lg;
        lg.weights = Matrix(layer.in_width(), layer.out_width());
        lg.bias.assign(layer.out_width(), 0.0);
        if (layer.batchnorm) {
            lg.scale.assign(layer.out_width(), 0.0);
            lg.shift.assign(layer.out_width(), 0.0);
        }
        g.layers.push_back(std::move(lg));
    }
    return g;
}

MlpBackward mlp_backward(const MlpParams& params, const MlpCache& cache, const Matrix& grad_output) {
    if (cache.layers.size() != params.layers.size()) {
        throw Error(ErrorKind::shape, "mlp_backward: cache has " + std::to_string(cache.layers.size()) +
                                          " layers, network has " + std::to_string(params.layers.size()));
    }
    const auto& last = cache.layers.back();
    require_shape(grad_output, last.output.rows(), last.output.cols(), "mlp_backward grad_output");

    MlpBackward result;
    result.grads = zero_grads(params);
    Matrix grad = grad_output;
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        const auto& lc = cache.layers[l];
        if (lc.input.cols() != layer.in_width() || lc.output.cols() != layer.out_width()) {
            throw Error(ErrorKind::shape, "mlp_backward: stale cache at layer " + std::to_string(l));
        }
        auto& lg = result.grads.layers[l];
        activation_backward(grad, lc.output, layer.activation);
        const std::size_t n = grad.rows();
        const std::size_t w = grad.cols();
        if (const auto& bn = layer.batchnorm) {
            if (lc.normalized.rows() != n || lc.inv_std.size() != w) {
                throw Error(ErrorKind::shape, "mlp_backward: stale batchnorm cache at layer " + std::to_string(l));
            }
            std::vector<double> sum_dxhat(w, 0.0), sum_dxhat_xhat(w, 0.0);
            Matrix dxhat(n, w);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    const double g = grad(r, c);
                    lg.shift[c] += g;
                    lg.scale[c] += g * lc.normalized(r, c);
                    const double d = g * bn->scale[c];
                    dxhat(r, c) = d;
                    sum_dxhat[c] += d;
                    sum_dxhat_xhat[c] += d * lc.normalized(r, c);
                }
            const double nn = static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < w; ++c) {
                    if (cache.mode == Mode::train) {
                        grad(r, c) = lc.inv_std[c] / nn *
                                     (nn * dxhat(r, c) - sum_dxhat[c] - lc.normalized(r, c) * sum_dxhat_xhat[c]);
                    } else {
                        grad(r, c) = dxhat(r, c) * lc.inv_std[c];
                    }
                }
        }
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) lg.bias[c] += grad(r, c);
        lg.weights = matmul_tn(lc.input, grad);
        grad = matmul_nt(grad, layer.weights);
    }
    result.grad_input = std::move(grad);
    return result;
}

std::vector<std::span<double>> parameter_views(MlpParams& params) {
    std::vector<std::span<double>> views;
    for (auto& layer : params.layers) {
        views.emplace_back(layer.weights.values());
        views.emplace_back(layer.bias);
        if (layer.batchnorm) {
            views.emplace_back(layer.batchnorm->scale);
            views.emplace_back(layer.batchnorm->shift);
        }
    }
    return views;
}

std::vector<std::span<const double>> gradient_views(const MlpGrads& grads) {
    std::vector<std::span<const double>> views;
    for (const auto& lg : grads.layers) {
        views.emplace_back(lg.weights.values());
        views.emplace_back(lg.bias);
        if (!lg.scale.empty()) {
            views.emplace_back(lg.scale);
            views.emplace_back(lg.shift);
        }
    }
    return views;
}

std::vector<std::span<double>> gradient_views_mut(MlpGrads& grads) {
    std::vector<std::span<double>> views;
    for (auto& lg : grads.layers) {
        views.emplace_back(lg.weights.values());
        views.emplace_back(lg.bias);
        if (!lg.scale.empty()) {
            views.emplace_back(lg.scale);
            views.emplace_back(lg.shift);
        }
    }
    return views;
}

}  // namespace invsen::numkit
