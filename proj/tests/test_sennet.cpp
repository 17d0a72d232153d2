#include <doctest.h>

#include <cmath>
#include <vector>

#include "invsen/error.hpp"
#include "invsen/numkit/gradcheck.hpp"
#include "invsen/numkit/rng.hpp"
#include "invsen/sennet.hpp"

using namespace invsen;
using namespace invsen::sennet;
using numkit::Activation;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    numkit::Rng rng(seed);
    Matrix m(r, c);
    for (double& v : m.values()) v = rng.normal();
    return m;
}

SEModel small_model(std::uint64_t seed, double beta = 0.05, bool learn_alpha = false) {
    SEModelConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden = {6, 5};
    cfg.embed_dim = 4;
    cfg.beta_init = beta;
    cfg.learn_alpha = learn_alpha;
    cfg.alpha = 0.8;
    return make_model(cfg, seed);
}

// A single linear layer with zero weights: every sample maps to `bias`.
numkit::MlpParams constant_net(std::size_t in, std::vector<double> bias) {
    numkit::MlpParams p;
    p.layers.push_back({Matrix(in, bias.size()), std::move(bias), Activation::none, std::nullopt});
    return p;
}

double dot_rows(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
    return s;
}

// Loss written out directly from the coefficient definition, in long double.
long double oracle_loss(const Matrix& x, const Matrix& u, const Matrix& v, double alpha, double beta, double gamma,
                        double delta) {
    const std::size_t n = x.rows();
    long double rec = 0, reg = 0;
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<long double> r(x.cols());
        for (std::size_t k = 0; k < x.cols(); ++k) r[k] = x(j, k);
        for (std::size_t i = 0; i < n; ++i) {
            if (i == j) continue;
            long double t = 0;
            for (std::size_t k = 0; k < u.cols(); ++k) t += static_cast<long double>(u(j, k)) * v(i, k);
            long double c = 0;
            if (t > beta) c = alpha * (t - beta);
            if (t < -beta) c = alpha * (t + beta);
            for (std::size_t k = 0; k < x.cols(); ++k) r[k] -= c * x(i, k);
            reg += delta * std::fabs(c) + 0.5L * (1 - delta) * c * c;
        }
        for (long double e : r) rec += e * e;
    }
    return gamma / (2.0L * n) * rec + reg / n;
}

}  // namespace

TEST_CASE("soft threshold") {
    CHECK(soft_threshold(0.7, 1.0) == 0.0);
    CHECK(soft_threshold(1.5, 1.0) == doctest::Approx(0.5));
    CHECK(soft_threshold(-1.5, 1.0) == doctest::Approx(-0.5));
    CHECK(soft_threshold(-1.0, 1.0) == 0.0);
    CHECK(soft_threshold(0.3, 0.0) == 0.3);
}

TEST_CASE("elastic-net regularizer") {
    CHECK(elastic_net_reg(0.0, 0.9) == 0.0);
    CHECK(elastic_net_reg(2.0, 1.0) == doctest::Approx(2.0));
    CHECK(elastic_net_reg(-2.0, 0.9) == doctest::Approx(2.0));
    CHECK(elastic_net_reg(1.3, 0.4) == elastic_net_reg(-1.3, 0.4));
}

TEST_CASE("softplus reparameterization round-trips") {
    for (double y : {1e-6, 0.1, 1.0, 5.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
    CHECK(softplus(-800.0) >= 0.0);
    CHECK(std::isfinite(softplus(800.0)));
    CHECK_THROWS_AS(softplus_inverse(0.0), Error);
    const SEModel m = small_model(1, 0.1);
    CHECK(m.beta() == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("rigged embeddings u = v = e1 give unit off-diagonal coefficients") {
    SEModel m = small_model(2);
    m.key_net = constant_net(3, {1.0, 0.0, 0.0, 0.0});
    m.query_net = constant_net(3, {1.0, 0.0, 0.0, 0.0});
    m.alpha = 1.0;
    m.beta_raw = -1e4;  // softplus underflows to exactly 0
    REQUIRE(m.beta() == 0.0);
    const Matrix x = random_matrix(5, 3, 3);
    const Matrix c = coefficients(m, x, Mode::eval).c;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(c(i, j) == (i == j ? 0.0 : 1.0));
}

TEST_CASE("threshold above every inner product zeroes the coefficients") {
    SEModel m = small_model(4);
    const Matrix x = random_matrix(6, 3, 5);
    const auto emb = embed(m, x, Mode::eval).embedding;
    double max_t = 0;
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) max_t = std::max(max_t, std::abs(dot_rows(emb.u, j, emb.v, i)));
    m.beta_raw = softplus_inverse(max_t + 0.01);
    const Matrix c = coefficients(m, x, Mode::eval).c;
    for (double v : c.values()) CHECK(v == 0.0);
}

TEST_CASE("coefficients match a recomputation from the two networks") {
    const SEModel m = small_model(6, 0.02);
    const Matrix x = random_matrix(4, 3, 7);
    const Matrix u = numkit::mlp_forward(m.key_net, x, Mode::eval).output;
    const Matrix v = numkit::mlp_forward(m.query_net, x, Mode::eval).output;
    const Matrix c = coefficients(m, x, Mode::eval).c;
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            const double expect = i == j ? 0.0 : m.alpha * soft_threshold(dot_rows(u, j, v, i), m.beta());
            CHECK(c(i, j) == doctest::Approx(expect).epsilon(1e-13));
            nonzero += c(i, j) != 0.0;
        }
    CHECK(nonzero > 0);

    // The cross-set block uses no mask: rows are queries, columns are keys.
    const Matrix y = random_matrix(3, 3, 8);
    const Matrix uy = numkit::mlp_forward(m.key_net, y, Mode::eval).output;
    const Matrix block = coefficients(m, x, y, Mode::eval).c;
    REQUIRE(block.rows() == 4);
    REQUIRE(block.cols() == 3);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(block(i, j) == doctest::Approx(m.alpha * soft_threshold(dot_rows(uy, j, v, i), m.beta())));
}

TEST_CASE("swapping roles transposes the pairing") {
    SEModel m = small_model(9, 0.01);
    const Matrix x = random_matrix(5, 3, 10);
    const Matrix c = coefficients(m, x, Mode::eval).c;
    m.swap_roles = true;
    const Matrix s = coefficients(m, x, Mode::eval).c;
    const auto emb = embed(m, x, Mode::eval).embedding;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            if (i == j) continue;
            CHECK(s(i, j) == doctest::Approx(m.alpha * soft_threshold(dot_rows(emb.u, i, emb.v, j), m.beta())));
        }
    CHECK(c != s);
}

TEST_CASE("coefficient properties: zero diagonal, sparsity monotone in beta, linear in alpha") {
    SEModel m = small_model(11, 0.001);
    const Matrix x = random_matrix(12, 3, 12);
    std::size_t last_zeros = 0;
    for (double beta : {0.001, 0.01, 0.05, 0.1, 0.3, 1.0}) {
        m.beta_raw = softplus_inverse(beta);
        const Matrix c = coefficients(m, x, Mode::eval).c;
        std::size_t zeros = 0;
        for (std::size_t i = 0; i < 12; ++i) {
            CHECK(c(i, i) == 0.0);
            for (std::size_t j = 0; j < 12; ++j) zeros += c(i, j) == 0.0;
        }
        CHECK(zeros >= last_zeros);
        last_zeros = zeros;
    }
    m.beta_raw = softplus_inverse(0.01);
    const Matrix c1 = coefficients(m, x, Mode::eval).c;
    m.alpha *= 2.0;
    const Matrix c2 = coefficients(m, x, Mode::eval).c;
    for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c2.values()[i] == 2.0 * c1.values()[i]);
}

TEST_CASE("coefficients reject a feature width mismatch") {
    const SEModel m = small_model(13);
    CHECK_THROWS_AS(coefficients(m, Matrix(4, 5), Mode::eval), Error);
}

TEST_CASE("loss with all coefficients zero and with a single sample") {
    SEModel m = small_model(14);
    m.beta_raw = softplus_inverse(1e3);
    const Matrix x = random_matrix(5, 3, 15);
    double sq = 0;
    for (double v : x.values()) sq += v * v;
    const auto res = se_loss(m, x, 4.0, 0.9);
    CHECK(res.loss == doctest::Approx(4.0 / (2.0 * 5) * sq).epsilon(1e-13));
    for (auto g : gradient_views(res.grads))
        for (double v : g) CHECK(v == 0.0);

    const Matrix one = random_matrix(1, 3, 16);
    double sq1 = 0;
    for (double v : one.values()) sq1 += v * v;
    CHECK(se_loss(small_model(17), one, 3.0, 0.9).loss == doctest::Approx(1.5 * sq1).epsilon(1e-13));
}

TEST_CASE("hand-set embeddings: loss value and embedding gradients") {
    SEModel m = small_model(18, 0.1);
    const Matrix x{{1.0, 0.0, 0.2}, {0.9, 0.1, 0.0}, {-0.2, 1.0, 0.3}};
    Embedding emb;
    emb.u = Matrix{{0.8, -0.3}, {0.5, 0.6}, {-0.4, 0.95}};
    emb.v = Matrix{{0.7, 0.2}, {0.6, -0.5}, {0.1, 0.8}};
    m.key_net = constant_net(3, {0.0, 0.0});
    m.query_net = constant_net(3, {0.0, 0.0});
    const double gamma = 5.0, delta = 0.9;

    const auto terms = se_loss_terms(m, x, emb, gamma, delta);
    const long double expect = oracle_loss(x, emb.u, emb.v, m.alpha, m.beta(), gamma, delta);
    CHECK(terms.loss == doctest::Approx(static_cast<double>(expect)).epsilon(1e-13));
    CHECK(terms.loss == doctest::Approx(terms.reconstruction + terms.regularization).epsilon(1e-14));

    auto loss = [&] { return se_loss_terms(m, x, emb, gamma, delta).loss; };
    std::vector<std::span<double>> params{emb.u.values(), emb.v.values(), std::span<double>(&m.beta_raw, 1)};
    std::vector<std::span<const double>> grads{terms.grad_u.values(), terms.grad_v.values(),
                                               std::span<const double>(&terms.grad_beta_raw, 1)};
    const auto rep = numkit::finite_diff_check(loss, params, grads, 1e-4);
    INFO(rep.worst);
    CHECK(rep.pass);
}

TEST_CASE("loss gradients through both networks, beta and alpha") {
    SEModel m = small_model(19, 0.02, true);
    const Matrix x = random_matrix(7, 3, 20);
    const auto res = se_loss(m, x, 6.0, 0.9);
    CHECK(res.loss == doctest::Approx(static_cast<double>(oracle_loss(
                                          x, numkit::mlp_forward(m.key_net, x, Mode::train).output,
                                          numkit::mlp_forward(m.query_net, x, Mode::train).output, m.alpha,
                                          m.beta(), 6.0, 0.9)))
                             .epsilon(1e-12));
    CHECK(res.grads.alpha != 0.0);
    CHECK(res.grads.beta_raw != 0.0);
    auto loss = [&] { return se_loss(m, x, 6.0, 0.9).loss; };
    const auto rep = numkit::finite_diff_check(loss, parameter_views(m), gradient_views(res.grads), 1e-4);
    INFO(rep.worst);
    CHECK(rep.pass);
}

TEST_CASE("alpha stays fixed unless it is learnable") {
    SEModel m = small_model(21, 0.02, false);
    const auto res = se_loss(m, random_matrix(5, 3, 22), 6.0, 0.9);
    CHECK(res.grads.alpha == 0.0);
}
