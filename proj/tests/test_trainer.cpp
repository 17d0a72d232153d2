#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "invsen/datagen.hpp"
#include "invsen/fsutil.hpp"
#include "invsen/numkit/rng.hpp"
#include "invsen/trainer.hpp"

using namespace invsen;
using namespace invsen::trainer;
using numkit::Mode;

namespace {

TrainConfig small_config(double lambda, double mu = 1.0) {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 5;
    cfg.weights.lambda = lambda;
    cfg.weights.mu = mu;
    cfg.weights.gamma = 20.0;
    cfg.model.hidden = {8, 8};
    cfg.model.embed_dim = 6;
    cfg.heads.hidden = {6, 4};
    cfg.lr_bias = 1e-3;
    return cfg;
}

datagen::Dataset small_data(std::uint64_t seed = 3, double bias_strength = 0.5) {
    datagen::DataGenConfig g;
    g.k_subspaces = 2;
    g.ambient_dim = 6;
    g.subspace_rank = 2;
    g.n_per_cluster = 24;
    g.bias_strength = bias_strength;
    g.bias_flip_e = 0.1;
    g.seed = seed;
    auto ds = datagen::generate(g);
    datagen::normalize_samples(ds.x);
    return ds;
}

Matrix batch_of(const datagen::Dataset& ds, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i * (ds.n() / n);
    return numkit::gather_rows(ds.x, idx);
}

std::vector<int> labels_of(const datagen::Dataset& ds, std::size_t n) {
    std::vector<int> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = (*ds.b)[i * (ds.n() / n)];
    return b;
}

std::vector<double> flatten(std::vector<std::span<double>> views) {
    std::vector<double> out;
    for (auto v : views) out.insert(out.end(), v.begin(), v.end());
    return out;
}

std::vector<double> model_params(TrainState& s) { return flatten(sennet::parameter_views(s.model)); }

std::vector<double> head_params(TrainState& s) {
    auto v = numkit::parameter_views(s.heads.g);
    auto w = numkit::parameter_views(s.heads.g_prime);
    v.insert(v.end(), w.begin(), w.end());
    return flatten(v);
}

// Adam's first step written out: m_hat = g, v_hat = g^2.
void first_adam_step(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads, double lr) {
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t].size(); ++i) {
            const double g = grads[t][i];
            params[t][i] -= lr * g / (std::abs(g) + 1e-8);
        }
}

void add_scaled(Matrix& out, const Matrix& add, double s) {
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] += s * add.values()[i];
}

}  // namespace

TEST_CASE("epoch batches partition the samples and depend only on seed and epoch") {
    const auto a = epoch_batches(50, 16, 9, 2);
    const auto b = epoch_batches(50, 16, 9, 2);
    CHECK(a == b);
    CHECK(a != epoch_batches(50, 16, 9, 3));
    CHECK(a != epoch_batches(50, 16, 10, 2));
    std::set<std::size_t> seen;
    for (const auto& batch : a) {
        CHECK(batch.size() >= 16);
        seen.insert(batch.begin(), batch.end());
    }
    CHECK(seen.size() == 50);
    CHECK(epoch_batches(5, 16, 0, 0).size() == 1);
    CHECK_THROWS_AS(epoch_batches(50, 1, 0, 0), Error);
}

TEST_CASE("with lambda = mu = 0 the feature nets take a pure self-expression step") {
    const auto ds = small_data();
    auto cfg = small_config(0.0, 0.0);
    TrainState with_heads = init_state(cfg, ds.d(), 2);
    TrainState plain = init_state(cfg, ds.d(), 2);
    const auto heads_before = head_params(with_heads);
    const Matrix x = batch_of(ds, 12);
    const auto b = labels_of(ds, 12);
    for (int step = 0; step < 3; ++step) {
        const auto r1 = train_step(with_heads, x, b, cfg.weights);
        const auto r2 = train_step(plain, x, {}, cfg.weights);
        CHECK(r1.heads_updated);
        CHECK_FALSE(r2.heads_updated);
        CHECK(r1.losses.total_report == r1.losses.l_se);
    }
    CHECK(model_params(with_heads) == model_params(plain));
    CHECK(head_params(with_heads) != heads_before);
    CHECK(head_params(plain) == heads_before);
}

TEST_CASE("one step matches a manual composition of the component operations") {
    const auto ds = small_data(4);
    const double lambda = 0.5, mu = 2.0;
    auto cfg = small_config(lambda, mu);
    TrainState state = init_state(cfg, ds.d(), 2);
    TrainState ref = state;
    const Matrix x = batch_of(ds, 4);
    const auto b = labels_of(ds, 4);

    const auto report = train_step(state, x, b, cfg.weights);

    // Straight-line recomputation.
    auto pass = sennet::embed(ref.model, x, Mode::train);
    const auto se = sennet::se_loss_terms(ref.model, x, pass.embedding, cfg.weights.gamma, cfg.weights.delta);
    const auto pk = debias::head_posterior(ref.heads.g, pass.embedding.u, Mode::train);
    const auto pq = debias::head_posterior(ref.heads.g_prime, pass.embedding.v, Mode::train);
    const auto ce_k = numkit::mlp_backward(ref.heads.g, pk.cache, debias::cross_entropy_grad_logits(pk.probs, b));
    const auto ce_q = numkit::mlp_backward(ref.heads.g_prime, pq.cache, debias::cross_entropy_grad_logits(pq.probs, b));
    const auto cf_k = numkit::mlp_backward(ref.heads.g, pk.cache, debias::entropy_confusion_grad_logits(pk.probs));
    const auto cf_q =
        numkit::mlp_backward(ref.heads.g_prime, pq.cache, debias::entropy_confusion_grad_logits(pq.probs));
    Matrix gu = se.grad_u, gv = se.grad_v;
    add_scaled(gu, cf_k.grad_input, lambda);
    add_scaled(gv, cf_q.grad_input, lambda);
    add_scaled(gu, ce_k.grad_input, -lambda * mu);
    add_scaled(gv, ce_q.grad_input, -lambda * mu);
    sennet::SEGradients mg;
    mg.key = numkit::mlp_backward(ref.model.key_net, pass.key_cache, gu).grads;
    mg.query = numkit::mlp_backward(ref.model.query_net, pass.query_cache, gv).grads;
    mg.beta_raw = se.grad_beta_raw;
    mg.alpha = se.grad_alpha;

    auto hp = numkit::parameter_views(ref.heads.g);
    auto hq = numkit::parameter_views(ref.heads.g_prime);
    hp.insert(hp.end(), hq.begin(), hq.end());
    auto hg = numkit::gradient_views(ce_k.grads);
    auto hgq = numkit::gradient_views(ce_q.grads);
    hg.insert(hg.end(), hgq.begin(), hgq.end());
    first_adam_step(hp, hg, cfg.lr_bias);
    first_adam_step(sennet::parameter_views(ref.model), sennet::gradient_views(mg), cfg.lr_main);
    numkit::commit_batch_stats(ref.heads.g, pk.cache);
    numkit::commit_batch_stats(ref.heads.g_prime, pq.cache);

    CHECK(report.losses.l_se == se.loss);
    CHECK(report.losses.l_ce_key == debias::cross_entropy_loss(pk.probs, b));
    CHECK(report.losses.l_conf_query == debias::entropy_confusion_loss(pq.probs));

    const auto got_m = model_params(state), want_m = model_params(ref);
    const auto got_h = head_params(state), want_h = head_params(ref);
    REQUIRE(got_m.size() == want_m.size());
    REQUIRE(got_h.size() == want_h.size());
    double worst = 0;
    for (std::size_t i = 0; i < got_m.size(); ++i) worst = std::max(worst, std::abs(got_m[i] - want_m[i]));
    for (std::size_t i = 0; i < got_h.size(); ++i) worst = std::max(worst, std::abs(got_h[i] - want_h[i]));
    CHECK(worst < 1e-13);
    for (std::size_t l = 0; l < ref.heads.g.layers.size(); ++l) {
        if (!ref.heads.g.layers[l].batchnorm) continue;
        CHECK(state.heads.g.layers[l].batchnorm->running_mean == ref.heads.g.layers[l].batchnorm->running_mean);
    }
    CHECK(state.opt_main.t == 1);
    CHECK(state.opt_bias.t == 1);
}

TEST_CASE("the cross-entropy signal reaches the feature nets reversed and scaled by lambda*mu") {
    const auto ds = small_data(6);
    const double lambda = 0.8, mu = 1.5;
    auto cfg = small_config(lambda, mu);
    TrainState state = init_state(cfg, ds.d(), 2);
    const auto r = train_step(state, batch_of(ds, 12), labels_of(ds, 12), cfg.weights, 1e6, {true});
    REQUIRE(r.grad_u_ce_head.size() > 0);
    double ce_mass = 0, worst = 0;
    for (std::size_t i = 0; i < r.grad_u_applied.size(); ++i) {
        const double from_ce =
            r.grad_u_applied.values()[i] - r.grad_u_se.values()[i] - lambda * r.grad_u_conf_head.values()[i];
        worst = std::max(worst, std::abs(from_ce + lambda * mu * r.grad_u_ce_head.values()[i]));
        ce_mass += std::abs(r.grad_u_ce_head.values()[i]);
    }
    CHECK(ce_mass > 0.0);
    CHECK(worst < 1e-15);
}

TEST_CASE("optimizers only touch their own parameters") {
    const auto ds = small_data(7);
    auto cfg = small_config(1.0);
    TrainState state = init_state(cfg, ds.d(), 2);
    std::size_t main_count = 0, bias_count = 0;
    for (const auto& m : state.opt_main.m) main_count += m.size();
    for (const auto& m : state.opt_bias.m) bias_count += m.size();
    CHECK(main_count == model_params(state).size());
    CHECK(bias_count == head_params(state).size());
    CHECK(state.opt_main.config.lr == cfg.lr_main);
    CHECK(state.opt_bias.config.lr == cfg.lr_bias);

    // With the main learning rate negligible the feature nets barely move,
    // while the heads move by about lr_bias per coordinate.
    cfg.lr_main = 1e-300;
    TrainState frozen = init_state(cfg, ds.d(), 2);
    const auto m0 = model_params(frozen);
    const auto h0 = head_params(frozen);
    train_step(frozen, batch_of(ds, 12), labels_of(ds, 12), cfg.weights);
    const auto m1 = model_params(frozen);
    const auto h1 = head_params(frozen);
    for (std::size_t i = 0; i < m0.size(); ++i) CHECK(std::abs(m1[i] - m0[i]) <= 1e-299);
    CHECK(h1 != h0);
}

TEST_CASE("fit with zero epochs returns the initial state") {
    const auto ds = small_data();
    auto cfg = small_config(1.0);
    cfg.epochs = 0;
    TrainState fitted = fit(cfg, ds);
    TrainState fresh = init_state(cfg, ds.d(), 2);
    CHECK(fitted.history.empty());
    CHECK(fitted.epoch == 0);
    CHECK(model_params(fitted) == model_params(fresh));
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto ds = small_data();
    const auto cfg = small_config(1.0);
    const TrainState a = fit(cfg, ds);
    const TrainState b = fit(cfg, ds);
    CHECK(serialize_checkpoint(a, cfg) == serialize_checkpoint(b, cfg));
    CHECK(a.history == b.history);
    auto other = cfg;
    other.seed = 6;
    CHECK(serialize_checkpoint(fit(other, ds), cfg) != serialize_checkpoint(a, cfg));
}

TEST_CASE("missing bias labels with lambda > 0 is a configuration error") {
    auto ds = small_data();
    ds.b.reset();
    try {
        fit(small_config(1.0), ds);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
    CHECK_NOTHROW(fit(small_config(0.0), ds));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const auto ds = small_data();
    const auto cfg = small_config(1.0);
    TrainState s = fit(cfg, ds);
    const std::string bytes = serialize_checkpoint(s, cfg);
    REQUIRE(bytes.substr(0, 8) == "INVSEN01");
    Checkpoint ck = deserialize_checkpoint(bytes);
    CHECK(serialize_checkpoint(ck.state, ck.config) == bytes);
    CHECK(model_params(ck.state) == model_params(s));
    CHECK(head_params(ck.state) == head_params(s));
    CHECK(ck.state.opt_main.m == s.opt_main.m);
    CHECK(ck.state.opt_bias.v == s.opt_bias.v);
    CHECK(ck.state.opt_main.t == s.opt_main.t);
    CHECK(ck.state.history == s.history);
    CHECK(ck.state.epoch == 3);
    CHECK(ck.config.weights.lambda == cfg.weights.lambda);
    CHECK(ck.config.model.hidden == cfg.model.hidden);

    const auto dir = std::filesystem::temp_directory_path() / "invsen_test_trainer";
    std::filesystem::create_directories(dir);
    save_checkpoint(s, cfg, dir / "ck.bin");
    CHECK(read_file(dir / "ck.bin") == bytes);
    CHECK(serialize_checkpoint(load_checkpoint(dir / "ck.bin").state, cfg) == bytes);
    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto ds = small_data();
    const auto cfg = small_config(1.0);
    const std::string bytes = serialize_checkpoint(init_state(cfg, ds.d(), 2), cfg);
    auto expect_format_error = [](const std::string& b) {
        try {
            deserialize_checkpoint(b);
            FAIL("expected a format error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::format);
        }
    };
    std::string bad_magic = bytes;
    bad_magic[7] = '2';
    expect_format_error(bad_magic);
    expect_format_error(bytes.substr(0, bytes.size() - 8));
    expect_format_error(bytes.substr(0, bytes.size() - 3));
    expect_format_error(bytes.substr(0, 12));
    std::string wrong_version = bytes;
    const auto pos = wrong_version.find("\"version\":1");
    REQUIRE(pos != std::string::npos);
    wrong_version[pos + 10] = '7';
    expect_format_error(wrong_version);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/invsen/ck.bin"), Error);
}

TEST_CASE("resuming from a checkpoint reproduces an uninterrupted run") {
    const auto ds = small_data();
    auto cfg = small_config(1.0);
    cfg.epochs = 4;
    const TrainState full = fit(cfg, ds);

    auto half = cfg;
    half.epochs = 2;
    const TrainState first = fit(half, ds);
    Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(first, half));
    resume_fit(ck.state, cfg, ds);
    CHECK(ck.state.epoch == 4);
    CHECK(serialize_checkpoint(ck.state, cfg) == serialize_checkpoint(full, cfg));
}

TEST_CASE("divergence aborts with the pre-step state") {
    const auto ds = small_data();
    auto cfg = small_config(1.0);
    TrainState state = init_state(cfg, ds.d(), 2);
    const auto before = serialize_checkpoint(state, cfg);
    try {
        train_step(state, batch_of(ds, 12), labels_of(ds, 12), cfg.weights, 1e-9);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.kind() == ErrorKind::numerical);
        CHECK(serialize_checkpoint(e.snapshot(), cfg) == before);
    }
    CHECK(serialize_checkpoint(state, cfg) == before);
}

TEST_CASE("self-expression loss falls on clean two-subspace data") {
    const auto ds = small_data(11, 0.0);
    auto cfg = small_config(0.0);
    cfg.epochs = 60;
    const TrainState s = fit(cfg, ds);
    REQUIRE(s.history.size() == 60);
    CHECK(s.history.back().l_se < 0.5 * s.history.front().l_se);
}

TEST_CASE("history csv keeps every eval_every-th epoch and the last one") {
    std::vector<EpochRecord> h;
    for (std::size_t e = 1; e <= 5; ++e) h.push_back({e, 0.5 * static_cast<double>(e), -0.6, -0.6, 0.7, 0.7, 0.5});
    const std::string csv = history_csv(h, 2);
    CHECK(csv ==
          "epoch,l_se,l_conf_key,l_conf_query,l_ce_key,l_ce_query,bias_head_acc\n"
          "2,1,-0.6,-0.6,0.7,0.7,0.5\n"
          "4,2,-0.6,-0.6,0.7,0.7,0.5\n"
          "5,2.5,-0.6,-0.6,0.7,0.7,0.5\n");
}

TEST_CASE("configuration validation") {
    auto cfg = small_config(1.0);
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config(1.0);
    cfg.lr_bias = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = small_config(1.0);
    cfg.weights.lambda = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
