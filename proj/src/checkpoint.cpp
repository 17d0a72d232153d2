#include <bit>
#include <cstring>
#include <map>

#include <json.hpp>

#include "invsen/fsutil.hpp"
#include "invsen/trainer.hpp"

namespace invsen::trainer {

using nlohmann::json;

namespace {

[[noreturn]] void corrupt(const std::string& origin, const std::string& what) {
    throw Error(ErrorKind::format, "checkpoint " + origin + ": " + what);
}

class TensorWriter {
  public:
    void add(const std::string& name, std::size_t rows, std::size_t cols, std::span<const double> data) {
        manifest_.push_back({{"name", name}, {"shape", {rows, cols}}, {"offset", payload_.size()}});
        payload_.insert(payload_.end(), data.begin(), data.end());
    }
    void add(const std::string& name, std::span<const double> data) { add(name, 1, data.size(), data); }
    void add(const std::string& name, const Matrix& m) { add(name, m.rows(), m.cols(), m.values()); }

    const json& manifest() const { return manifest_; }
    const std::vector<double>& payload() const { return payload_; }

  private:
    json manifest_ = json::array();
    std::vector<double> payload_;
};

class TensorReader {
  public:
    TensorReader(const json& manifest, std::vector<double> payload, std::string origin)
        : payload_(std::move(payload)), origin_(std::move(origin)) {
        for (const auto& entry : manifest) {
            const auto& shape = entry.at("shape");
            index_[entry.at("name").get<std::string>()] = {entry.at("offset").get<std::size_t>(),
                                                           shape.at(0).get<std::size_t>(),
                                                           shape.at(1).get<std::size_t>()};
        }
    }

    Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) const {
        const auto& e = find(name);
        if (e.rows != rows || e.cols != cols) corrupt(origin_, "tensor '" + name + "' has unexpected shape");
        const auto first = payload_.begin() + static_cast<std::ptrdiff_t>(e.offset);
        return Matrix(rows, cols, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(rows * cols)));
    }
    std::vector<double> vector(const std::string& name, std::size_t len) const {
        const Matrix m = matrix(name, 1, len);
        return {m.values().begin(), m.values().end()};
    }
    double scalar(const std::string& name) const { return matrix(name, 1, 1)(0, 0); }

  private:
    struct Entry {
        std::size_t offset = 0, rows = 0, cols = 0;
    };
    const Entry& find(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end()) corrupt(origin_, "missing tensor '" + name + "'");
        const auto& e = it->second;
        if (e.offset + e.rows * e.cols > payload_.size()) corrupt(origin_, "tensor '" + name + "' exceeds payload");
        return e;
    }
    std::map<std::string, Entry> index_;
    std::vector<double> payload_;
    std::string origin_;
};

// --- network structure ---------------------------------------------------

json mlp_structure(const numkit::MlpParams& mlp) {
    json layers = json::array();
    for (const auto& layer : mlp.layers) {
        json l = {{"in", layer.in_width()}, {"out", layer.out_width()}, {"activation", to_string(layer.activation)}};
        if (layer.batchnorm) {
            l["batchnorm"] = {{"momentum", layer.batchnorm->momentum}, {"epsilon", layer.batchnorm->epsilon}};
        } else {
            l["batchnorm"] = nullptr;
        }
        layers.push_back(l);
    }
    return layers;
}

void write_mlp(TensorWriter& w, const std::string& prefix, const numkit::MlpParams& mlp) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const auto& layer = mlp.layers[l];
        const std::string p = prefix + "." + std::to_string(l) + ".";
        w.add(p + "weights", layer.weights);
        w.add(p + "bias", layer.bias);
        if (const auto& bn = layer.batchnorm) {
            w.add(p + "scale", bn->scale);
            w.add(p + "shift", bn->shift);
            w.add(p + "running_mean", bn->running_mean);
            w.add(p + "running_var", bn->running_var);
        }
    }
}

numkit::MlpParams read_mlp(const TensorReader& r, const std::string& prefix, const json& structure) {
    numkit::MlpParams mlp;
    for (std::size_t l = 0; l < structure.size(); ++l) {
        const auto& s = structure[l];
        const std::string p = prefix + "." + std::to_string(l) + ".";
        const auto in = s.at("in").get<std::size_t>();
        const auto out = s.at("out").get<std::size_t>();
        numkit::DenseLayer layer;
        layer.weights = r.matrix(p + "weights", in, out);
        layer.bias = r.vector(p + "bias", out);
        layer.activation = numkit::activation_from_string(s.at("activation").get<std::string>());
        if (!s.at("batchnorm").is_null()) {
            numkit::BatchNorm bn;
            bn.momentum = s.at("batchnorm").at("momentum").get<double>();
            bn.epsilon = s.at("batchnorm").at("epsilon").get<double>();
            bn.scale = r.vector(p + "scale", out);
            bn.shift = r.vector(p + "shift", out);
            bn.running_mean = r.vector(p + "running_mean", out);
            bn.running_var = r.vector(p + "running_var", out);
            layer.batchnorm = std::move(bn);
        }
        mlp.layers.push_back(std::move(layer));
    }
    mlp.validate();
    return mlp;
}

json adam_header(const numkit::AdamState& s) {
    return {{"t", s.t},
            {"lr", s.config.lr},
            {"beta1", s.config.beta1},
            {"beta2", s.config.beta2},
            {"eps", s.config.eps},
            {"sizes", [&] {
                 json sizes = json::array();
                 for (const auto& m : s.m) sizes.push_back(m.size());
                 return sizes;
             }()}};
}

void write_adam(TensorWriter& w, const std::string& prefix, const numkit::AdamState& s) {
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        w.add(prefix + ".m." + std::to_string(i), s.m[i]);
        w.add(prefix + ".v." + std::to_string(i), s.v[i]);
    }
}

numkit::AdamState read_adam(const TensorReader& r, const std::string& prefix, const json& h) {
    numkit::AdamState s;
    s.t = h.at("t").get<std::uint64_t>();
    s.config.lr = h.at("lr").get<double>();
    s.config.beta1 = h.at("beta1").get<double>();
    s.config.beta2 = h.at("beta2").get<double>();
    s.config.eps = h.at("eps").get<double>();
    const auto& sizes = h.at("sizes");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        const auto len = sizes[i].get<std::size_t>();
        s.m.push_back(r.vector(prefix + ".m." + std::to_string(i), len));
        s.v.push_back(r.vector(prefix + ".v." + std::to_string(i), len));
    }
    return s;
}

// --- config ----------------------------------------------------------------

json config_to_json(const TrainConfig& c) {
    json j = {{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr_main", c.lr_main},
              {"lr_bias", c.lr_bias},
              {"lambda", c.weights.lambda},
              {"mu", c.weights.mu},
              {"gamma", c.weights.gamma},
              {"delta", c.weights.delta},
              {"seed", c.seed},
              {"eval_every", c.eval_every},
              {"divergence_limit", c.divergence_limit},
              {"model",
               {{"hidden", c.model.hidden},
                {"embed_dim", c.model.embed_dim},
                {"alpha", c.model.alpha},
                {"learn_alpha", c.model.learn_alpha},
                {"beta_init", c.model.beta_init},
                {"swap_roles", c.model.swap_roles}}},
              {"heads", {{"hidden", c.heads.hidden}, {"n_classes", c.heads.n_classes}}}};
    j["checkpoint_path"] = c.checkpoint_path ? json(c.checkpoint_path->string()) : json(nullptr);
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr_main = j.at("lr_main").get<double>();
    c.lr_bias = j.at("lr_bias").get<double>();
    c.weights.lambda = j.at("lambda").get<double>();
    c.weights.mu = j.at("mu").get<double>();
    c.weights.gamma = j.at("gamma").get<double>();
    c.weights.delta = j.at("delta").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.eval_every = j.at("eval_every").get<std::size_t>();
    c.divergence_limit = j.at("divergence_limit").get<double>();
    const auto& m = j.at("model");
    c.model.hidden = m.at("hidden").get<std::vector<std::size_t>>();
    c.model.embed_dim = m.at("embed_dim").get<std::size_t>();
    c.model.alpha = m.at("alpha").get<double>();
    c.model.learn_alpha = m.at("learn_alpha").get<bool>();
    c.model.beta_init = m.at("beta_init").get<double>();
    c.model.swap_roles = m.at("swap_roles").get<bool>();
    const auto& h = j.at("heads");
    c.heads.hidden = h.at("hidden").get<std::vector<std::size_t>>();
    c.heads.n_classes = h.at("n_classes").get<std::size_t>();
    if (!j.at("checkpoint_path").is_null()) c.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    return c;
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
    return v;
}

}  // namespace

std::string serialize_checkpoint(const TrainState& state, const TrainConfig& config) {
    TensorWriter w;
    write_mlp(w, "model.key", state.model.key_net);
    write_mlp(w, "model.query", state.model.query_net);
    w.add("model.beta_raw", std::span<const double>(&state.model.beta_raw, 1));
    w.add("model.alpha", std::span<const double>(&state.model.alpha, 1));
    write_mlp(w, "heads.g", state.heads.g);
    write_mlp(w, "heads.g_prime", state.heads.g_prime);
    write_adam(w, "opt_main", state.opt_main);
    write_adam(w, "opt_bias", state.opt_bias);
    Matrix history(state.history.size(), kHistoryColumns.size());
    for (std::size_t i = 0; i < state.history.size(); ++i) {
        const auto& r = state.history[i];
        const double row[] = {static_cast<double>(r.epoch), r.l_se, r.l_conf_key,
                              r.l_conf_query, r.l_ce_key, r.l_ce_query, r.bias_head_acc};
        std::copy(std::begin(row), std::end(row), history.row(i).begin());
    }
    w.add("history", history);

    json manifest = {
        {"format", "invsen-checkpoint"},
        {"version", kCheckpointVersion},
        {"epoch", state.epoch},
        {"seed", state.seed},
        // Shuffling is a pure function of (seed, epoch); this is the stream position.
        {"rng", {{"stream", "shuffle"}, {"seed", state.seed}, {"next_epoch", state.epoch}}},
        {"config", config_to_json(config)},
        {"model",
         {{"key_net", mlp_structure(state.model.key_net)},
          {"query_net", mlp_structure(state.model.query_net)},
          {"learn_alpha", state.model.learn_alpha},
          {"swap_roles", state.model.swap_roles}}},
        {"heads",
         {{"n_classes", state.heads.n_classes},
          {"g", mlp_structure(state.heads.g)},
          {"g_prime", mlp_structure(state.heads.g_prime)}}},
        {"opt_main", adam_header(state.opt_main)},
        {"opt_bias", adam_header(state.opt_bias)},
        {"history_columns", kHistoryColumns},
        {"tensors", w.manifest()},
    };
    const std::string text = manifest.dump();

    std::string out(kCheckpointMagic);
    put_u64(out, text.size());
    out += text;
    const auto& payload = w.payload();
    out.reserve(out.size() + payload.size() * 8);
    for (double v : payload) put_u64(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
    if (bytes.size() < kCheckpointMagic.size() + 8 || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
        corrupt(origin, "bad magic header (expected INVSEN01)");
    }
    bytes.remove_prefix(kCheckpointMagic.size());
    const std::uint64_t manifest_len = get_u64(bytes);
    bytes.remove_prefix(8);
    if (manifest_len > bytes.size()) corrupt(origin, "truncated manifest");

    json manifest;
    try {
        manifest = json::parse(bytes.substr(0, manifest_len));
    } catch (const json::exception& e) {
        corrupt(origin, std::string("manifest is not valid JSON: ") + e.what());
    }
    bytes.remove_prefix(manifest_len);
    if (bytes.size() % 8 != 0) corrupt(origin, "payload length is not a multiple of 8");

    try {
        if (manifest.at("format") != "invsen-checkpoint") corrupt(origin, "not an invsen checkpoint");
        const int version = manifest.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw Error(ErrorKind::format, "checkpoint " + origin + ": unsupported version " + std::to_string(version) +
                                               " (expected " + std::to_string(kCheckpointVersion) + ")");
        }
        std::vector<double> payload(bytes.size() / 8);
        for (std::size_t i = 0; i < payload.size(); ++i) {
            payload[i] = std::bit_cast<double>(get_u64(bytes.substr(i * 8, 8)));
        }
        const TensorReader r(manifest.at("tensors"), std::move(payload), origin);

        Checkpoint ck;
        ck.config = config_from_json(manifest.at("config"));
        auto& st = ck.state;
        st.epoch = manifest.at("epoch").get<std::size_t>();
        st.seed = manifest.at("seed").get<std::uint64_t>();
        const auto& m = manifest.at("model");
        st.model.key_net = read_mlp(r, "model.key", m.at("key_net"));
        st.model.query_net = read_mlp(r, "model.query", m.at("query_net"));
        st.model.beta_raw = r.scalar("model.beta_raw");
        st.model.alpha = r.scalar("model.alpha");
        st.model.learn_alpha = m.at("learn_alpha").get<bool>();
        st.model.swap_roles = m.at("swap_roles").get<bool>();
        st.model.validate();
        const auto& h = manifest.at("heads");
        st.heads.n_classes = h.at("n_classes").get<std::size_t>();
        st.heads.g = read_mlp(r, "heads.g", h.at("g"));
        st.heads.g_prime = read_mlp(r, "heads.g_prime", h.at("g_prime"));
        st.heads.validate(st.model.embed_dim());
        st.opt_main = read_adam(r, "opt_main", manifest.at("opt_main"));
        st.opt_bias = read_adam(r, "opt_bias", manifest.at("opt_bias"));

        const Matrix history = r.matrix("history", st.epoch, kHistoryColumns.size());
        for (std::size_t i = 0; i < history.rows(); ++i) {
            EpochRecord rec;
            rec.epoch = static_cast<std::size_t>(history(i, 0));
            rec.l_se = history(i, 1);
            rec.l_conf_key = history(i, 2);
            rec.l_conf_query = history(i, 3);
            rec.l_ce_key = history(i, 4);
            rec.l_ce_query = history(i, 5);
            rec.bias_head_acc = history(i, 6);
            st.history.push_back(rec);
        }
        return ck;
    } catch (const json::exception& e) {
        corrupt(origin, std::string("manifest field error: ") + e.what());
    }
}

void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(state, config));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file(path), "'" + path.string() + "'");
}

}  // namespace invsen::trainer
