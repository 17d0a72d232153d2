#include "invsen/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "invsen/cluster.hpp"
#include "invsen/datagen.hpp"
#include "invsen/error.hpp"
#include "invsen/evalmetrics.hpp"
#include "invsen/fsutil.hpp"
#include "invsen/trainer.hpp"

namespace invsen::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string format_percent(double fraction) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
    return buf;
}

namespace {

// --- option sets -------------------------------------------------------------

struct GenDataArgs {
    datagen::DataGenConfig config;
    std::string mode = "ood";
    double test_e = 0.5;
    double n_ratio = 0.5;
    std::string out;
};

struct TrainArgs {
    trainer::TrainConfig config;
    std::string data;
    std::string out;
    std::string resume;
};

struct EvaluateArgs {
    std::string checkpoint;
    std::vector<std::string> data;
    std::string out;
    cluster::SpectralConfig spectral;
    std::string laplacian = "symmetric";
    bool dump_affinity = false;
};

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string out_csv;
};

void add_config_option(CLI::App* sub) {
    sub->add_option("--config", "Flat JSON file of option values; command-line flags take precedence");
}

void add_gen_data(CLI::App& app, GenDataArgs& a) {
    auto* sub = app.add_subcommand("gen-data", "Generate a synthetic biased union-of-subspaces dataset");
    auto& c = a.config;
    sub->add_option("--k", c.k_subspaces, "Number of subspaces (clusters)")->capture_default_str();
    sub->add_option("--d", c.ambient_dim, "Ambient dimension")->capture_default_str();
    sub->add_option("--rank", c.subspace_rank, "Subspace rank")->capture_default_str();
    sub->add_option("--n-per", c.n_per_cluster, "Samples per cluster")->capture_default_str();
    sub->add_option("--sigma", c.noise_sigma, "Gaussian noise level")->capture_default_str();
    sub->add_option("--bias-strength", c.bias_strength, "Length of the bias displacement")->capture_default_str();
    sub->add_option("--e", c.bias_flip_e, "Bias flip probability of the (training) split")->capture_default_str();
    sub->add_option("--test-e", a.test_e, "Bias flip probability of the ood test split")->capture_default_str();
    sub->add_option("--label-flip", c.label_flip, "Flip probability of the rule label")->capture_default_str();
    sub->add_option("--mode", a.mode, "ood | mixed | plain")
        ->check(CLI::IsMember({"ood", "mixed", "plain"}))
        ->capture_default_str();
    sub->add_option("--n-ratio", a.n_ratio, "Biased fraction for mixed mode")->capture_default_str();
    sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    sub->add_option("--out", a.out, "Output directory")->required();
    add_config_option(sub);
}

void add_train(CLI::App& app, TrainArgs& a) {
    auto* sub = app.add_subcommand("train", "Train SENet (lambda = 0) or Inv-SENnet");
    auto& c = a.config;
    sub->add_option("--data", a.data, "Training dataset file")->required();
    sub->add_option("--out", a.out, "Output directory for checkpoint.bin and history.csv")->required();
    sub->add_option("--resume", a.resume, "Continue from this checkpoint");
    sub->add_option("--epochs", c.epochs)->capture_default_str();
    sub->add_option("--batch-size", c.batch_size)->capture_default_str();
    sub->add_option("--lr-main", c.lr_main, "Adam step for the key/query networks")->capture_default_str();
    sub->add_option("--lr-bias", c.lr_bias, "Adam step for the bias heads")->capture_default_str();
    sub->add_option("--lambda", c.weights.lambda, "Bias-mitigation weight")->capture_default_str();
    sub->add_option("--mu", c.weights.mu, "Cross-entropy relaxation weight")->capture_default_str();
    sub->add_option("--gamma", c.weights.gamma, "Reconstruction weight")->capture_default_str();
    sub->add_option("--delta", c.weights.delta, "Elastic-net mix")->capture_default_str();
    sub->add_option("--seed", c.seed)->capture_default_str();
    sub->add_option("--eval-every", c.eval_every, "History/checkpoint interval in epochs")->capture_default_str();
    sub->add_option("--divergence-limit", c.divergence_limit)->capture_default_str();
    sub->add_option("--hidden", c.model.hidden, "Key/query hidden widths, comma separated")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->capture_default_str();
    sub->add_option("--embed-dim", c.model.embed_dim)->capture_default_str();
    sub->add_option("--alpha", c.model.alpha)->capture_default_str();
    sub->add_flag("--learn-alpha", c.model.learn_alpha, "Make alpha trainable");
    sub->add_option("--beta-init", c.model.beta_init)->capture_default_str();
    sub->add_flag("--swap-roles", c.model.swap_roles, "Exchange key and query roles");
    sub->add_option("--head-hidden", c.heads.hidden, "Bias head hidden widths, comma separated")
        ->delimiter(',')
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->capture_default_str();
    add_config_option(sub);
}

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
    auto* sub = app.add_subcommand("evaluate", "Cluster datasets with a trained model and score them");
    sub->add_option("--checkpoint", a.checkpoint)->required();
    sub->add_option("--data", a.data, "Dataset file(s); one split each")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sub->add_option("--out", a.out, "Output directory for metrics.json and metrics.csv")->required();
    sub->add_option("--k", a.spectral.k, "Number of clusters")->required();
    sub->add_option("--restarts", a.spectral.kmeans_restarts)->capture_default_str();
    sub->add_option("--max-iter", a.spectral.kmeans_max_iter)->capture_default_str();
    sub->add_option("--eig-tol", a.spectral.eig_tol)->capture_default_str();
    sub->add_option("--seed", a.spectral.seed)->capture_default_str();
    sub->add_option("--laplacian", a.laplacian, "symmetric | unnormalized")
        ->check(CLI::IsMember({"symmetric", "unnormalized"}))
        ->capture_default_str();
    sub->add_flag("--dump-affinity", a.dump_affinity, "Also write affinity_<split>.csv");
    add_config_option(sub);
}

void add_report(CLI::App& app, ReportArgs& a) {
    auto* sub = app.add_subcommand("report", "Combine metrics.json files into one comparison table");
    sub->add_option("inputs", a.inputs, "metrics.json files")->required();
    sub->add_option("--out-csv", a.out_csv, "Also write the table as CSV");
    add_config_option(sub);
}

// --- config file ---------------------------------------------------------------

std::string flag_name(const std::string& token) {
    const auto eq = token.find('=');
    return token.substr(0, eq);
}

std::string scalar_token(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

/// Splices the config file's values in front of the user's own flags.
std::vector<std::string> expand_config(const std::vector<std::string>& args, CLI::App& app) {
    if (args.empty()) return args;
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands({})) {
        if (s->get_name() == args[0]) sub = s;
    }
    if (sub == nullptr) return args;

    std::optional<std::string> path;
    std::set<std::string> given;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
        if (args[i].rfind("--", 0) == 0) given.insert(flag_name(args[i]));
    }
    if (!path) return args;

    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(read_file(*path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::config, "config file '" + *path + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw Error(ErrorKind::config, e.what());
    }
    if (!cfg.is_object()) throw Error(ErrorKind::config, "config file '" + *path + "' must hold a flat JSON object");

    std::vector<std::string> out{args[0]};
    for (const auto& [key, value] : cfg.items()) {
        std::string name = key;
        std::replace(name.begin(), name.end(), '_', '-');
        const std::string flag = "--" + name;
        if (name == "config" || sub->get_option_no_throw(flag) == nullptr) {
            throw Error(ErrorKind::config, "config file '" + *path + "': unknown key '" + key + "'");
        }
        if (given.count(flag)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back(flag);
        } else if (value.is_array()) {
            const bool multi = sub->get_option(flag)->get_multi_option_policy() == CLI::MultiOptionPolicy::TakeAll;
            std::string joined;
            for (const auto& item : value) {
                if (multi) {
                    out.push_back(flag);
                    out.push_back(scalar_token(item));
                } else {
                    joined += (joined.empty() ? "" : ",") + scalar_token(item);
                }
            }
            if (!multi) {
                out.push_back(flag);
                out.push_back(joined);
            }
        } else if (value.is_object() || value.is_null()) {
            throw Error(ErrorKind::config, "config file '" + *path + "': key '" + key + "' must be a scalar or list");
        } else {
            out.push_back(flag);
            out.push_back(scalar_token(value));
        }
    }
    out.insert(out.end(), args.begin() + 1, args.end());
    return out;
}

// --- commands ------------------------------------------------------------------

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error(ErrorKind::io, "cannot create output directory '" + dir + "'");
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    ensure_dir(a.out);
    std::vector<datagen::Dataset> sets;
    if (a.mode == "ood") {
        auto split = datagen::make_ood_split(a.config, a.config.bias_flip_e, a.test_e);
        sets.push_back(std::move(split.train));
        sets.push_back(std::move(split.test));
    } else if (a.mode == "mixed") {
        sets.push_back(datagen::make_mixed_domain(a.config, a.config.bias_flip_e, a.n_ratio));
    } else {
        sets.push_back(datagen::generate(a.config));
    }
    ojson summary = {{"mode", a.mode}, {"files", ojson::array()}, {"n", ojson::array()}, {"d", a.config.ambient_dim},
                     {"k", a.config.k_subspaces}, {"mi_b_s", ojson::array()}};
    for (const auto& ds : sets) {
        const fs::path path = fs::path(a.out) / (ds.name + ".csv");
        datagen::save_dataset(ds, path);
        summary["files"].push_back(path.string());
        summary["n"].push_back(ds.n());
        summary["mi_b_s"].push_back(evalmetrics::discrete_mi(*ds.b, ds.s->view()));
    }
    out << summary.dump() << '\n';
    return kOk;
}

int cmd_train(TrainArgs a, std::ostream& out, std::ostream& err) {
    ensure_dir(a.out);
    const fs::path ckpt = fs::path(a.out) / "checkpoint.bin";
    const fs::path history = fs::path(a.out) / "history.csv";
    a.config.checkpoint_path = ckpt;
    const datagen::Dataset data = datagen::load_dataset(a.data);

    trainer::TrainState state;
    try {
        if (a.resume.empty()) {
            state = trainer::fit(a.config, data);
        } else {
            state = trainer::load_checkpoint(a.resume).state;
            trainer::resume_fit(state, a.config, data);
        }
    } catch (const trainer::DivergenceError& e) {
        const fs::path dump = fs::path(a.out) / "divergence_snapshot.bin";
        trainer::save_checkpoint(e.snapshot(), a.config, dump);
        err << "error: " << e.what() << "\nstate before the failing step saved to " << dump.string() << '\n';
        return kDivergence;
    }
    if (state.epoch == 0) trainer::save_checkpoint(state, a.config, ckpt);
    write_file_atomic(history, trainer::history_csv(state.history, a.config.eval_every));

    ojson summary = {{"checkpoint", ckpt.string()}, {"history", history.string()}, {"epochs", state.epoch}};
    if (!state.history.empty()) {
        const auto& last = state.history.back();
        summary["final"] = {{"l_se", last.l_se}, {"bias_head_acc", last.bias_head_acc}};
    }
    out << summary.dump() << '\n';
    return kOk;
}

std::string method_name(double lambda) { return lambda == 0.0 ? "SENet" : "Inv-SENnet"; }

int cmd_evaluate(EvaluateArgs a, std::ostream& out) {
    a.spectral.laplacian = cluster::laplacian_from_string(a.laplacian);
    a.spectral.validate();
    ensure_dir(a.out);
    const trainer::Checkpoint ck = trainer::load_checkpoint(a.checkpoint);

    ojson doc = {{"method", method_name(ck.config.weights.lambda)},
                 {"lambda", ck.config.weights.lambda},
                 {"mu", ck.config.weights.mu},
                 {"checkpoint", a.checkpoint},
                 {"k", a.spectral.k},
                 {"splits", ojson::array()},
                 {"meta", {{"tool", "invsen"}, {"format", 1}, {"epoch", ck.state.epoch}}}};
    std::string csv = std::string("split,") + evalmetrics::kMetricsCsvHeader + "\n";
    for (const auto& path : a.data) {
        const datagen::Dataset ds = datagen::load_dataset(path);
        if (!ds.s) throw Error(ErrorKind::format, "dataset '" + path + "' has no cluster labels to score against");
        const std::string split = fs::path(path).stem().string();
        const auto affinity = cluster::build_affinity(ck.state.model, ds.x);
        if (a.dump_affinity) cluster::save_affinity_csv(affinity, fs::path(a.out) / ("affinity_" + split + ".csv"));
        const ClusterLabels pred = cluster::spectral_cluster(affinity, a.spectral);
        const std::span<const int> bias = ds.b ? std::span<const int>(*ds.b) : std::span<const int>();
        const auto m = evalmetrics::compute_metrics(pred.view(), ds.s->view(), bias);
        ojson row = {{"name", split}, {"data", path}};
        const ojson fields = ojson::parse(evalmetrics::to_json(m));
        for (const auto& [key, value] : fields.items()) row[key] = value;
        doc["splits"].push_back(row);
        csv += split + "," + evalmetrics::to_csv_row(m) + "\n";
        out << split << ": acc " << format_percent(m.acc) << " nmi " << format_percent(m.nmi) << " ari "
            << format_percent(m.ari) << '\n';
    }
    write_file_atomic(fs::path(a.out) / "metrics.json", doc.dump(2) + "\n");
    write_file_atomic(fs::path(a.out) / "metrics.csv", csv);
    return kOk;
}

struct ReportRow {
    std::string dataset;
    std::string method;
    std::size_t n = 0;
    double acc = 0.0, nmi = 0.0, ari = 0.0;
    std::string source;
};

int cmd_report(ReportArgs a, std::ostream& out, std::ostream& err) {
    std::sort(a.inputs.begin(), a.inputs.end());
    std::vector<ReportRow> rows;
    for (const auto& path : a.inputs) {
        try {
            const auto doc = nlohmann::json::parse(read_file(path));
            const std::string method = doc.at("method").get<std::string>();
            for (const auto& split : doc.at("splits")) {
                const auto m = evalmetrics::metrics_from_json(split.dump());
                rows.push_back({split.at("name").get<std::string>(), method, m.n, m.acc, m.nmi, m.ari, path});
            }
        } catch (const std::exception& e) {
            err << "error: malformed metrics file '" << path << "': " << e.what() << '\n';
            return kRuntime;
        }
    }

    // dACC is measured against the SENet row of the same dataset, or its first row without one.
    std::map<std::string, double> reference;
    for (const auto& r : rows)
        if (r.method == method_name(0.0)) reference.emplace(r.dataset, r.acc);
    for (const auto& r : rows) reference.emplace(r.dataset, r.acc);
    std::vector<std::vector<std::string>> table{{"Dataset", "Method", "N", "ACC", "NMI", "ARI", "dACC", "Source"}};
    for (const auto& r : rows) {
        const double delta = r.acc - reference.at(r.dataset);
        std::string d = format_percent(delta);
        if (d[0] != '-') d = "+" + d;
        table.push_back({r.dataset, r.method, std::to_string(r.n), format_percent(r.acc), format_percent(r.nmi),
                         format_percent(r.ari), d, r.source});
    }

    std::vector<std::size_t> width(table[0].size(), 0);
    for (const auto& line : table)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    for (const auto& line : table) {
        std::string text;
        for (std::size_t c = 0; c < line.size(); ++c) {
            if (c) text += "  ";
            const std::size_t pad = width[c] - line[c].size();
            // numbers right-aligned, text left-aligned
            const bool numeric = c >= 2 && c <= 6;
            text += numeric ? std::string(pad, ' ') + line[c] : line[c] + std::string(pad, ' ');
        }
        while (!text.empty() && text.back() == ' ') text.pop_back();
        out << text << '\n';
    }

    if (!a.out_csv.empty()) {
        std::string csv;
        for (const auto& line : table) {
            for (std::size_t c = 0; c < line.size(); ++c) csv += (c ? "," : "") + line[c];
            csv += '\n';
        }
        write_file_atomic(a.out_csv, csv);
    }
    return kOk;
}

int exit_code_for(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::config:
        return kUsage;
    default:
        return kRuntime;
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Self-expressive subspace clustering with adversarial bias mitigation", "invsen");
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);

    GenDataArgs gen;
    TrainArgs train;
    EvaluateArgs evaluate;
    ReportArgs report;
    add_gen_data(app, gen);
    add_train(app, train);
    add_evaluate(app, evaluate);
    add_report(app, report);

    try {
        std::vector<std::string> argv = expand_config(args, app);
        std::reverse(argv.begin(), argv.end());
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }

    try {
        const auto* sub = app.get_subcommands().front();
        const std::string name = sub->get_name();
        if (name == "gen-data") return cmd_gen_data(gen, out);
        if (name == "train") return cmd_train(train, out, err);
        if (name == "evaluate") return cmd_evaluate(evaluate, out);
        return cmd_report(report, out, err);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
}

}  // namespace invsen::cli
