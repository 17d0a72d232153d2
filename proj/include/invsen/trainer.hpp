#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invsen/datagen.hpp"
#include "invsen/debias.hpp"
#include "invsen/error.hpp"
#include "invsen/numkit/adam.hpp"
#include "invsen/sennet.hpp"

namespace invsen::trainer {

using numkit::Matrix;

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 200;
    double lr_main = 1e-3;  // key/query nets, beta, alpha
    double lr_bias = 1e-4;  // bias heads
    debias::LossWeights weights;
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;
    std::optional<std::filesystem::path> checkpoint_path;
    sennet::SEModelConfig model;
    debias::BiasHeadsConfig heads;
    double divergence_limit = 1e6;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based index of the completed epoch
    double l_se = 0.0;
    double l_conf_key = 0.0;
    double l_conf_query = 0.0;
    double l_ce_key = 0.0;
    double l_ce_query = 0.0;
    double bias_head_acc = 0.0;  // mean of the two heads' batch accuracies

    bool operator==(const EpochRecord&) const = default;
};

struct TrainState {
    sennet::SEModel model;
    debias::BiasHeads heads;
    numkit::AdamState opt_main;
    numkit::AdamState opt_bias;
    std::size_t epoch = 0;
    std::vector<EpochRecord> history;
    std::uint64_t seed = 0;
};

/// Fresh parameters and optimizer state. Each component draws from its own
/// derived seed, so enabling or disabling one never shifts another's stream.
TrainState init_state(const TrainConfig& config, std::size_t input_dim, std::size_t n_bias_classes);

struct StepOptions {
    bool capture_boundary = false;  // keep embedding-boundary gradients in the report
};

struct StepReport {
    debias::CombinedLosses losses;
    double acc_key = 0.0;
    double acc_query = 0.0;
    bool heads_updated = false;
    // Filled when capture_boundary is set and labels are present.
    Matrix grad_u_se;          // dL_se/du
    Matrix grad_u_ce_head;     // d l_ce_key / du, backpropagated through g
    Matrix grad_u_conf_head;   // d l_conf_key / du
    Matrix grad_u_applied;     // what the key net actually received
    Matrix grad_v_ce_head;
    Matrix grad_v_applied;
};

/// One min-max step on a batch: heads descend the cross-entropy; the key/query
/// nets descend l_se + lambda*l_conf and receive the cross-entropy gradient
/// reversed and scaled by lambda*mu. Empty `labels` trains the SE part only.
StepReport train_step(TrainState& state, const Matrix& batch, std::span<const int> labels,
                      const debias::LossWeights& weights, double divergence_limit = 1e6,
                      const StepOptions& options = {});

/// Minibatch index sets for one epoch; a pure function of (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

using EpochCallback = std::function<void(const TrainState&)>;

TrainState fit(const TrainConfig& config, const datagen::Dataset& dataset, const EpochCallback& on_epoch = {});

/// Continue `state` until config.epochs epochs have completed.
void resume_fit(TrainState& state, const TrainConfig& config, const datagen::Dataset& dataset,
                const EpochCallback& on_epoch = {});

/// Raised when the loss leaves the finite range or exceeds the divergence limit.
/// Carries the state from before the offending step.
class DivergenceError : public Error {
  public:
    DivergenceError(const std::string& message, TrainState snapshot)
        : Error(ErrorKind::numerical, message), snapshot_(std::move(snapshot)) {}
    const TrainState& snapshot() const noexcept { return snapshot_; }

  private:
    TrainState snapshot_;
};

// --- checkpoints -----------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "INVSEN01";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    TrainState state;
    TrainConfig config;
};

/// Magic, u64 manifest length, JSON manifest, little-endian f64 payload.
std::string serialize_checkpoint(const TrainState& state, const TrainConfig& config);
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");

void save_checkpoint(const TrainState& state, const TrainConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Fixed column order of the history CSV.
inline constexpr std::array<std::string_view, 7> kHistoryColumns = {
    "epoch", "l_se", "l_conf_key", "l_conf_query", "l_ce_key", "l_ce_query", "bias_head_acc"};

/// One row per `eval_every` epochs (and always the final epoch).
std::string history_csv(const std::vector<EpochRecord>& history, std::size_t eval_every);

}  // namespace invsen::trainer
