#pragma once

#include "rssl/attacks.hpp"
#include "rssl/augment.hpp"
#include "rssl/image.hpp"
#include "rssl/losses.hpp"
#include "rssl/models.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace rssl {

/// Pretraining regimes. The *_free schemes replay each minibatch m times and
/// run N_ep / m outer epochs; empssl_free is CF-AMC-SSL.
enum class TrainScheme { empssl_pgd, simclr_pgd, empssl_free, simclr_free };

[[nodiscard]] bool is_free(TrainScheme s) noexcept;
[[nodiscard]] SslScheme ssl_scheme(TrainScheme s) noexcept;

enum class OptimizerKind { sgd_momentum, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double momentum = 0.9; ///< sgd_momentum
    double beta1 = 0.9;    ///< adam
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

/// Stateful optimizer over the tensors of one ParameterStore.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, const ParameterStore& store);

    /// sgd_momentum: v <- mu v + g, theta <- theta - lr v.
    /// adam: bias-corrected first/second moments.
    /// Increments the store's update counter exactly once.
    void step(ParameterStore& store, std::span<const Matrix> grads);

    [[nodiscard]] std::uint64_t steps() const noexcept { return t_; }

private:
    OptimizerConfig cfg_;
    std::vector<Matrix> first_;
    std::vector<Matrix> second_;
    std::uint64_t t_ = 0;
};

struct TrainConfig {
    TrainScheme scheme = TrainScheme::empssl_free;
    std::size_t total_epochs = 30; ///< N_ep
    std::size_t replays = 1;       ///< m; must be 1 for pgd schemes
    std::size_t batch_size = 64;
    AugmentSpec augment = AugmentSpec::crops(16);
    OptimizerConfig optimizer;
    AttackConfig attack = AttackConfig::training(8.0 / 255.0);
    TcrConfig loss;
    ObjectiveTerms terms = ObjectiveTerms::full;
    EncoderSpec encoder;
    bool shared_delta = false;      ///< one delta per example instead of one per crop slot
    bool simclr_clean_pair = false; ///< add the clean-pair NT-Xent term
    std::uint64_t seed = 0;

    /// Throws ConfigError on any violated invariant (including m not
    /// dividing N_ep for free schemes).
    void validate() const;
    [[nodiscard]] std::size_t views() const noexcept;
    [[nodiscard]] std::size_t outer_epochs() const noexcept;
};

/// One row of metrics.csv.
struct EpochMetrics {
    std::size_t epoch = 0;
    std::string scheme;
    double loss_mean = 0.0;
    double tcr_mean = 0.0;
    double invariance_mean = 0.0;
    double effective_rank = 0.0;
    double wall_clock_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,scheme,loss_mean,tcr_mean,invariance_mean,effective_rank,wall_clock_seconds";

struct TrainStats {
    std::uint64_t outer_epochs = 0;
    std::uint64_t batches_per_epoch = 0;
    std::uint64_t optimizer_steps = 0;
    std::uint64_t delta_updates = 0;
    /// Forward+backward passes spent on the model or the perturbation.
    std::uint64_t gradient_passes = 0;
    double seconds = 0.0;
};

struct PretrainResult {
    ParameterStore params;
    std::vector<EpochMetrics> metrics;
    TrainStats stats;
};

/// Called after each (outer) epoch. Used by the CLI for progress output.
using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Runs the configured regime on `data`. `diagnostic` supplies the held-out
/// batch whose effective rank is logged per epoch (defaults to the first
/// images of `data`). Throws ConfigError or NonFiniteLoss.
PretrainResult pretrain(const ImageBatch& data, const TrainConfig& cfg, const ImageBatch* diagnostic = nullptr,
                        const EpochCallback& on_epoch = {});

std::string to_string(TrainScheme s);
TrainScheme train_scheme_from_string(const std::string& s);

void write_metrics_csv(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path);

/// Files and bookkeeping of one pretraining run on disk.
struct RunManifest {
    std::string run_id;
    std::string status; ///< running | completed | failed
    nlohmann::json config;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string started_at;
    std::string finished_at;
    std::filesystem::path metrics_path;
    std::filesystem::path weights_path;
    std::string error;
    TrainStats stats;

    [[nodiscard]] nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

/// Hex digest of the canonical JSON dump; stable across runs.
std::string config_hash(const nlohmann::json& config);

/// Creates `<root>/<run_id>/`, writes manifest.json (status running), trains,
/// then writes metrics.csv and weights.rssl1 and finalizes the manifest. On
/// NonFiniteLoss the manifest is marked failed and the error rethrown.
/// Existing run directories are never reused.
RunManifest run_pretraining(const ImageBatch& data, const TrainConfig& cfg, const nlohmann::json& config_snapshot,
                            const std::filesystem::path& root, const ImageBatch* diagnostic = nullptr,
                            const EpochCallback& on_epoch = {});

} // namespace rssl
