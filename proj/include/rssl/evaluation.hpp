#pragma once

#include "rssl/attacks.hpp"
#include "rssl/augment.hpp"
#include "rssl/image.hpp"
#include "rssl/models.hpp"
#include "rssl/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rssl {

/// Singular values below this fraction of the largest are treated as zero by
/// effective_rank.
inline constexpr double kRankCutoff = 1e-6;

/// exp(entropy of the normalized singular values of z). 1 for rank one,
/// min(d, b) for an isotropic batch. Throws ZeroMatrix for z = 0 and
/// DegenerateBatch for fewer than two columns.
double effective_rank(const Matrix& z);

enum class ProbeProtocol { central, aggregate };

/// How an adversary attacks the aggregated protocol: through the crop
/// pipeline on the source image, or on each rendered crop separately.
enum class AggregateAttack { end_to_end, per_crop };

struct ProbeConfig {
    ProbeProtocol protocol = ProbeProtocol::central;
    std::size_t n = 1;            ///< crops averaged by the aggregate protocol
    AugmentSpec augment;          ///< view law of the aggregate protocol (the pretraining law)
    bool robust = false;          ///< r-LE: adversarially train the head
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    OptimizerConfig optimizer{OptimizerKind::adam, 0.05};
    AttackConfig train_attack = AttackConfig::training(8.0 / 255.0, 5);
    AggregateAttack aggregate_attack = AggregateAttack::end_to_end;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Frozen encoder plus the view plan the protocol needs for a fixed image set.
/// View plans are drawn per global image index, so any subset of images sees
/// the same crops it would see in the full set.
class Representation {
public:
    Representation(const EncoderSpec& spec, const ParameterStore& params, const ProbeConfig& cfg,
                   const ImageShape& shape, std::size_t images);

    /// Features (embed_dim x |indices|) of the images `indices` whose pixels
    /// are `pixels`, as a graph node that is differentiable in `pixels`.
    ad::Var features(ad::Graph& g, std::span<const ad::Var> encoder, ad::Var pixels,
                     const std::vector<std::size_t>& indices) const;
    Matrix features(const Matrix& pixels, const std::vector<std::size_t>& indices) const;

    /// Rendered crops of the given images (pixels x n*|indices|, slot-major),
    /// for the per-crop attack.
    Matrix render_crops(const Matrix& pixels, const std::vector<std::size_t>& indices) const;
    /// Features from already-rendered crops.
    ad::Var features_from_crops(ad::Graph& g, std::span<const ad::Var> encoder, ad::Var crops,
                                std::size_t images) const;

    [[nodiscard]] const EncoderSpec& spec() const noexcept { return *spec_; }
    [[nodiscard]] const ParameterStore& params() const noexcept { return *params_; }
    [[nodiscard]] const ProbeConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] bool aggregated() const noexcept { return cfg_.protocol == ProbeProtocol::aggregate; }

private:
    [[nodiscard]] ViewPlan plan_for(const std::vector<std::size_t>& indices) const;

    const EncoderSpec* spec_;
    const ParameterStore* params_;
    ProbeConfig cfg_;
    ViewPlan plan_;
};

/// Mean of the n view embeddings, renormalized to unit norm. n = 1 is the
/// whole-image view, so it coincides with the central protocol.
Matrix aggregate_embedding(const EncoderSpec& spec, const ParameterStore& params, const ImageBatch& img,
                           std::size_t n, const AugmentSpec& view_law, std::uint64_t seed);

struct ProbeResult {
    ParameterStore head;
    std::vector<double> epoch_loss; ///< mean training cross-entropy per epoch
    double train_accuracy = 0.0;    ///< clean accuracy on the training set after the last epoch
};

/// Trains a linear head on a frozen encoder. Standard: cross-entropy on clean
/// features. Robust (r-LE): each minibatch is first attacked with PGD on the
/// cross-entropy, end-to-end through the frozen encoder. Throws
/// LabelMismatch when labels are missing or out of range.
ProbeResult train_probe(const EncoderSpec& spec, const ParameterStore& encoder, const ImageBatch& data,
                        std::size_t num_classes, const ProbeConfig& cfg);

/// Linear head trained directly on precomputed features (dim x n).
ProbeResult train_linear_head(const Matrix& features, const std::vector<int>& labels, std::size_t num_classes,
                              const ProbeConfig& cfg);

/// An epsilon on the 1/den pixel scale, kept rational for reporting.
struct Epsilon {
    int num = 8;
    int den = 255;
    [[nodiscard]] double value() const noexcept { return den == 0 ? 0.0 : static_cast<double>(num) / den; }
};

struct AccuracyRow {
    std::string run_id;
    std::string protocol; ///< "central" or "agg"
    std::size_t n = 1;
    bool robust_probe = false;
    Epsilon epsilon;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    int attack_steps = 0;
    std::uint64_t seed = 0;
};

inline constexpr const char* kReportHeader =
    "run_id,protocol,n,robust_probe,epsilon_num,epsilon_den,clean_acc,robust_acc,attack_steps,seed";

struct EvalOptions {
    std::string run_id;
    std::vector<Epsilon> grid{{4, 255}, {8, 255}, {16, 255}};
    int attack_steps = 20;
    std::size_t batch_size = 100;
    std::uint64_t seed = 0;
};

/// Clean top-1 and robust top-1 under end-to-end PGD (random start,
/// alpha = 2.5 eps / steps, cross-entropy) for every epsilon in the grid.
std::vector<AccuracyRow> evaluate(const EncoderSpec& spec, const ParameterStore& encoder, const ParameterStore& head,
                                  const ImageBatch& data, const ProbeConfig& probe, const EvalOptions& options);

/// Top-1 accuracy of a head on a batch under one attack (or none when
/// attack.epsilon == 0).
double accuracy_under_attack(const Representation& rep, const ParameterStore& head, const ImageBatch& data,
                             const AttackConfig& attack, std::size_t batch_size, std::uint64_t seed);

std::string format_row(const AccuracyRow& row);
/// Appends rows, writing the header first if the file is new or empty.
void append_report_csv(const std::vector<AccuracyRow>& rows, const std::filesystem::path& path);

} // namespace rssl
