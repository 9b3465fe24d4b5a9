#pragma once

#include "rssl/autodiff.hpp"
#include "rssl/losses.hpp"
#include "rssl/models.hpp"

#include <cstdint>
#include <functional>

namespace rssl {

enum class AttackObjective { ssl_loss, cross_entropy };

/// l-infinity attack parameters on the [0, 1] pixel scale.
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double alpha = 2.5 * (8.0 / 255.0) / 5.0;
    int steps = 5;
    AttackObjective objective = AttackObjective::ssl_loss;
    bool random_start = false;

    /// Step size 2.5 eps / k, no random start.
    static AttackConfig training(double epsilon, int steps = 5);
    /// Step size 2.5 eps / k, random start, cross-entropy.
    static AttackConfig evaluation(double epsilon, int steps = 20);

    void validate() const;
};

/// Loss at a point and its gradient with respect to the attacked pixels.
struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;
};
using PixelObjective = std::function<LossAndGrad(const Matrix& attacked)>;
/// Called after every PGD step with the step index (1-based) and current delta.
using PgdObserver = std::function<void(int step, const Matrix& delta)>;

/// x + delta clamped into [0, 1].
Matrix apply_perturbation(const Matrix& x, const Matrix& delta);

/// k-step sign-gradient ascent on `objective`, projecting onto the eps-ball
/// and the pixel box after every step. Returns delta with x + delta in [0, 1].
/// `start` overrides the initial delta (it is projected first); otherwise the
/// start is 0, or U[-eps, eps] with random_start.
Matrix pgd(const PixelObjective& objective, const Matrix& x, const AttackConfig& cfg, std::uint64_t seed,
           const Matrix* start = nullptr, const PgdObserver& observer = {});

/// Persistent perturbations for free adversarial training, one column per
/// (slot, example): column slot * batch + i. With one slot the same delta is
/// shared by every view of an example.
class PerturbationBuffer {
public:
    PerturbationBuffer(std::size_t batch, std::size_t slots, std::size_t pixel_dim);

    [[nodiscard]] std::size_t batch() const noexcept { return batch_; }
    [[nodiscard]] std::size_t slots() const noexcept { return slots_; }
    [[nodiscard]] const Matrix& delta() const noexcept { return delta_; }
    [[nodiscard]] std::uint64_t updates() const noexcept { return updates_; }

    /// Delta laid out for `views` slots (repeats a shared delta).
    [[nodiscard]] Matrix expanded(std::size_t views) const;
    /// Folds a gradient over `views` slots back to the buffer layout (sums
    /// over views when shared).
    [[nodiscard]] Matrix fold(const Matrix& grad) const;

private:
    friend void free_step(const Matrix& grad, PerturbationBuffer& buf, double epsilon);

    std::size_t batch_;
    std::size_t slots_;
    Matrix delta_;
    std::uint64_t updates_ = 0;
};

/// delta <- clip(delta + eps * sign(grad), -eps, eps). grad has the buffer
/// layout (use PerturbationBuffer::fold first).
void free_step(const Matrix& grad, PerturbationBuffer& buf, double epsilon);

enum class SslScheme { empssl, simclr };

/// How a batch of views enters the SSL loss.
///   empssl: `attacked` holds all C views (pixels x C*b, slot-major).
///   simclr: `attacked` is the adversarial view; `clean` is the clean
///           augmented view it is paired with.
struct SslBatch {
    SslScheme scheme = SslScheme::empssl;
    std::size_t views = 2;
    std::size_t batch = 0;
    Matrix clean; ///< simclr only: pixels x b
    /// simclr only: clean version of the attacked view, for the optional
    /// clean-pair term.
    Matrix clean_second;
};

struct SslLossOptions {
    TcrConfig tcr;
    ObjectiveTerms terms = ObjectiveTerms::full;
    /// simclr: also add NT-Xent over the two clean views.
    bool simclr_clean_pair = false;
};

struct SslLoss {
    ad::Var loss;
    double tcr_mean = 0.0;
    double invariance_mean = 0.0;
    ad::Var embeddings; ///< all embeddings entering the loss, d x (views * b)
};

/// Builds the scheme's loss on an existing graph. Throws SchemeMismatch if
/// the view structure does not fit the scheme.
SslLoss ssl_loss(const EncoderSpec& spec, std::span<const ad::Var> params, ad::Var attacked, const SslBatch& batch,
                 const SslLossOptions& options);

/// The objective an SSL adversary ascends, as a function of the attacked
/// pixels with the model held fixed. `spec` and `params` are referenced, not
/// copied, and must outlive the returned function.
PixelObjective ssl_attack_objective(const EncoderSpec& spec, const ParameterStore& params, SslBatch batch,
                                    SslLossOptions options);

} // namespace rssl
