#pragma once

#include "rssl/autodiff.hpp"
#include "rssl/image.hpp"
#include "rssl/rng.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace rssl {

struct Range {
    double low = 0.0;
    double high = 0.0;
    friend bool operator==(const Range&, const Range&) = default;
};

/// Per-image, per-channel affine color nuisance: x' = clamp(a x + t, 0, 1)
/// with a ~ U[scale] and t ~ U[shift].
struct StyleJitterLaw {
    Range scale{1.0, 1.0};
    Range shift{0.0, 0.0};

    [[nodiscard]] bool is_identity() const noexcept {
        return scale.low == 1.0 && scale.high == 1.0 && shift.low == 0.0 && shift.high == 0.0;
    }
};

/// crop: multi-scale random resized crops; patch: fixed-scale patches (same
/// sampler, degenerate scale range); central: the whole image, one view.
enum class AugmentMode { crop, patch, central };

struct AugmentSpec {
    AugmentMode mode = AugmentMode::crop;
    Range scales{0.08, 1.0};
    Range ratios{0.75, 1.3};
    std::size_t crop_count = 16;
    std::size_t out_height = 0; ///< 0 means "same as the input"
    std::size_t out_width = 0;
    std::optional<StyleJitterLaw> style_jitter;

    static AugmentSpec crops(std::size_t count);
    static AugmentSpec patches(std::size_t count);
    static AugmentSpec central();

    /// Throws InvalidSpec for inverted or out-of-range bounds.
    void validate() const;
    [[nodiscard]] std::size_t views() const noexcept { return mode == AugmentMode::central ? 1 : crop_count; }
    [[nodiscard]] ImageShape output_shape(const ImageShape& in) const;
};

/// Integer pixel rectangle inside an image.
struct CropRegion {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    friend bool operator==(const CropRegion&, const CropRegion&) = default;
};

/// Crop regions for every (slot, image) pair of a batch. Rendering a slot
/// is a fixed linear map of the source pixels, so it can sit inside a
/// differentiable graph.
struct ViewPlan {
    ImageShape in_shape;
    ImageShape out_shape;
    std::vector<std::vector<CropRegion>> regions; ///< [slot][image]

    [[nodiscard]] std::size_t slots() const noexcept { return regions.size(); }
    [[nodiscard]] std::size_t images() const noexcept { return regions.empty() ? 0 : regions.front().size(); }
};

/// One random-resized-crop draw. Up to 10 attempts at a region satisfying the
/// scale/ratio law, then the full image.
CropRegion sample_region(const ImageShape& shape, const AugmentSpec& spec, Rng& rng);

/// Sub-seed for one (image, slot) draw under a batch seed.
std::uint64_t view_seed(std::uint64_t batch_seed, std::size_t image, std::size_t slot);

ViewPlan plan_views(const ImageShape& shape, std::size_t images, const AugmentSpec& spec, std::uint64_t seed);

/// Bilinear, corner-aligned resample of each column's region to out_shape.
Matrix render_slot(const Matrix& pixels, const ViewPlan& plan, std::size_t slot);
/// Adjoint of render_slot: scatters view-space gradients back to the source.
Matrix render_slot_adjoint(const Matrix& view_grad, const ViewPlan& plan, std::size_t slot);
/// render_slot as a graph node.
ad::Var render_slot(ad::Var pixels, const ViewPlan& plan, std::size_t slot);

/// C views of every image. Identical (img, spec, seed) give bit-identical
/// output; views carry the source labels.
std::vector<ImageBatch> sample_views(const ImageBatch& img, const AugmentSpec& spec, std::uint64_t seed);

/// Per-image, per-channel affine jitter, clamped to [0, 1].
ImageBatch style_jitter(const ImageBatch& img, const StyleJitterLaw& law, std::uint64_t seed);

} // namespace rssl
