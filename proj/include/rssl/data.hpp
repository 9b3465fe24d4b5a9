#pragma once

#include "rssl/image.hpp"

#include <cstdint>
#include <filesystem>

namespace rssl {

/// Synthetic dataset whose class identity lives in a spatial luminance
/// pattern ("content") and whose per-image nuisance is color and texture
/// ("style"), drawn independently of the label.
struct ContentStyleSpec {
    std::size_t num_classes = 4;
    std::size_t samples_per_class = 700;
    ImageShape shape{16, 16, 3};
    double content_amplitude = 0.15; ///< peak deviation of a class template from gray
    std::size_t content_waves = 3;    ///< sinusoids summed per class template
    std::size_t content_shift = 0;    ///< max cyclic translation of the template, pixels
    double style_amplitude = 0.1;     ///< per-channel color offset and texture amplitude
    double noise_std = 0.03;          ///< iid pixel noise
    std::uint64_t seed = 0;

    void validate() const;
};

/// Class-balanced labeled batch; images are ordered class-major. Deterministic
/// in spec (including seed).
ImageBatch generate(const ContentStyleSpec& spec);

struct TrainTestSplit {
    ImageBatch train;
    ImageBatch test;
};

/// Stratified split: test_per_class images of every class go to test, the
/// rest to train. A pure function of (batch, test_per_class, seed).
TrainTestSplit split_train_test(const ImageBatch& batch, std::size_t test_per_class, std::uint64_t seed);

/// Reads an IDX image file (magic 0x00000803, dims n x rows x cols, unsigned
/// bytes) and its label file (magic 0x00000801). Pixels are scaled by 1/255.
ImageBatch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

} // namespace rssl
