#pragma once

#include "rssl/matrix.hpp"

#include <cstddef>
#include <vector>

namespace rssl {

struct ImageShape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;

    [[nodiscard]] std::size_t pixels() const noexcept { return height * width * channels; }
    /// Row index of pixel (y, x, c) in a flattened column (HWC order).
    [[nodiscard]] std::size_t index(std::size_t y, std::size_t x, std::size_t c) const noexcept {
        return (y * width + x) * channels + c;
    }
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// n images stored as columns of a pixels() x n matrix, values in [0, 1].
/// Labels are empty for unlabeled batches.
struct ImageBatch {
    ImageShape shape;
    Matrix pixels;
    std::vector<int> labels;

    [[nodiscard]] std::size_t count() const noexcept { return pixels.cols(); }
    [[nodiscard]] bool labeled() const noexcept { return !labels.empty(); }
    [[nodiscard]] ImageBatch subset(const std::vector<std::size_t>& indices) const;
    /// Throws InvalidSpec when shape and storage disagree, a pixel leaves
    /// [0, 1], or the label count is wrong.
    void validate() const;
};

} // namespace rssl
