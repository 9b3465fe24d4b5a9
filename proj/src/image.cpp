#include "rssl/image.hpp"

#include "rssl/errors.hpp"

#include <string>

namespace rssl {

ImageBatch ImageBatch::subset(const std::vector<std::size_t>& indices) const {
    ImageBatch out;
    out.shape = shape;
    out.pixels = Matrix(pixels.rows(), indices.size());
    for (std::size_t r = 0; r < pixels.rows(); ++r) {
        for (std::size_t j = 0; j < indices.size(); ++j) {
            out.pixels(r, j) = pixels(r, indices[j]);
        }
    }
    if (labeled()) {
        out.labels.reserve(indices.size());
        for (std::size_t i : indices) {
            out.labels.push_back(labels.at(i));
        }
    }
    return out;
}

void ImageBatch::validate() const {
    if (pixels.rows() != shape.pixels()) {
        throw InvalidSpec("pixel rows " + std::to_string(pixels.rows()) + " do not match image shape");
    }
    for (double v : pixels.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw InvalidSpec("pixel outside [0, 1]");
        }
    }
    if (labeled() && labels.size() != count()) {
        throw InvalidSpec("label count does not match image count");
    }
}

} // namespace rssl
