#include "rssl/data.hpp"

#include "rssl/errors.hpp"
#include "rssl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <vector>

namespace rssl {

namespace {

struct Wave {
    double fy = 0.0;
    double fx = 0.0;
    double phase = 0.0;
    double amplitude = 0.0;
};

// Low-frequency luminance template with max |value| = 1.
std::vector<double> class_template(const ImageShape& shape, std::size_t waves, Rng& rng) {
    std::vector<Wave> w(waves);
    for (Wave& wave : w) {
        do {
            wave.fy = static_cast<double>(rng.below(5)) - 2.0;
            wave.fx = static_cast<double>(rng.below(5)) - 2.0;
        } while (wave.fy == 0.0 && wave.fx == 0.0);
        wave.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        wave.amplitude = rng.uniform(0.5, 1.0);
    }
    std::vector<double> t(shape.height * shape.width, 0.0);
    for (std::size_t y = 0; y < shape.height; ++y) {
        for (std::size_t x = 0; x < shape.width; ++x) {
            double v = 0.0;
            for (const Wave& wave : w) {
                v += wave.amplitude *
                     std::cos(2.0 * std::numbers::pi *
                                  (wave.fy * static_cast<double>(y) / static_cast<double>(shape.height) +
                                   wave.fx * static_cast<double>(x) / static_cast<double>(shape.width)) +
                              wave.phase);
            }
            t[y * shape.width + x] = v;
        }
    }
    const double peak = std::max(1e-12, std::abs(*std::max_element(
                                            t.begin(), t.end(), [](double a, double b) { return std::abs(a) < std::abs(b); })));
    for (double& v : t) {
        v /= peak;
    }
    return t;
}

std::uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(std::string("truncated header reading ") + what);
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

} // namespace

void ContentStyleSpec::validate() const {
    if (num_classes < 2) {
        throw InvalidSpec("num_classes must be >= 2");
    }
    if (samples_per_class < 1) {
        throw InvalidSpec("samples_per_class must be >= 1");
    }
    if (shape.height < 2 || shape.width < 2 || shape.channels < 1) {
        throw InvalidSpec("image shape too small");
    }
    if (!(content_amplitude > 0.0)) {
        throw InvalidSpec("content margin requires content_amplitude > 0");
    }
    if (content_waves < 1) {
        throw InvalidSpec("content_waves must be >= 1");
    }
    if (style_amplitude < 0.0 || noise_std < 0.0) {
        throw InvalidSpec("style_amplitude and noise_std must be nonnegative");
    }
}

ImageBatch generate(const ContentStyleSpec& spec) {
    spec.validate();
    const ImageShape& s = spec.shape;
    std::vector<std::vector<double>> templates;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        Rng rng(derive_seed(spec.seed, {stream::data, 0, c}));
        templates.push_back(class_template(s, spec.content_waves, rng));
    }

    const std::size_t n = spec.num_classes * spec.samples_per_class;
    ImageBatch out;
    out.shape = s;
    out.pixels = Matrix(s.pixels(), n);
    out.labels.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t label = j / spec.samples_per_class;
        out.labels[j] = static_cast<int>(label);
        Rng rng(derive_seed(spec.seed, {stream::data, 1, j}));
        const std::size_t dy = spec.content_shift == 0 ? 0 : rng.below(2 * spec.content_shift + 1);
        const std::size_t dx = spec.content_shift == 0 ? 0 : rng.below(2 * spec.content_shift + 1);
        // Style: color offsets per channel plus one random texture wave.
        std::vector<double> offset(s.channels);
        for (double& o : offset) {
            o = rng.uniform(-spec.style_amplitude, spec.style_amplitude);
        }
        const double tex_fy = static_cast<double>(rng.below(4) + 1);
        const double tex_fx = static_cast<double>(rng.below(4) + 1);
        const double tex_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double tex_amp = 0.5 * spec.style_amplitude * rng.uniform();
        const auto& tmpl = templates[label];
        for (std::size_t y = 0; y < s.height; ++y) {
            for (std::size_t x = 0; x < s.width; ++x) {
                const std::size_t ty = (y + s.height + dy - spec.content_shift) % s.height;
                const std::size_t tx = (x + s.width + dx - spec.content_shift) % s.width;
                const double content = spec.content_amplitude * tmpl[ty * s.width + tx];
                const double texture =
                    tex_amp * std::cos(2.0 * std::numbers::pi *
                                           (tex_fy * static_cast<double>(y) / static_cast<double>(s.height) +
                                            tex_fx * static_cast<double>(x) / static_cast<double>(s.width)) +
                                       tex_phase);
                for (std::size_t c = 0; c < s.channels; ++c) {
                    const double noise = spec.noise_std == 0.0 ? 0.0 : spec.noise_std * rng.normal();
                    out.pixels(s.index(y, x, c), j) = std::clamp(0.5 + content + offset[c] + texture + noise, 0.0, 1.0);
                }
            }
        }
    }
    return out;
}

TrainTestSplit split_train_test(const ImageBatch& batch, std::size_t test_per_class, std::uint64_t seed) {
    if (!batch.labeled()) {
        throw InvalidSpec("split_train_test needs labels");
    }
    const int max_label = *std::max_element(batch.labels.begin(), batch.labels.end());
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
    for (int c = 0; c <= max_label; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t j = 0; j < batch.count(); ++j) {
            if (batch.labels[j] == c) {
                members.push_back(j);
            }
        }
        if (members.size() < test_per_class) {
            throw InvalidSpec("class " + std::to_string(c) + " has fewer images than test_per_class");
        }
        Rng rng(derive_seed(seed, {stream::data, 2, static_cast<std::uint64_t>(c)}));
        std::shuffle(members.begin(), members.end(), rng.engine());
        std::sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(test_per_class));
        std::sort(members.begin() + static_cast<std::ptrdiff_t>(test_per_class), members.end());
        test_idx.insert(test_idx.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(test_per_class));
        train_idx.insert(train_idx.end(), members.begin() + static_cast<std::ptrdiff_t>(test_per_class), members.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    return {batch.subset(train_idx), batch.subset(test_idx)};
}

ImageBatch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    std::ifstream img(images, std::ios::binary);
    if (!img) {
        throw FormatError("cannot open " + images.string());
    }
    std::ifstream lab(labels, std::ios::binary);
    if (!lab) {
        throw FormatError("cannot open " + labels.string());
    }
    if (read_be32(img, "image magic") != 0x00000803U) {
        throw FormatError("bad image magic in " + images.string());
    }
    const std::uint32_t n = read_be32(img, "image count");
    const std::uint32_t rows = read_be32(img, "image rows");
    const std::uint32_t cols = read_be32(img, "image cols");
    if (read_be32(lab, "label magic") != 0x00000801U) {
        throw FormatError("bad label magic in " + labels.string());
    }
    const std::uint32_t nl = read_be32(lab, "label count");
    if (nl != n) {
        throw CountMismatch(std::to_string(n) + " images vs " + std::to_string(nl) + " labels");
    }

    ImageBatch out;
    out.shape = ImageShape{rows, cols, 1};
    const std::size_t px = out.shape.pixels();
    std::vector<unsigned char> buf(px * n);
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
        throw FormatError("truncated image payload");
    }
    std::vector<unsigned char> lbuf(n);
    if (!lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n))) {
        throw FormatError("truncated label payload");
    }
    out.pixels = Matrix(px, n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < px; ++p) {
            out.pixels(p, j) = static_cast<double>(buf[j * px + p]) / 255.0;
        }
    }
    out.labels.assign(lbuf.begin(), lbuf.end());
    return out;
}

} // namespace rssl
