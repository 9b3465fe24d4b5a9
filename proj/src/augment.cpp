#include "rssl/augment.hpp"

#include "rssl/errors.hpp"
#include "rssl/rng.hpp"

#include <algorithm>
#include <cmath>

namespace rssl {

namespace {

struct Tap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double frac = 0.0; ///< weight of hi
};

// Corner-aligned sample positions of `out` points over [start, start+len-1].
std::vector<Tap> taps(std::size_t start, std::size_t len, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t i = 0; i < out; ++i) {
        double pos;
        if (out == 1) {
            pos = static_cast<double>(start) + 0.5 * static_cast<double>(len - 1);
        } else {
            pos = static_cast<double>(start) +
                  static_cast<double>(i) * static_cast<double>(len - 1) / static_cast<double>(out - 1);
        }
        const double fl = std::floor(pos);
        t[i].lo = static_cast<std::size_t>(fl);
        t[i].frac = pos - fl;
        t[i].hi = std::min(t[i].lo + 1, start + len - 1);
        if (t[i].hi == t[i].lo) {
            t[i].frac = 0.0;
        }
    }
    return t;
}

template <typename Visit>
void for_each_tap(const ViewPlan& plan, const CropRegion& r, Visit&& visit) {
    const ImageShape& in = plan.in_shape;
    const ImageShape& out = plan.out_shape;
    const auto ty = taps(r.top, r.height, out.height);
    const auto tx = taps(r.left, r.width, out.width);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            const double wy = ty[y].frac;
            const double wx = tx[x].frac;
            const double w00 = (1.0 - wy) * (1.0 - wx);
            const double w01 = (1.0 - wy) * wx;
            const double w10 = wy * (1.0 - wx);
            const double w11 = wy * wx;
            for (std::size_t c = 0; c < in.channels; ++c) {
                visit(out.index(y, x, c), in.index(ty[y].lo, tx[x].lo, c), in.index(ty[y].lo, tx[x].hi, c),
                      in.index(ty[y].hi, tx[x].lo, c), in.index(ty[y].hi, tx[x].hi, c), w00, w01, w10, w11);
            }
        }
    }
}

} // namespace

AugmentSpec AugmentSpec::crops(std::size_t count) {
    AugmentSpec s;
    s.mode = AugmentMode::crop;
    s.crop_count = count;
    return s;
}

AugmentSpec AugmentSpec::patches(std::size_t count) {
    AugmentSpec s;
    s.mode = AugmentMode::patch;
    s.scales = {0.25, 0.25};
    s.ratios = {1.0, 1.0};
    s.crop_count = count;
    return s;
}

AugmentSpec AugmentSpec::central() {
    AugmentSpec s;
    s.mode = AugmentMode::central;
    s.crop_count = 1;
    return s;
}

void AugmentSpec::validate() const {
    if (!(scales.low > 0.0 && scales.low <= scales.high && scales.high <= 1.0)) {
        throw InvalidSpec("scales must satisfy 0 < low <= high <= 1");
    }
    if (!(ratios.low > 0.0 && ratios.low <= ratios.high)) {
        throw InvalidSpec("ratios must satisfy 0 < low <= high");
    }
    if (crop_count < 1) {
        throw InvalidSpec("crop_count must be >= 1");
    }
    if ((out_height == 0) != (out_width == 0)) {
        throw InvalidSpec("out_size must set both height and width, or neither");
    }
    if (style_jitter) {
        const auto& j = *style_jitter;
        if (j.scale.low > j.scale.high || j.shift.low > j.shift.high) {
            throw InvalidSpec("style jitter bounds inverted");
        }
    }
}

ImageShape AugmentSpec::output_shape(const ImageShape& in) const {
    if (mode == AugmentMode::central || out_height == 0) {
        return in;
    }
    return {out_height, out_width, in.channels};
}

CropRegion sample_region(const ImageShape& shape, const AugmentSpec& spec, Rng& rng) {
    const double area = static_cast<double>(shape.height * shape.width);
    const double log_lo = std::log(spec.ratios.low);
    const double log_hi = std::log(spec.ratios.high);
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target = area * rng.uniform(spec.scales.low, spec.scales.high);
        const double ratio = std::exp(log_lo == log_hi ? log_lo : rng.uniform(log_lo, log_hi));
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target * ratio)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target / ratio)));
        if (w >= 1 && h >= 1 && w <= shape.width && h <= shape.height) {
            CropRegion r;
            r.height = h;
            r.width = w;
            r.top = static_cast<std::size_t>(rng.below(shape.height - h + 1));
            r.left = static_cast<std::size_t>(rng.below(shape.width - w + 1));
            return r;
        }
    }
    return CropRegion{0, 0, shape.height, shape.width};
}

std::uint64_t view_seed(std::uint64_t batch_seed, std::size_t image, std::size_t slot) {
    return derive_seed(batch_seed, {stream::augment, image, slot});
}

ViewPlan plan_views(const ImageShape& shape, std::size_t images, const AugmentSpec& spec, std::uint64_t seed) {
    spec.validate();
    ViewPlan plan;
    plan.in_shape = shape;
    plan.out_shape = spec.output_shape(shape);
    const std::size_t slots = spec.views();
    plan.regions.assign(slots, std::vector<CropRegion>(images));
    for (std::size_t k = 0; k < slots; ++k) {
        for (std::size_t i = 0; i < images; ++i) {
            if (spec.mode == AugmentMode::central) {
                plan.regions[k][i] = CropRegion{0, 0, shape.height, shape.width};
            } else {
                Rng rng(view_seed(seed, i, k));
                plan.regions[k][i] = sample_region(shape, spec, rng);
            }
        }
    }
    return plan;
}

Matrix render_slot(const Matrix& pixels, const ViewPlan& plan, std::size_t slot) {
    if (pixels.rows() != plan.in_shape.pixels() || pixels.cols() != plan.images()) {
        throw ShapeMismatch("render_slot: pixel matrix does not match the view plan");
    }
    const std::size_t n = pixels.cols();
    Matrix out(plan.out_shape.pixels(), n);
    for (std::size_t j = 0; j < n; ++j) {
        const CropRegion& r = plan.regions.at(slot)[j];
        if (r == CropRegion{0, 0, plan.in_shape.height, plan.in_shape.width} && plan.in_shape == plan.out_shape) {
            for (std::size_t p = 0; p < out.rows(); ++p) {
                out(p, j) = pixels(p, j);
            }
            continue;
        }
        for_each_tap(plan, r,
                     [&](std::size_t o, std::size_t a, std::size_t b, std::size_t c, std::size_t d, double w00,
                         double w01, double w10, double w11) {
                         out(o, j) = w00 * pixels(a, j) + w01 * pixels(b, j) + w10 * pixels(c, j) +
                                     w11 * pixels(d, j);
                     });
    }
    return out;
}

Matrix render_slot_adjoint(const Matrix& view_grad, const ViewPlan& plan, std::size_t slot) {
    const std::size_t n = view_grad.cols();
    Matrix out(plan.in_shape.pixels(), n);
    for (std::size_t j = 0; j < n; ++j) {
        const CropRegion& r = plan.regions.at(slot)[j];
        if (r == CropRegion{0, 0, plan.in_shape.height, plan.in_shape.width} && plan.in_shape == plan.out_shape) {
            for (std::size_t p = 0; p < out.rows(); ++p) {
                out(p, j) = view_grad(p, j);
            }
            continue;
        }
        for_each_tap(plan, r,
                     [&](std::size_t o, std::size_t a, std::size_t b, std::size_t c, std::size_t d, double w00,
                         double w01, double w10, double w11) {
                         const double g = view_grad(o, j);
                         out(a, j) += w00 * g;
                         out(b, j) += w01 * g;
                         out(c, j) += w10 * g;
                         out(d, j) += w11 * g;
                     });
    }
    return out;
}

ad::Var render_slot(ad::Var pixels, const ViewPlan& plan, std::size_t slot) {
    return pixels.graph->apply(render_slot(pixels.value(), plan, slot), {pixels},
                               [plan, slot](const Matrix& g) {
                                   return std::vector<Matrix>{render_slot_adjoint(g, plan, slot)};
                               },
                               "render_slot");
}

std::vector<ImageBatch> sample_views(const ImageBatch& img, const AugmentSpec& spec, std::uint64_t seed) {
    const ViewPlan plan = plan_views(img.shape, img.count(), spec, seed);
    std::vector<ImageBatch> views;
    views.reserve(plan.slots());
    for (std::size_t k = 0; k < plan.slots(); ++k) {
        ImageBatch v;
        v.shape = plan.out_shape;
        v.pixels = render_slot(img.pixels, plan, k);
        v.labels = img.labels;
        if (spec.style_jitter && !spec.style_jitter->is_identity()) {
            v = style_jitter(v, *spec.style_jitter, derive_seed(seed, {stream::jitter, k}));
        }
        views.push_back(std::move(v));
    }
    return views;
}

ImageBatch style_jitter(const ImageBatch& img, const StyleJitterLaw& law, std::uint64_t seed) {
    ImageBatch out = img;
    if (law.is_identity()) {
        return out;
    }
    const std::size_t ch = img.shape.channels;
    const std::size_t hw = img.shape.height * img.shape.width;
    for (std::size_t j = 0; j < img.count(); ++j) {
        Rng rng(derive_seed(seed, {j}));
        for (std::size_t c = 0; c < ch; ++c) {
            const double a = rng.uniform(law.scale.low, law.scale.high);
            const double t = rng.uniform(law.shift.low, law.shift.high);
            for (std::size_t p = 0; p < hw; ++p) {
                double& v = out.pixels(p * ch + c, j);
                v = std::clamp(a * v + t, 0.0, 1.0);
            }
        }
    }
    return out;
}

} // namespace rssl
