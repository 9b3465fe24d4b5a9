#include "rssl/evaluation.hpp"

#include "rssl/errors.hpp"
#include "rssl/linalg.hpp"
#include "rssl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <iomanip>
#include <sstream>

namespace rssl {

namespace {

AugmentSpec aggregation_law(const AugmentSpec& law, std::size_t n) {
    if (n == 1) {
        return AugmentSpec::central();
    }
    AugmentSpec spec = law;
    spec.style_jitter.reset();
    if (spec.mode != AugmentMode::central) {
        spec.crop_count = n;
    }
    return spec;
}

// Mean over view slots of the embeddings in z (d x views*b), renormalized when
// more than one view contributes.
ad::Var pool_views(ad::Var z, std::size_t views, std::size_t images) {
    if (views == 1) {
        return z;
    }
    std::vector<ad::Var> parts;
    parts.reserve(views);
    for (std::size_t k = 0; k < views; ++k) {
        parts.push_back(ad::col_block(z, k * images, images));
    }
    return ad::normalize_columns(ad::mean_of(parts));
}

std::vector<std::size_t> checked_targets(const std::vector<int>& labels, std::size_t num_classes) {
    std::vector<std::size_t> t(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            throw LabelMismatch("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) +
                                ")");
        }
        t[i] = static_cast<std::size_t>(labels[i]);
    }
    return t;
}

std::vector<std::size_t> iota_range(std::size_t first, std::size_t count) {
    std::vector<std::size_t> v(count);
    std::iota(v.begin(), v.end(), first);
    return v;
}

std::vector<std::size_t> pick(const std::vector<std::size_t>& from, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) {
        out.push_back(from[i]);
    }
    return out;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& cols) {
    Matrix out(m.rows(), cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
        for (std::size_t i = 0; i < m.rows(); ++i) {
            out(i, j) = m(i, cols[j]);
        }
    }
    return out;
}

// Cross-entropy of the head on the representation of `pixels`, as a function
// the adversary ascends.
PixelObjective probe_objective(const Representation& rep, const ParameterStore& head,
                               const std::vector<std::size_t>& indices, const std::vector<std::size_t>& targets,
                               bool on_crops) {
    return [&rep, &head, indices, targets, on_crops](const Matrix& attacked) {
        ad::Graph g;
        const auto enc = bind(g, rep.params(), false);
        const auto h = bind(g, head, false);
        const ad::Var x = g.leaf(attacked);
        const ad::Var feats = on_crops ? rep.features_from_crops(g, enc, x, indices.size())
                                       : rep.features(g, enc, x, indices);
        const ad::Var loss = ad::cross_entropy_columns(forward_classify(h, feats), targets);
        const ad::Gradients grads = g.backward(loss);
        return LossAndGrad{loss.scalar(), grads.of(x)};
    };
}

Matrix crops_features(const Representation& rep, const Matrix& crops, std::size_t images) {
    ad::Graph g;
    const auto enc = bind(g, rep.params(), false);
    return rep.features_from_crops(g, enc, g.constant(crops), images).value();
}

// Features of the attacked images `indices` (pixels are their columns).
// epsilon == 0 gives the clean features.
Matrix attacked_features(const Representation& rep, const ParameterStore& head, const Matrix& pixels,
                         const std::vector<std::size_t>& indices, const std::vector<std::size_t>& targets,
                         const AttackConfig& attack, std::uint64_t seed) {
    const bool per_crop =
        rep.aggregated() && rep.config().aggregate_attack == AggregateAttack::per_crop;
    if (attack.epsilon == 0.0 || attack.steps == 0) {
        return rep.features(pixels, indices);
    }
    if (per_crop) {
        const Matrix crops = rep.render_crops(pixels, indices);
        const Matrix delta = pgd(probe_objective(rep, head, indices, targets, true), crops, attack, seed);
        return crops_features(rep, apply_perturbation(crops, delta), indices.size());
    }
    const Matrix delta = pgd(probe_objective(rep, head, indices, targets, false), pixels, attack, seed);
    return rep.features(apply_perturbation(pixels, delta), indices);
}

// Minibatch cross-entropy training of a zero-initialized head. `features`
// supplies the (possibly attacked) features for each minibatch.
using FeatureSource = std::function<Matrix(const ParameterStore& head, const std::vector<std::size_t>& idx,
                                           const std::vector<std::size_t>& targets, std::size_t epoch,
                                           std::size_t batch)>;

ProbeResult fit_head(std::size_t count, std::size_t dim, const std::vector<std::size_t>& targets,
                     std::size_t num_classes, const ProbeConfig& cfg, const FeatureSource& features) {
    ProbeResult result;
    result.head = init_classifier(dim, num_classes);
    Optimizer opt(cfg.optimizer, result.head);
    const std::size_t bs = std::min(cfg.batch_size, count);
    const std::size_t batches = (count + bs - 1) / bs;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = iota_range(0, count);
        Rng rng(derive_seed(cfg.seed, {stream::probe, stream::shuffle, epoch}));
        std::shuffle(order.begin(), order.end(), rng.engine());
        double total = 0.0;
        for (std::size_t bi = 0; bi < batches; ++bi) {
            const std::size_t first = bi * bs;
            const std::size_t last = std::min(count, first + bs);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(first),
                                         order.begin() + static_cast<std::ptrdiff_t>(last));
            const std::vector<std::size_t> t = pick(targets, idx);
            const Matrix f = features(result.head, idx, t, epoch, bi);
            ad::Graph g;
            const auto h = bind(g, result.head, true);
            const ad::Var loss = ad::cross_entropy_columns(forward_classify(h, g.constant(f)), t);
            if (!std::isfinite(loss.scalar())) {
                throw NonFiniteLoss("probe loss diverged");
            }
            const ad::Gradients grads = g.backward(loss);
            std::vector<Matrix> hg;
            for (const ad::Var& v : h) {
                hg.push_back(grads.of(v));
            }
            opt.step(result.head, hg);
            total += loss.scalar();
        }
        result.epoch_loss.push_back(total / static_cast<double>(batches));
    }
    return result;
}

double top1(const ParameterStore& head, const Matrix& features, const std::vector<std::size_t>& targets) {
    const std::vector<int> pred = predict(forward_classify(head, features));
    std::size_t correct = 0;
    for (std::size_t j = 0; j < pred.size(); ++j) {
        correct += static_cast<std::size_t>(pred[j]) == targets[j] ? 1 : 0;
    }
    return pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
}

// Per-example correctness under one attack, batch by batch.
std::vector<char> correct_under_attack(const Representation& rep, const ParameterStore& head, const ImageBatch& data,
                                       const AttackConfig& attack, std::size_t batch_size, std::uint64_t seed) {
    const std::vector<std::size_t> targets = checked_targets(data.labels, head.get("probe.bias").rows());
    const std::size_t n = data.count();
    const std::size_t bs = std::max<std::size_t>(1, std::min(batch_size, n));
    std::vector<char> ok(n, 0);
    for (std::size_t first = 0, bi = 0; first < n; first += bs, ++bi) {
        const std::vector<std::size_t> idx = iota_range(first, std::min(n, first + bs) - first);
        const std::vector<std::size_t> t = pick(targets, idx);
        const Matrix pixels = gather(data.pixels, idx);
        const Matrix f = attacked_features(rep, head, pixels, idx, t, attack, derive_seed(seed, {stream::eval, bi}));
        const std::vector<int> pred = predict(forward_classify(head, f));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            ok[idx[j]] = static_cast<std::size_t>(pred[j]) == t[j] ? 1 : 0;
        }
    }
    return ok;
}

double mean_of(const std::vector<char>& v) {
    if (v.empty()) {
        return 0.0;
    }
    return static_cast<double>(std::count(v.begin(), v.end(), 1)) / static_cast<double>(v.size());
}

} // namespace

double effective_rank(const Matrix& z) {
    if (z.cols() < 2) {
        throw DegenerateBatch("effective_rank needs at least two columns");
    }
    if (max_abs(z) == 0.0) {
        throw ZeroMatrix("effective_rank of a zero matrix is undefined");
    }
    const std::vector<double> s = singular_values(z);
    const double cutoff = kRankCutoff * s.front();
    double total = 0.0;
    for (double v : s) {
        total += v > cutoff ? v : 0.0;
    }
    double entropy = 0.0;
    for (double v : s) {
        const double p = v > cutoff ? v / total : 0.0;
        if (p > 0.0) {
            entropy -= p * std::log(p);
        }
    }
    return std::exp(entropy);
}

void ProbeConfig::validate() const {
    if (n < 1) {
        throw ConfigError("probe n must be >= 1");
    }
    if (epochs < 1 || batch_size < 1) {
        throw ConfigError("probe epochs and batch_size must be >= 1");
    }
    if (protocol == ProbeProtocol::aggregate) {
        try {
            augment.validate();
        } catch (const InvalidSpec& e) {
            throw ConfigError(e.what());
        }
    }
    optimizer.validate();
    train_attack.validate();
}

Representation::Representation(const EncoderSpec& spec, const ParameterStore& params, const ProbeConfig& cfg,
                               const ImageShape& shape, std::size_t images)
    : spec_(&spec), params_(&params), cfg_(cfg) {
    cfg_.validate();
    if (aggregated()) {
        const AugmentSpec law = aggregation_law(cfg_.augment, cfg_.n);
        if (law.output_shape(shape) != shape) {
            throw ConfigError("aggregation views must keep the image size");
        }
        plan_ = plan_views(shape, images, law, derive_seed(cfg_.seed, {stream::probe, stream::augment}));
    } else {
        plan_.in_shape = shape;
        plan_.out_shape = shape;
    }
}

ViewPlan Representation::plan_for(const std::vector<std::size_t>& indices) const {
    ViewPlan plan;
    plan.in_shape = plan_.in_shape;
    plan.out_shape = plan_.out_shape;
    plan.regions.resize(plan_.slots());
    for (std::size_t k = 0; k < plan_.slots(); ++k) {
        plan.regions[k].reserve(indices.size());
        for (std::size_t i : indices) {
            if (i >= plan_.images()) {
                throw ShapeMismatch("representation: image index out of range");
            }
            plan.regions[k].push_back(plan_.regions[k][i]);
        }
    }
    return plan;
}

ad::Var Representation::features(ad::Graph& g, std::span<const ad::Var> encoder, ad::Var pixels,
                                 const std::vector<std::size_t>& indices) const {
    if (pixels.cols() != indices.size()) {
        throw ShapeMismatch("representation: one index per pixel column required");
    }
    (void)g;
    if (!aggregated()) {
        return forward_embed(*spec_, encoder, pixels);
    }
    const ViewPlan plan = plan_for(indices);
    std::vector<ad::Var> views;
    views.reserve(plan.slots());
    for (std::size_t k = 0; k < plan.slots(); ++k) {
        views.push_back(render_slot(pixels, plan, k));
    }
    const ad::Var z = forward_embed(*spec_, encoder, ad::hcat(views));
    return pool_views(z, plan.slots(), indices.size());
}

Matrix Representation::features(const Matrix& pixels, const std::vector<std::size_t>& indices) const {
    ad::Graph g;
    const auto enc = bind(g, *params_, false);
    return features(g, enc, g.constant(pixels), indices).value();
}

Matrix Representation::render_crops(const Matrix& pixels, const std::vector<std::size_t>& indices) const {
    if (!aggregated()) {
        return pixels;
    }
    const ViewPlan plan = plan_for(indices);
    std::vector<Matrix> views;
    for (std::size_t k = 0; k < plan.slots(); ++k) {
        views.push_back(render_slot(pixels, plan, k));
    }
    return hcat(views);
}

ad::Var Representation::features_from_crops(ad::Graph& g, std::span<const ad::Var> encoder, ad::Var crops,
                                            std::size_t images) const {
    (void)g;
    const std::size_t views = aggregated() ? plan_.slots() : 1;
    if (crops.cols() != views * images) {
        throw ShapeMismatch("representation: crop matrix does not hold every view");
    }
    return pool_views(forward_embed(*spec_, encoder, crops), views, images);
}

Matrix aggregate_embedding(const EncoderSpec& spec, const ParameterStore& params, const ImageBatch& img,
                           std::size_t n, const AugmentSpec& view_law, std::uint64_t seed) {
    if (n < 1) {
        throw ConfigError("aggregate_embedding needs n >= 1");
    }
    const AugmentSpec law = aggregation_law(view_law, n);
    const ViewPlan plan = plan_views(img.shape, img.count(), law, seed);
    std::vector<Matrix> views;
    for (std::size_t k = 0; k < plan.slots(); ++k) {
        views.push_back(render_slot(img.pixels, plan, k));
    }
    ad::Graph g;
    const auto enc = bind(g, params, false);
    const ad::Var z = forward_embed(spec, enc, g.constant(hcat(views)));
    return pool_views(z, plan.slots(), img.count()).value();
}

ProbeResult train_probe(const EncoderSpec& spec, const ParameterStore& encoder, const ImageBatch& data,
                        std::size_t num_classes, const ProbeConfig& cfg) {
    if (!data.labeled() || data.labels.size() != data.count()) {
        throw LabelMismatch("probe data needs one label per image");
    }
    const std::vector<std::size_t> targets = checked_targets(data.labels, num_classes);
    const Representation rep(spec, encoder, cfg, data.shape, data.count());

    ProbeResult result;
    if (!cfg.robust) {
        const Matrix all = rep.features(data.pixels, iota_range(0, data.count()));
        result = fit_head(data.count(), spec.embed_dim, targets, num_classes, cfg,
                          [&all](const ParameterStore&, const std::vector<std::size_t>& idx,
                                 const std::vector<std::size_t>&, std::size_t, std::size_t) { return gather(all, idx); });
        result.train_accuracy = top1(result.head, all, targets);
        return result;
    }
    AttackConfig attack = cfg.train_attack;
    attack.objective = AttackObjective::cross_entropy;
    result = fit_head(data.count(), spec.embed_dim, targets, num_classes, cfg,
                      [&](const ParameterStore& head, const std::vector<std::size_t>& idx,
                          const std::vector<std::size_t>& t, std::size_t epoch, std::size_t batch) {
                          const std::uint64_t seed = derive_seed(cfg.seed, {stream::probe, stream::attack, epoch, batch});
                          return attacked_features(rep, head, gather(data.pixels, idx), idx, t, attack, seed);
                      });
    result.train_accuracy = top1(result.head, rep.features(data.pixels, iota_range(0, data.count())), targets);
    return result;
}

ProbeResult train_linear_head(const Matrix& features, const std::vector<int>& labels, std::size_t num_classes,
                              const ProbeConfig& cfg) {
    if (labels.size() != features.cols()) {
        throw LabelMismatch("one label per feature column required");
    }
    cfg.validate();
    const std::vector<std::size_t> targets = checked_targets(labels, num_classes);
    ProbeResult result = fit_head(features.cols(), features.rows(), targets, num_classes, cfg,
                                  [&features](const ParameterStore&, const std::vector<std::size_t>& idx,
                                              const std::vector<std::size_t>&, std::size_t,
                                              std::size_t) { return gather(features, idx); });
    result.train_accuracy = top1(result.head, features, targets);
    return result;
}

double accuracy_under_attack(const Representation& rep, const ParameterStore& head, const ImageBatch& data,
                             const AttackConfig& attack, std::size_t batch_size, std::uint64_t seed) {
    return mean_of(correct_under_attack(rep, head, data, attack, batch_size, seed));
}

std::vector<AccuracyRow> evaluate(const EncoderSpec& spec, const ParameterStore& encoder, const ParameterStore& head,
                                  const ImageBatch& data, const ProbeConfig& probe, const EvalOptions& options) {
    if (!data.labeled()) {
        throw LabelMismatch("evaluation data needs labels");
    }
    const Representation rep(spec, encoder, probe, data.shape, data.count());
    const AttackConfig none = AttackConfig::evaluation(0.0, options.attack_steps);
    const std::vector<char> clean = correct_under_attack(rep, head, data, none, options.batch_size, options.seed);
    const double clean_acc = mean_of(clean);

    // An example counts as robust at eps only if it also survives every
    // smaller radius of the grid (those attacks are feasible at eps too).
    std::vector<std::size_t> order = iota_range(0, options.grid.size());
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return options.grid[a].value() < options.grid[b].value(); });
    std::vector<char> surviving = clean;
    std::vector<double> robust(options.grid.size(), 0.0);
    for (std::size_t gi : order) {
        const Epsilon eps = options.grid[gi];
        const AttackConfig attack = AttackConfig::evaluation(eps.value(), options.attack_steps);
        const std::uint64_t seed = derive_seed(options.seed, {stream::eval, static_cast<std::uint64_t>(eps.num),
                                                              static_cast<std::uint64_t>(eps.den)});
        const std::vector<char> ok = correct_under_attack(rep, head, data, attack, options.batch_size, seed);
        for (std::size_t j = 0; j < ok.size(); ++j) {
            surviving[j] = static_cast<char>(surviving[j] && ok[j]);
        }
        robust[gi] = mean_of(surviving);
    }

    std::vector<AccuracyRow> rows;
    for (std::size_t gi = 0; gi < options.grid.size(); ++gi) {
        AccuracyRow r;
        r.run_id = options.run_id;
        r.protocol = probe.protocol == ProbeProtocol::central ? "central" : "agg";
        r.n = probe.protocol == ProbeProtocol::central ? 1 : probe.n;
        r.robust_probe = probe.robust;
        r.epsilon = options.grid[gi];
        r.clean_acc = clean_acc;
        r.robust_acc = robust[gi];
        r.attack_steps = options.attack_steps;
        r.seed = options.seed;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string format_row(const AccuracyRow& row) {
    std::ostringstream os;
    os << row.run_id << ',' << row.protocol << ',' << row.n << ',' << (row.robust_probe ? 1 : 0) << ','
       << row.epsilon.num << ',' << row.epsilon.den << ',' << std::fixed << std::setprecision(6) << row.clean_acc
       << ',' << row.robust_acc << ',' << row.attack_steps << ',' << row.seed;
    return os.str();
}

void append_report_csv(const std::vector<AccuracyRow>& rows, const std::filesystem::path& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw Error("cannot append to " + path.string());
    }
    if (fresh) {
        out << kReportHeader << '\n';
    }
    for (const auto& r : rows) {
        out << format_row(r) << '\n';
    }
}

} // namespace rssl
