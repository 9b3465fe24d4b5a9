#include "rssl/training.hpp"

#include "rssl/errors.hpp"
#include "rssl/evaluation.hpp"
#include "rssl/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace rssl {

namespace {

using Clock = std::chrono::steady_clock;

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Zero the gradient where x + delta was clamped: the pixel box is part of
// the perturbed input, so those coordinates receive no signal.
Matrix mask_clamped(Matrix grad, const Matrix& clean, const Matrix& delta) {
    auto g = grad.values();
    const auto c = clean.values();
    const auto d = delta.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = c[i] + d[i];
        if (v < 0.0 || v > 1.0) {
            g[i] = 0.0;
        }
    }
    return grad;
}

struct EpochAccumulator {
    double loss = 0.0;
    double tcr = 0.0;
    double inv = 0.0;
    std::size_t count = 0;

    void add(double l, double t, double i) {
        loss += l;
        tcr += t;
        inv += i;
        ++count;
    }
};

class Trainer {
public:
    Trainer(const ImageBatch& data, const TrainConfig& cfg, const ImageBatch& diagnostic)
        : data_(data), cfg_(cfg), diagnostic_(diagnostic), params_(init_encoder(cfg.encoder, derive_seed(cfg.seed, {stream::init}))),
          optimizer_(cfg.optimizer, params_) {}

    PretrainResult run(const EpochCallback& on_epoch) {
        const auto t0 = Clock::now();
        const std::size_t b = cfg_.batch_size;
        stats_.batches_per_epoch = data_.count() / b;
        stats_.outer_epochs = cfg_.outer_epochs();
        const std::size_t views = cfg_.views();
        const bool free = is_free(cfg_.scheme);
        const SslScheme scheme = ssl_scheme(cfg_.scheme);
        const std::size_t slots = (scheme == SslScheme::simclr || cfg_.shared_delta) ? 1 : views;
        PerturbationBuffer buffer(b, slots, data_.shape.pixels());

        PretrainResult result;
        for (std::size_t epoch = 0; epoch < stats_.outer_epochs; ++epoch) {
            std::vector<std::size_t> order(data_.count());
            std::iota(order.begin(), order.end(), 0);
            Rng shuffle_rng(derive_seed(cfg_.seed, {stream::shuffle, epoch}));
            std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

            EpochAccumulator acc;
            for (std::size_t bi = 0; bi < stats_.batches_per_epoch; ++bi) {
                std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(bi * b),
                                             order.begin() + static_cast<std::ptrdiff_t>((bi + 1) * b));
                const ImageBatch x = data_.subset(idx);
                const std::uint64_t batch_seed = derive_seed(cfg_.seed, {stream::augment, epoch, bi});
                const ViewPlan plan = plan_views(x.shape, b, cfg_.augment.mode == AugmentMode::central
                                                                 ? cfg_.augment
                                                                 : with_views(cfg_.augment, views),
                                                 batch_seed);
                std::vector<Matrix> rendered;
                for (std::size_t k = 0; k < plan.slots(); ++k) {
                    ImageBatch v{plan.out_shape, render_slot(x.pixels, plan, k), {}};
                    if (cfg_.augment.style_jitter && !cfg_.augment.style_jitter->is_identity()) {
                        v = style_jitter(v, *cfg_.augment.style_jitter, derive_seed(batch_seed, {stream::jitter, k}));
                    }
                    rendered.push_back(std::move(v.pixels));
                }
                while (rendered.size() < views) {
                    rendered.push_back(rendered.front());
                }
                const std::uint64_t attack_seed = derive_seed(cfg_.seed, {stream::attack, epoch, bi});
                try {
                    if (free) {
                        free_batch(rendered, buffer, scheme, acc);
                    } else {
                        pgd_batch(rendered, scheme, attack_seed, acc);
                    }
                } catch (const NotPositiveDefinite& e) {
                    throw NonFiniteLoss(std::string("coding-rate term undefined after optimizer step ") +
                                        std::to_string(optimizer_.steps()) + " (" + e.what() + ")");
                }
            }

            EpochMetrics m;
            m.epoch = epoch + 1;
            m.scheme = to_string(cfg_.scheme);
            if (acc.count > 0) {
                m.loss_mean = acc.loss / static_cast<double>(acc.count);
                m.tcr_mean = acc.tcr / static_cast<double>(acc.count);
                m.invariance_mean = acc.inv / static_cast<double>(acc.count);
            }
            m.effective_rank = diagnostic_rank();
            m.wall_clock_seconds = seconds_since(t0);
            if (on_epoch) {
                on_epoch(m);
            }
            result.metrics.push_back(std::move(m));
        }
        stats_.seconds = seconds_since(t0);
        stats_.optimizer_steps = optimizer_.steps();
        result.params = std::move(params_);
        result.stats = stats_;
        return result;
    }

private:
    static AugmentSpec with_views(AugmentSpec spec, std::size_t views) {
        spec.crop_count = views;
        return spec;
    }

    SslBatch make_batch(const std::vector<Matrix>& rendered, SslScheme scheme) const {
        SslBatch batch;
        batch.scheme = scheme;
        batch.views = rendered.size();
        batch.batch = cfg_.batch_size;
        if (scheme == SslScheme::simclr) {
            batch.clean = rendered[0];
            batch.clean_second = rendered[1];
        }
        return batch;
    }

    SslLossOptions loss_options() const {
        return SslLossOptions{cfg_.loss, cfg_.terms, cfg_.simclr_clean_pair};
    }

    // The tensor an adversary perturbs: all views (empssl) or the second view
    // (simclr).
    static Matrix attack_target(const std::vector<Matrix>& rendered, SslScheme scheme) {
        return scheme == SslScheme::empssl ? hcat(rendered) : rendered[1];
    }

    // One forward/backward at the given attacked pixels; applies the
    // optimizer step and returns dL/d(attacked).
    Matrix train_step(const Matrix& attacked, const SslBatch& batch, EpochAccumulator& acc) {
        ad::Graph g;
        const auto vars = bind(g, params_, true);
        const ad::Var x = g.leaf(attacked);
        const SslLoss l = ssl_loss(cfg_.encoder, vars, x, batch, loss_options());
        const double loss = l.loss.scalar();
        if (!std::isfinite(loss)) {
            throw NonFiniteLoss("loss became " + std::to_string(loss) + " at optimizer step " +
                                std::to_string(optimizer_.steps() + 1));
        }
        const ad::Gradients grads = g.backward(l.loss);
        std::vector<Matrix> param_grads;
        param_grads.reserve(vars.size());
        for (const ad::Var& v : vars) {
            param_grads.push_back(grads.of(v));
        }
        optimizer_.step(params_, param_grads);
        ++stats_.gradient_passes;
        acc.add(loss, l.tcr_mean, l.invariance_mean);
        return grads.of(x);
    }

    void pgd_batch(const std::vector<Matrix>& rendered, SslScheme scheme, std::uint64_t seed, EpochAccumulator& acc) {
        const SslBatch batch = make_batch(rendered, scheme);
        const Matrix target = attack_target(rendered, scheme);
        Matrix delta(target.rows(), target.cols());
        if (cfg_.attack.epsilon > 0.0 && cfg_.attack.steps > 0) {
            const PixelObjective objective = ssl_attack_objective(cfg_.encoder, params_, batch, loss_options());
            delta = pgd(objective, target, cfg_.attack, seed, nullptr,
                        [this](int, const Matrix&) { ++stats_.delta_updates; ++stats_.gradient_passes; });
        }
        train_step(apply_perturbation(target, delta), batch, acc);
    }

    void free_batch(const std::vector<Matrix>& rendered, PerturbationBuffer& buffer, SslScheme scheme,
                    EpochAccumulator& acc) {
        const SslBatch batch = make_batch(rendered, scheme);
        const Matrix target = attack_target(rendered, scheme);
        const std::size_t target_views = scheme == SslScheme::empssl ? rendered.size() : 1;
        for (std::size_t replay = 0; replay < cfg_.replays; ++replay) {
            const Matrix delta = buffer.expanded(target_views);
            const Matrix grad_x = train_step(apply_perturbation(target, delta), batch, acc);
            free_step(buffer.fold(mask_clamped(grad_x, target, delta)), buffer, cfg_.attack.epsilon);
            ++stats_.delta_updates;
        }
    }

    double diagnostic_rank() const {
        const Matrix z = forward_embed(cfg_.encoder, params_, diagnostic_.pixels);
        try {
            return effective_rank(z);
        } catch (const ZeroMatrix&) {
            return 0.0;
        }
    }

    const ImageBatch& data_;
    const TrainConfig& cfg_;
    const ImageBatch& diagnostic_;
    ParameterStore params_;
    Optimizer optimizer_;
    TrainStats stats_;
};

} // namespace

bool is_free(TrainScheme s) noexcept { return s == TrainScheme::empssl_free || s == TrainScheme::simclr_free; }

SslScheme ssl_scheme(TrainScheme s) noexcept {
    return (s == TrainScheme::simclr_pgd || s == TrainScheme::simclr_free) ? SslScheme::simclr : SslScheme::empssl;
}

void OptimizerConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw ConfigError("momentum must be in [0, 1)");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("adam betas must be in [0, 1)");
    }
    if (!(adam_eps > 0.0)) {
        throw ConfigError("adam_eps must be positive");
    }
}

Optimizer::Optimizer(OptimizerConfig cfg, const ParameterStore& store) : cfg_(cfg) {
    cfg_.validate();
    for (const auto& e : store.entries()) {
        first_.emplace_back(e.value.rows(), e.value.cols());
        if (cfg_.kind == OptimizerKind::adam) {
            second_.emplace_back(e.value.rows(), e.value.cols());
        }
    }
}

void Optimizer::step(ParameterStore& store, std::span<const Matrix> grads) {
    if (grads.size() != store.size() || grads.size() != first_.size()) {
        throw ShapeMismatch("optimizer: gradient count does not match the parameter store");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].same_shape(store.entries()[i].value)) {
            throw ShapeMismatch("optimizer: gradient shape mismatch for " + store.entries()[i].name);
        }
    }
    ++t_;
    const double lr = cfg_.learning_rate;
    if (cfg_.kind == OptimizerKind::sgd_momentum) {
        for (std::size_t i = 0; i < grads.size(); ++i) {
            auto v = first_[i].values();
            auto theta = store.entries()[i].value.values();
            const auto g = grads[i].values();
            for (std::size_t k = 0; k < v.size(); ++k) {
                v[k] = cfg_.momentum * v[k] + g[k];
                theta[k] -= lr * v[k];
            }
        }
    } else {
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < grads.size(); ++i) {
            auto m = first_[i].values();
            auto s = second_[i].values();
            auto theta = store.entries()[i].value.values();
            const auto g = grads[i].values();
            for (std::size_t k = 0; k < m.size(); ++k) {
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
                s[k] = cfg_.beta2 * s[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                const double mhat = m[k] / bc1;
                const double shat = s[k] / bc2;
                theta[k] -= lr * mhat / (std::sqrt(shat) + cfg_.adam_eps);
            }
        }
    }
    store.record_update();
}

void TrainConfig::validate() const {
    if (total_epochs < 1) {
        throw ConfigError("total_epochs must be >= 1");
    }
    if (batch_size < 2) {
        throw ConfigError("batch_size must be >= 2");
    }
    if (is_free(scheme)) {
        if (replays < 1) {
            throw ConfigError("free schemes need replays >= 1");
        }
        if (total_epochs % replays != 0) {
            throw ConfigError("replays m = " + std::to_string(replays) + " must divide total_epochs " +
                              std::to_string(total_epochs));
        }
    } else if (replays != 1) {
        throw ConfigError("pgd schemes fix replays = 1");
    }
    try {
        augment.validate();
    } catch (const InvalidSpec& e) {
        throw ConfigError(e.what());
    }
    if (ssl_scheme(scheme) == SslScheme::simclr && augment.mode != AugmentMode::central && augment.crop_count != 2) {
        throw ConfigError("simclr schemes use exactly two views (crop_count = 2)");
    }
    optimizer.validate();
    attack.validate();
    loss.validate();
    encoder.validate();
}

std::size_t TrainConfig::views() const noexcept {
    if (ssl_scheme(scheme) == SslScheme::simclr) {
        return 2;
    }
    return augment.mode == AugmentMode::central ? 1 : augment.crop_count;
}

std::size_t TrainConfig::outer_epochs() const noexcept {
    return is_free(scheme) ? total_epochs / std::max<std::size_t>(1, replays) : total_epochs;
}

PretrainResult pretrain(const ImageBatch& data, const TrainConfig& cfg, const ImageBatch* diagnostic,
                        const EpochCallback& on_epoch) {
    cfg.validate();
    data.validate();
    if (data.shape.pixels() != cfg.encoder.input_dim) {
        throw ConfigError("encoder input_dim " + std::to_string(cfg.encoder.input_dim) + " does not match image size " +
                          std::to_string(data.shape.pixels()));
    }
    if (cfg.augment.output_shape(data.shape) != data.shape) {
        throw ConfigError("augment out_size must equal the image size so views share the encoder input");
    }
    if (data.count() < cfg.batch_size) {
        throw ConfigError("dataset smaller than one batch");
    }
    ImageBatch fallback;
    if (diagnostic == nullptr) {
        std::vector<std::size_t> idx(std::min<std::size_t>(256, data.count()));
        std::iota(idx.begin(), idx.end(), 0);
        fallback = data.subset(idx);
        diagnostic = &fallback;
    }
    Trainer trainer(data, cfg, *diagnostic);
    return trainer.run(on_epoch);
}

std::string to_string(TrainScheme s) {
    switch (s) {
    case TrainScheme::empssl_pgd:
        return "empssl_pgd";
    case TrainScheme::simclr_pgd:
        return "simclr_pgd";
    case TrainScheme::empssl_free:
        return "empssl_free";
    case TrainScheme::simclr_free:
        return "simclr_free";
    }
    return "unknown";
}

TrainScheme train_scheme_from_string(const std::string& s) {
    if (s == "empssl_pgd") {
        return TrainScheme::empssl_pgd;
    }
    if (s == "simclr_pgd") {
        return TrainScheme::simclr_pgd;
    }
    if (s == "empssl_free" || s == "cf_amc_ssl") {
        return TrainScheme::empssl_free;
    }
    if (s == "simclr_free") {
        return TrainScheme::simclr_free;
    }
    throw ConfigError("unknown scheme '" + s + "'");
}

void write_metrics_csv(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << kMetricsHeader << '\n';
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.epoch << ',' << r.scheme << ',' << r.loss_mean << ',' << r.tcr_mean << ',' << r.invariance_mean
            << ',' << r.effective_rank << ',' << std::setprecision(6) << r.wall_clock_seconds << std::setprecision(17)
            << '\n';
    }
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json j;
    j["run_id"] = run_id;
    j["status"] = status;
    j["config"] = config;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["metrics_path"] = metrics_path.string();
    j["weights_path"] = weights_path.string();
    if (!error.empty()) {
        j["error"] = error;
    }
    j["stats"] = {{"outer_epochs", stats.outer_epochs},       {"batches_per_epoch", stats.batches_per_epoch},
                  {"optimizer_steps", stats.optimizer_steps}, {"delta_updates", stats.delta_updates},
                  {"gradient_passes", stats.gradient_passes}, {"seconds", stats.seconds}};
    return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.value("finished_at", "");
    m.metrics_path = j.at("metrics_path").get<std::string>();
    m.weights_path = j.at("weights_path").get<std::string>();
    m.error = j.value("error", "");
    if (j.contains("stats")) {
        const auto& s = j["stats"];
        m.stats.outer_epochs = s.value("outer_epochs", 0ULL);
        m.stats.batches_per_epoch = s.value("batches_per_epoch", 0ULL);
        m.stats.optimizer_steps = s.value("optimizer_steps", 0ULL);
        m.stats.delta_updates = s.value("delta_updates", 0ULL);
        m.stats.gradient_passes = s.value("gradient_passes", 0ULL);
        m.stats.seconds = s.value("seconds", 0.0);
    }
    return m;
}

std::string config_hash(const nlohmann::json& config) {
    // FNV-1a over the canonical dump, finished with a 64-bit mix.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << mix64(h);
    return os.str();
}

RunManifest run_pretraining(const ImageBatch& data, const TrainConfig& cfg, const nlohmann::json& config_snapshot,
                            const std::filesystem::path& root, const ImageBatch* diagnostic,
                            const EpochCallback& on_epoch) {
    cfg.validate();
    RunManifest manifest;
    manifest.config = config_snapshot;
    manifest.seed = cfg.seed;
    manifest.config_hash = config_hash(config_snapshot);
    const std::string base = to_string(cfg.scheme) + "-s" + std::to_string(cfg.seed) + "-" + manifest.config_hash.substr(0, 8);
    std::filesystem::create_directories(root);
    std::filesystem::path dir = root / base;
    for (int attempt = 2; std::filesystem::exists(dir); ++attempt) {
        dir = root / (base + "-r" + std::to_string(attempt));
    }
    std::filesystem::create_directories(dir);
    manifest.run_id = dir.filename().string();
    manifest.metrics_path = dir / "metrics.csv";
    manifest.weights_path = dir / "weights.rssl1";
    manifest.status = "running";
    manifest.started_at = utc_now();

    const auto write_manifest = [&] {
        std::ofstream out(dir / "manifest.json", std::ios::trunc);
        out << manifest.to_json().dump(2) << '\n';
    };
    write_manifest();

    try {
        PretrainResult result = pretrain(data, cfg, diagnostic, on_epoch);
        write_metrics_csv(result.metrics, manifest.metrics_path);
        save_params(result.params, manifest.weights_path);
        manifest.stats = result.stats;
        manifest.status = "completed";
    } catch (const Error& e) {
        manifest.status = "failed";
        manifest.error = e.what();
        manifest.finished_at = utc_now();
        write_manifest();
        throw;
    }
    manifest.finished_at = utc_now();
    write_manifest();
    return manifest;
}

} // namespace rssl
