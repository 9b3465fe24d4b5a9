#include "rssl/attacks.hpp"

#include "rssl/errors.hpp"
#include "rssl/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace rssl {

namespace {

double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Keep |delta| <= eps and x + delta inside [0, 1].
void project(Matrix& delta, const Matrix& x, double eps) {
    auto d = delta.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = std::clamp(xv[i] + d[i], 0.0, 1.0) - xv[i];
        d[i] = std::clamp(v, -eps, eps);
    }
}

} // namespace

AttackConfig AttackConfig::training(double epsilon, int steps) {
    AttackConfig c;
    c.epsilon = epsilon;
    c.steps = steps;
    c.alpha = steps > 0 ? 2.5 * epsilon / steps : 0.0;
    c.objective = AttackObjective::ssl_loss;
    c.random_start = false;
    return c;
}

AttackConfig AttackConfig::evaluation(double epsilon, int steps) {
    AttackConfig c;
    c.epsilon = epsilon;
    c.steps = steps;
    c.alpha = steps > 0 ? 2.5 * epsilon / steps : 0.0;
    c.objective = AttackObjective::cross_entropy;
    c.random_start = true;
    return c;
}

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0)) {
        throw ConfigError("attack epsilon must be >= 0");
    }
    if (steps < 0) {
        throw ConfigError("attack steps must be >= 0");
    }
    if (steps >= 1 && epsilon > 0.0 && !(alpha > 0.0)) {
        throw ConfigError("attack alpha must be > 0 when steps >= 1");
    }
}

Matrix apply_perturbation(const Matrix& x, const Matrix& delta) {
    if (!x.same_shape(delta)) {
        throw ShapeMismatch("apply_perturbation: delta shape differs from input");
    }
    Matrix out = x;
    auto o = out.values();
    const auto d = delta.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = std::clamp(o[i] + d[i], 0.0, 1.0);
    }
    return out;
}

Matrix pgd(const PixelObjective& objective, const Matrix& x, const AttackConfig& cfg, std::uint64_t seed,
           const Matrix* start, const PgdObserver& observer) {
    cfg.validate();
    Matrix delta(x.rows(), x.cols());
    if (cfg.epsilon == 0.0) {
        return delta;
    }
    if (start != nullptr) {
        if (!start->same_shape(x)) {
            throw ShapeMismatch("pgd: start delta shape differs from input");
        }
        delta = *start;
    } else if (cfg.random_start) {
        Rng rng(derive_seed(seed, {stream::attack}));
        for (double& v : delta.values()) {
            v = rng.uniform(-cfg.epsilon, cfg.epsilon);
        }
    }
    project(delta, x, cfg.epsilon);
    for (int step = 1; step <= cfg.steps; ++step) {
        const LossAndGrad lg = objective(apply_perturbation(x, delta));
        if (!lg.grad.same_shape(x)) {
            throw ShapeMismatch("pgd: objective gradient shape differs from input");
        }
        auto d = delta.values();
        const auto g = lg.grad.values();
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] += cfg.alpha * sign(g[i]);
        }
        project(delta, x, cfg.epsilon);
        if (observer) {
            observer(step, delta);
        }
    }
    return delta;
}

PerturbationBuffer::PerturbationBuffer(std::size_t batch, std::size_t slots, std::size_t pixel_dim)
    : batch_(batch), slots_(slots), delta_(pixel_dim, batch * slots) {
    if (batch == 0 || slots == 0) {
        throw ShapeMismatch("PerturbationBuffer needs batch >= 1 and slots >= 1");
    }
}

Matrix PerturbationBuffer::expanded(std::size_t views) const {
    if (views == slots_) {
        return delta_;
    }
    if (slots_ != 1) {
        throw ShapeMismatch("PerturbationBuffer: cannot expand per-slot buffer to a different view count");
    }
    Matrix out(delta_.rows(), batch_ * views);
    for (std::size_t k = 0; k < views; ++k) {
        out.set_col_block(k * batch_, delta_);
    }
    return out;
}

Matrix PerturbationBuffer::fold(const Matrix& grad) const {
    if (grad.rows() != delta_.rows() || grad.cols() % batch_ != 0) {
        throw ShapeMismatch("PerturbationBuffer::fold: gradient shape does not fit the buffer");
    }
    const std::size_t views = grad.cols() / batch_;
    if (views == slots_) {
        return grad;
    }
    if (slots_ != 1) {
        throw ShapeMismatch("PerturbationBuffer::fold: view count differs from slot count");
    }
    Matrix out = grad.col_block(0, batch_);
    for (std::size_t k = 1; k < views; ++k) {
        out += grad.col_block(k * batch_, batch_);
    }
    return out;
}

void free_step(const Matrix& grad, PerturbationBuffer& buf, double epsilon) {
    if (!grad.same_shape(buf.delta_)) {
        throw ShapeMismatch("free_step: gradient shape differs from the buffer");
    }
    auto d = buf.delta_.values();
    const auto g = grad.values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = std::clamp(d[i] + epsilon * sign(g[i]), -epsilon, epsilon);
    }
    ++buf.updates_;
}

SslLoss ssl_loss(const EncoderSpec& spec, std::span<const ad::Var> params, ad::Var attacked, const SslBatch& batch,
                 const SslLossOptions& options) {
    ad::Graph& g = *attacked.graph;
    const std::size_t b = batch.batch;
    SslLoss out;
    if (batch.scheme == SslScheme::empssl) {
        if (b == 0 || attacked.cols() != batch.views * b || batch.views < 1) {
            throw SchemeMismatch("empssl expects pixels x (C * b) attacked views");
        }
        const ad::Var z = forward_embed(spec, params, attacked);
        std::vector<ad::Var> crops;
        crops.reserve(batch.views);
        for (std::size_t k = 0; k < batch.views; ++k) {
            crops.push_back(ad::col_block(z, k * b, b));
        }
        const EmpSslTerms terms = empssl_objective(crops, options.tcr, options.terms);
        out.loss = terms.loss;
        out.tcr_mean = terms.tcr_mean;
        out.invariance_mean = terms.invariance_mean;
        out.embeddings = z;
        return out;
    }

    if (batch.views != 2 || attacked.cols() != b || batch.clean.cols() != b ||
        batch.clean.rows() != attacked.rows()) {
        throw SchemeMismatch("simclr expects one clean and one attacked view per image");
    }
    const ad::Var z_clean = forward_embed(spec, params, g.constant(batch.clean));
    const ad::Var z_adv = forward_embed(spec, params, attacked);
    ad::Var loss = nt_xent(z_clean, z_adv, options.tcr.tau);
    if (options.simclr_clean_pair) {
        if (!batch.clean_second.same_shape(batch.clean)) {
            throw SchemeMismatch("simclr clean-pair term needs the second clean view");
        }
        const ad::Var z_second = forward_embed(spec, params, g.constant(batch.clean_second));
        loss = ad::add(loss, nt_xent(z_clean, z_second, options.tcr.tau));
    }
    out.loss = loss;
    // Diagnostics only; these nodes are not ancestors of the loss.
    const std::array<ad::Var, 2> pair{z_clean, z_adv};
    const EmpSslTerms diag = empssl_objective(pair, options.tcr, ObjectiveTerms::full);
    out.tcr_mean = diag.tcr_mean;
    out.invariance_mean = diag.invariance_mean;
    out.embeddings = ad::hcat(pair);
    return out;
}

PixelObjective ssl_attack_objective(const EncoderSpec& spec, const ParameterStore& params, SslBatch batch,
                                    SslLossOptions options) {
    return [&spec, &params, batch = std::move(batch), options = std::move(options)](const Matrix& attacked) {
        ad::Graph g;
        const auto vars = bind(g, params, false);
        const ad::Var x = g.leaf(attacked);
        const SslLoss l = ssl_loss(spec, vars, x, batch, options);
        const ad::Gradients grads = g.backward(l.loss);
        return LossAndGrad{l.loss.scalar(), grads.of(x)};
    };
}

} // namespace rssl
