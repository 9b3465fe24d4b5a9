#include "rssl/selfcheck.hpp"

#include "rssl/attacks.hpp"
#include "rssl/data.hpp"
#include "rssl/errors.hpp"
#include "rssl/linalg.hpp"
#include "rssl/losses.hpp"
#include "rssl/models.hpp"
#include "rssl/rng.hpp"
#include "rssl/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rssl {

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.values()) {
        v = rng.uniform(lo, hi);
    }
    return m;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

SuiteResult gradient_suite(std::uint64_t seed, double& max_err) {
    constexpr int kInstances = 20;
    constexpr double kTol = 1e-4;
    Rng rng(derive_seed(seed, {stream::probe, 1}));
    const TcrConfig cfg;
    double worst = 0.0;
    std::string worst_name = "none";
    const auto record = [&](const std::string& name, double e) {
        if (!(e <= worst)) {
            worst = e;
            worst_name = name;
        }
    };
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t d = 2 + rng.below(7);
        const std::size_t b = 2 + rng.below(7);
        record("tcr", gradient_rel_error([&](ad::Graph&, ad::Var z) { return tcr(z, cfg); },
                                         random_matrix(d, b, rng)));
        const Matrix zbar = random_matrix(d, b, rng);
        record("invariance", gradient_rel_error(
                                 [&](ad::Graph& g, ad::Var z) { return invariance(z, g.constant(zbar)); },
                                 random_matrix(d, b, rng)));
        const std::size_t n = 2 + rng.below(3);
        record("nt_xent", gradient_rel_error(
                              [&](ad::Graph&, ad::Var z) {
                                  const ad::Var u = ad::normalize_columns(z);
                                  return nt_xent(ad::col_block(u, 0, n), ad::col_block(u, n, n), cfg.tau);
                              },
                              random_matrix(d, 2 * n, rng)));
        const std::size_t m = 2 + rng.below(4);
        const Matrix a = random_matrix(m, m, rng);
        record("logdet", gradient_rel_error(
                             [&](ad::Graph& g, ad::Var x) {
                                 return ad::logdet_spd(ad::add(g.constant(Matrix::identity(m)),
                                                               ad::matmul(x, ad::transpose(x))));
                             },
                             a));
        EncoderSpec spec;
        spec.input_dim = 12;
        spec.hidden = {8};
        spec.activation = Activation::tanh;
        spec.embed_dim = 4;
        const ParameterStore params = init_encoder(spec, derive_seed(seed, {stream::init, static_cast<std::uint64_t>(i)}));
        const Matrix weights = random_matrix(spec.embed_dim, 3, rng);
        record("encoder_pixels", gradient_rel_error(
                                     [&](ad::Graph& g, ad::Var x) {
                                         const auto vars = bind(g, params, false);
                                         return ad::frobenius_dot(forward_embed(spec, vars, x), g.constant(weights));
                                     },
                                     random_matrix(spec.input_dim, 3, rng, 0.1, 0.9)));
    }
    max_err = worst;
    return {"gradient-check", worst <= kTol,
            "max relative error " + fmt(worst) + " (" + worst_name + "), tolerance " + fmt(kTol)};
}

SuiteResult determinant_suite(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {stream::probe, 2}));
    const TcrConfig cfg;
    double worst_lemma = 0.0;
    double worst_eig = 0.0;
    for (int i = 0; i < 20; ++i) {
        const std::size_t d = 2 + rng.below(7);
        const std::size_t b = 2 + rng.below(7);
        const Matrix z = matmul(random_matrix(d, 1, rng), random_matrix(1, b, rng));
        ad::Graph g;
        const double got = tcr(g.constant(z), cfg).scalar();
        const double c = static_cast<double>(d) / (static_cast<double>(b) * cfg.eps_sq);
        const double f = frobenius_norm(z);
        const double want = 0.5 * std::log1p(c * f * f);
        worst_lemma = std::max(worst_lemma, std::abs(got - want));

        const Matrix a = random_matrix(6, 6, rng);
        const Matrix spd = matmul_nt(a, a) + Matrix::identity(6);
        double eig_sum = 0.0;
        for (double ev : symmetric_eigenvalues(spd)) {
            eig_sum += std::log(ev);
        }
        worst_eig = std::max(worst_eig, std::abs(logdet_spd(spd) - eig_sum));
    }
    const bool ok = worst_lemma <= 1e-8 && worst_eig <= 1e-9;
    return {"determinant-lemma", ok, "rank-1 tcr error " + fmt(worst_lemma) + ", logdet vs eigenvalues " + fmt(worst_eig)};
}

SuiteResult pgd_suite(std::uint64_t seed) {
    Rng rng(derive_seed(seed, {stream::probe, 3}));
    double worst_loss = 0.0;
    double worst_ball = 0.0;
    double worst_delta = 0.0;
    for (int i = 0; i < 20; ++i) {
        const std::size_t n = 4 + rng.below(12);
        const Matrix w = random_matrix(n, 1, rng);
        const Matrix x = random_matrix(n, 1, rng, 0.3, 0.7);
        const double eps = 8.0 / 255.0;
        AttackConfig cfg = AttackConfig::training(eps, 1 + static_cast<int>(rng.below(5)));
        cfg.alpha = std::max(cfg.alpha, eps);
        const PixelObjective linear = [&](const Matrix& xa) { return LossAndGrad{frobenius_dot(w, xa), w}; };
        const Matrix delta = pgd(linear, x, cfg, seed, nullptr, [&](int, const Matrix& dlt) {
            worst_ball = std::max(worst_ball, max_abs(dlt) - eps);
        });
        Matrix optimum(n, 1);
        for (std::size_t k = 0; k < n; ++k) {
            optimum(k, 0) = w(k, 0) > 0 ? eps : (w(k, 0) < 0 ? -eps : 0.0);
        }
        worst_delta = std::max(worst_delta, max_abs(delta - optimum));
        worst_loss = std::max(worst_loss, std::abs(frobenius_dot(w, x + delta) - frobenius_dot(w, x + optimum)));
    }
    const bool ok = worst_loss <= 1e-6 && worst_ball <= 1e-12;
    return {"pgd-closed-form", ok,
            "loss gap " + fmt(worst_loss) + ", |delta - eps sign(w)| " + fmt(worst_delta) + ", max ball excess " +
                fmt(std::max(0.0, worst_ball))};
}

SuiteResult accounting_suite(std::uint64_t seed) {
    ContentStyleSpec ds;
    ds.num_classes = 2;
    ds.samples_per_class = 20;
    ds.shape = {4, 4, 1};
    ds.seed = seed;
    const ImageBatch data = generate(ds);

    TrainConfig cfg;
    cfg.total_epochs = 30;
    cfg.replays = 3;
    cfg.batch_size = 4;
    cfg.augment = AugmentSpec::crops(2);
    cfg.encoder.input_dim = ds.shape.pixels();
    cfg.encoder.hidden = {6};
    cfg.encoder.embed_dim = 3;
    cfg.scheme = TrainScheme::empssl_free;
    cfg.seed = seed;
    const PretrainResult free = pretrain(data, cfg);
    cfg.replays = 1;
    const PretrainResult single = pretrain(data, cfg);

    const TrainStats& s = free.stats;
    const bool ok = s.batches_per_epoch == 10 && s.outer_epochs == 10 && s.optimizer_steps == 300 &&
                    s.delta_updates == 300 && free.params.update_count() == 300 &&
                    single.stats.optimizer_steps == 300 && free.metrics.size() == 10;
    std::ostringstream os;
    os << "m=3: " << s.outer_epochs << " outer epochs, " << s.optimizer_steps << " optimizer steps, " << s.delta_updates
       << " delta updates; m=1: " << single.stats.optimizer_steps << " optimizer steps";
    return {"accounting", ok, os.str()};
}

template <typename F>
SuiteResult guarded(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return {name, false, std::string("threw: ") + e.what()};
    }
}

} // namespace

bool SelfCheckReport::passed() const {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
}

double gradient_rel_error(const std::function<ad::Var(ad::Graph&, ad::Var)>& build, const Matrix& x, double h,
                          double floor) {
    Matrix analytic;
    {
        ad::Graph g;
        const ad::Var leaf = g.leaf(x);
        analytic = g.backward(build(g, leaf)).of(leaf);
    }
    const auto eval = [&](const Matrix& at) {
        ad::Graph g;
        return build(g, g.leaf(at)).scalar();
    };
    double worst = 0.0;
    Matrix probe = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            probe(i, j) = x(i, j) + h;
            const double up = eval(probe);
            probe(i, j) = x(i, j) - h;
            const double down = eval(probe);
            probe(i, j) = x(i, j);
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic(i, j);
            const double scale = std::max(std::abs(a), std::abs(numeric));
            if (scale > floor) {
                worst = std::max(worst, std::abs(a - numeric) / scale);
            }
        }
    }
    return worst;
}

SelfCheckReport run_selfcheck(std::uint64_t seed) {
    SelfCheckReport report;
    double max_err = 0.0;
    report.suites.push_back(guarded("gradient-check", [&] { return gradient_suite(seed, max_err); }));
    report.max_gradient_rel_error = max_err;
    report.suites.push_back(guarded("determinant-lemma", [&] { return determinant_suite(seed); }));
    report.suites.push_back(guarded("pgd-closed-form", [&] { return pgd_suite(seed); }));
    report.suites.push_back(guarded("accounting", [&] { return accounting_suite(seed); }));
    return report;
}

} // namespace rssl
