#include "rssl/losses.hpp"

#include "rssl/errors.hpp"

#include <array>
#include <string>

namespace rssl {

void TcrConfig::validate() const {
    if (!(eps_sq > 0.0)) {
        throw ConfigError("eps_sq must be positive");
    }
    if (!(tau > 0.0)) {
        throw ConfigError("tau must be positive");
    }
    if (!(lambda >= 0.0)) {
        throw ConfigError("lambda must be nonnegative");
    }
}

ad::Var tcr(ad::Var z, const TcrConfig& cfg) {
    const std::size_t d = z.rows();
    const std::size_t b = z.cols();
    const double c = static_cast<double>(d) / (static_cast<double>(b) * cfg.eps_sq);
    ad::Graph& g = *z.graph;
    const ad::Var gram = ad::matmul(z, ad::transpose(z));
    const ad::Var m = ad::add(g.constant(Matrix::identity(d)), ad::scale(gram, c));
    return ad::scale(ad::logdet_spd(m), 0.5);
}

ad::Var invariance(ad::Var zi, ad::Var zbar) {
    if (!zi.value().same_shape(zbar.value())) {
        throw ShapeMismatch("invariance: Z_i and Zbar shapes differ");
    }
    return ad::frobenius_dot(zi, zbar);
}

EmpSslTerms empssl_objective(std::span<const ad::Var> crops, const TcrConfig& cfg, ObjectiveTerms terms) {
    if (crops.empty()) {
        throw EmptySet("empssl_objective needs at least one crop");
    }
    const ad::Var zbar = ad::mean_of(crops);
    const double inv_c = 1.0 / static_cast<double>(crops.size());

    EmpSslTerms out;
    std::vector<ad::Var> per_crop;
    per_crop.reserve(crops.size());
    for (const ad::Var& zi : crops) {
        const ad::Var r = tcr(zi, cfg);
        const ad::Var dterm = invariance(zi, zbar);
        out.tcr_mean += r.scalar() * inv_c;
        out.invariance_mean += dterm.scalar() * inv_c;
        switch (terms) {
        case ObjectiveTerms::full:
            per_crop.push_back(ad::add(r, ad::scale(dterm, cfg.lambda)));
            break;
        case ObjectiveTerms::invariance_only:
            per_crop.push_back(ad::scale(dterm, cfg.lambda));
            break;
        case ObjectiveTerms::tcr_only:
            per_crop.push_back(r);
            break;
        }
    }
    out.loss = ad::scale(ad::mean_of(per_crop), -1.0);
    return out;
}

std::vector<std::size_t> nt_xent_positives(std::size_t n) {
    std::vector<std::size_t> pos(2 * n);
    for (std::size_t j = 0; j < n; ++j) {
        pos[j] = j + n;
        pos[j + n] = j;
    }
    return pos;
}

ad::Var nt_xent(ad::Var first, ad::Var second, double tau) {
    if (!first.value().same_shape(second.value())) {
        throw ShapeMismatch("nt_xent: view batches differ in shape");
    }
    const std::size_t n = first.cols();
    if (n < 2) {
        throw DegenerateBatch("nt_xent needs N >= 2, got " + std::to_string(n));
    }
    const std::array<ad::Var, 2> views{first, second};
    const ad::Var z = ad::hcat(views);
    const ad::Var sim = ad::scale(ad::matmul(ad::transpose(z), z), 1.0 / tau);
    const std::vector<std::size_t> pos = nt_xent_positives(n);
    return ad::cross_entropy_columns(sim, pos, /*exclude_diagonal=*/true);
}

} // namespace rssl
