#include "oracles.hpp"

#include "rssl/errors.hpp"
#include "rssl/losses.hpp"
#include "rssl/selfcheck.hpp"

#include <doctest.h>

#include <array>
#include <cmath>

using namespace rssl;

namespace {

double tcr_value(const Matrix& z, double eps_sq) {
    TcrConfig cfg;
    cfg.eps_sq = eps_sq;
    ad::Graph g;
    return tcr(g.constant(z), cfg).scalar();
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("tcr of the identity") {
    CHECK(tcr_value(Matrix::identity(2), 0.5) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("tcr of a rank-one batch") {
    // u = (1, 2), v = (1, -1, 0.5): 1/2 ln(1 + d/(b eps^2) |u|^2 |v|^2)
    const Matrix z = matmul(Matrix{{1.0}, {2.0}}, Matrix{{1.0, -1.0, 0.5}});
    CHECK(std::abs(tcr_value(z, 0.2) - 1.8253291206468694) < 1e-12);
}

TEST_CASE("tcr is nonnegative and zero only at Z = 0") {
    Rng rng(7);
    for (int t = 0; t < 30; ++t) {
        const Matrix z = oracle::random_matrix(1 + rng.below(8), 1 + rng.below(8), rng);
        CHECK(tcr_value(z, 0.2) > 0.0);
    }
    CHECK(tcr_value(Matrix(4, 3, 0.0), 0.2) == 0.0);
}

TEST_CASE("tcr obeys the determinant lemma on random rank-one input") {
    Rng rng(13);
    for (int t = 0; t < 20; ++t) {
        const std::size_t d = 2 + rng.below(7);
        const std::size_t b = 2 + rng.below(7);
        const Matrix u = oracle::random_matrix(d, 1, rng);
        const Matrix v = oracle::random_matrix(1, b, rng);
        const double uu = frobenius_dot(u, u);
        const double vv = frobenius_dot(v, v);
        const double want = 0.5 * std::log1p(static_cast<double>(d) / (static_cast<double>(b) * 0.2) * uu * vv);
        CHECK(std::abs(tcr_value(matmul(u, v), 0.2) - want) <= 1e-8);
    }
}

TEST_CASE("tcr is invariant under an orthogonal change of embedding basis") {
    Rng rng(19);
    const Matrix z = oracle::random_matrix(2, 5, rng);
    const double c = std::cos(0.7);
    const double s = std::sin(0.7);
    const Matrix rot{{c, -s}, {s, c}};
    CHECK(tcr_value(matmul(rot, z), 0.2) == doctest::Approx(tcr_value(z, 0.2)).epsilon(1e-12));
}

TEST_CASE("invariance is the trace alignment") {
    const Matrix zi{{0.2, -0.5, 0.7, 0.1}, {0.9, 0.3, -0.4, 0.6}, {-0.1, 0.8, 0.2, -0.3}};
    const Matrix zb{{0.5, 0.1, -0.2, 0.4}, {-0.3, 0.7, 0.6, 0.2}, {0.8, -0.6, 0.1, 0.9}};
    ad::Graph g;
    CHECK(invariance(g.constant(zi), g.constant(zb)).scalar() == doctest::Approx(-1.04).epsilon(1e-14));
    CHECK_THROWS_AS(invariance(g.constant(zi), g.constant(Matrix(3, 3))), ShapeMismatch);
}

TEST_CASE("multi-crop objective with two crops") {
    const Matrix zi{{0.2, -0.5, 0.7, 0.1}, {0.9, 0.3, -0.4, 0.6}, {-0.1, 0.8, 0.2, -0.3}};
    const Matrix zb{{0.5, 0.1, -0.2, 0.4}, {-0.3, 0.7, 0.6, 0.2}, {0.8, -0.6, 0.1, 0.9}};
    ad::Graph g;
    const std::array<ad::Var, 2> crops{ad::normalize_columns(g.constant(zi)), ad::normalize_columns(g.constant(zb))};
    const TcrConfig cfg; // eps^2 = 0.2, lambda = 200
    // numpy oracle on the normalized crops
    CHECK(std::abs(empssl_objective(crops, cfg).loss.scalar() - -256.5537466616555) < 1e-10);
    CHECK(std::abs(empssl_objective(crops, cfg, ObjectiveTerms::invariance_only).loss.scalar() -
                   -254.08916949325965) < 1e-10);
    const EmpSslTerms tcr_only = empssl_objective(crops, cfg, ObjectiveTerms::tcr_only);
    CHECK(std::abs(tcr_only.loss.scalar() - -2.464577168395881) < 1e-12);
    CHECK(tcr_only.tcr_mean == doctest::Approx(2.464577168395881));
}

TEST_CASE("identical crops make the invariance term maximal") {
    Rng rng(21);
    ad::Graph g;
    const ad::Var z = ad::normalize_columns(g.constant(oracle::random_matrix(4, 6, rng)));
    const std::array<ad::Var, 3> crops{z, z, z};
    const EmpSslTerms t = empssl_objective(crops, TcrConfig{});
    // unit columns: tr(Z^T Z) = b
    CHECK(t.invariance_mean == doctest::Approx(6.0));
    CHECK_THROWS_AS(empssl_objective(std::span<const ad::Var>{}, TcrConfig{}), EmptySet);
}

TEST_CASE("nt_xent closed forms") {
    ad::Graph g;
    const Matrix e1{{1.0, 1.0}, {0.0, 0.0}};
    CHECK(nt_xent(g.constant(e1), g.constant(e1), 0.5).scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    const Matrix pairs{{1.0, 0.0}, {0.0, 1.0}};
    const double e = std::exp(1.0);
    CHECK(nt_xent(g.constant(pairs), g.constant(pairs), 1.0).scalar() ==
          doctest::Approx(-std::log(e / (e + 2.0))).epsilon(1e-14));
    CHECK(-std::log(e / (e + 2.0)) == doctest::Approx(0.551445).epsilon(1e-6));
}

TEST_CASE("nt_xent positives and degenerate batch") {
    CHECK(nt_xent_positives(3) == std::vector<std::size_t>{3, 4, 5, 0, 1, 2});
    ad::Graph g;
    const Matrix one{{1.0}, {0.0}};
    CHECK_THROWS_AS(nt_xent(g.constant(one), g.constant(one), 0.5), DegenerateBatch);
}

TEST_CASE("nt_xent is symmetric in its two views") {
    Rng rng(25);
    ad::Graph g;
    const ad::Var a = ad::normalize_columns(g.constant(oracle::random_matrix(5, 4, rng)));
    const ad::Var b = ad::normalize_columns(g.constant(oracle::random_matrix(5, 4, rng)));
    CHECK(nt_xent(a, b, 0.5).scalar() == doctest::Approx(nt_xent(b, a, 0.5).scalar()).epsilon(1e-13));
}

TEST_CASE("loss gradients match finite differences on 20 instances each") {
    Rng rng(101);
    const TcrConfig cfg;
    double worst_tcr = 0.0;
    double worst_inv = 0.0;
    double worst_nt = 0.0;
    for (int t = 0; t < 20; ++t) {
        const std::size_t d = 1 + rng.below(8);
        const std::size_t b = 1 + rng.below(8);
        const oracle::Build f_tcr = [&](ad::Graph&, ad::Var z) { return tcr(z, cfg); };
        const Matrix z = oracle::random_matrix(d, b, rng);
        worst_tcr = std::max(worst_tcr, oracle::max_rel_error(oracle::tape_gradient(f_tcr, z),
                                                              oracle::finite_difference(f_tcr, z)));
        const Matrix zbar = oracle::random_matrix(d, b, rng);
        const oracle::Build f_inv = [&](ad::Graph& g, ad::Var x) { return invariance(x, g.constant(zbar)); };
        worst_inv = std::max(worst_inv, oracle::max_rel_error(oracle::tape_gradient(f_inv, z),
                                                              oracle::finite_difference(f_inv, z)));
        const std::size_t n = 2 + rng.below(3);
        const oracle::Build f_nt = [&](ad::Graph&, ad::Var x) {
            const ad::Var u = ad::normalize_columns(x);
            return nt_xent(ad::col_block(u, 0, n), ad::col_block(u, n, n), 0.5);
        };
        const Matrix x = oracle::random_matrix(d + 1, 2 * n, rng);
        worst_nt = std::max(worst_nt, oracle::max_rel_error(oracle::tape_gradient(f_nt, x),
                                                            oracle::finite_difference(f_nt, x)));
    }
    CHECK(worst_tcr < 1e-4);
    CHECK(worst_inv < 1e-4);
    CHECK(worst_nt < 1e-4);
}

TEST_CASE("the injected logdet fault is caught by the gradient check") {
    const oracle::Build f = [](ad::Graph& g, ad::Var x) {
        return ad::logdet_spd(ad::add(g.constant(Matrix::identity(3)), ad::matmul(x, ad::transpose(x))));
    };
    Rng rng(4);
    const Matrix x = oracle::random_matrix(3, 3, rng);
    CHECK(gradient_rel_error(f, x) < 1e-6);
    ad::set_logdet_gradient_fault(true);
    const double faulty = gradient_rel_error(f, x);
    ad::set_logdet_gradient_fault(false);
    CHECK(faulty > 1.0);
}

TEST_CASE("config validation") {
    TcrConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.eps_sq = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TcrConfig{};
    cfg.tau = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

} // TEST_SUITE
