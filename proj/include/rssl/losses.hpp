#pragma once

#include "rssl/autodiff.hpp"

#include <span>
#include <vector>

namespace rssl {

/// Coefficients shared by the coding-rate, invariance and contrastive losses.
struct TcrConfig {
    double eps_sq = 0.2;   ///< distortion epsilon^2 in d / (b eps^2)
    double lambda = 200.0; ///< invariance weight
    double tau = 0.5;      ///< NT-Xent temperature

    void validate() const;
};

/// Which terms of the multi-crop objective are active.
enum class ObjectiveTerms { full, invariance_only, tcr_only };

/// R(Z) = 1/2 log det(I + d / (b eps^2) Z Z^T) for Z of shape d x b.
/// Always >= 0.
ad::Var tcr(ad::Var z, const TcrConfig& cfg);

/// D(Z_i, Zbar) = trace(Z_i^T Zbar).
ad::Var invariance(ad::Var zi, ad::Var zbar);

/// Values of the multi-crop objective and its parts for one evaluation.
struct EmpSslTerms {
    ad::Var loss;            ///< -(1/C) sum_i [R(Z_i) + lambda D(Z_i, Zbar)]
    double tcr_mean = 0.0;   ///< (1/C) sum_i R(Z_i)
    double invariance_mean = 0.0;
};

/// Multi-crop objective over C crop embeddings (each d x b, equal shapes).
///
/// Sign convention: the returned loss is the NEGATED maximization objective.
/// Training minimizes it; an adversary maximizes it.
EmpSslTerms empssl_objective(std::span<const ad::Var> crops, const TcrConfig& cfg,
                             ObjectiveTerms terms = ObjectiveTerms::full);

/// NT-Xent over 2N unit-norm embeddings: column j of `first` is the positive
/// of column j of `second`. Each anchor's softmax runs over the other 2N - 1
/// embeddings. Throws DegenerateBatch for N < 2.
ad::Var nt_xent(ad::Var first, ad::Var second, double tau);

/// Positive index for each of the 2N anchors in the concatenation
/// [first | second]: j <-> j + N.
std::vector<std::size_t> nt_xent_positives(std::size_t n);

} // namespace rssl
