#pragma once

// Shared random instances for the test binaries.

#include <cmath>
#include <random>
#include <vector>

#include "softds/data_model.hpp"
#include "softds/synthgen.hpp"

namespace softds::testing {

inline std::vector<double> random_simplex(std::mt19937_64& gen, std::size_t J, double shape = 0.7) {
    std::gamma_distribution<double> g(shape, 1.0);
    std::vector<double> v(J);
    double s = 0.0;
    for (double& x : v) {
        x = g(gen) + 1e-9;
        s += x;
    }
    for (double& x : v) {
        x /= s;
    }
    return v;
}

inline PredictionSet random_predictions(std::mt19937_64& gen, std::size_t N, std::size_t K,
                                        std::size_t J) {
    std::vector<double> probs;
    probs.reserve(N * K * J);
    for (std::size_t r = 0; r < N * K; ++r) {
        const auto row = random_simplex(gen, J);
        probs.insert(probs.end(), row.begin(), row.end());
    }
    return PredictionSet(default_item_ids(N), K, J, std::move(probs));
}

inline PosteriorMatrix random_posterior(std::mt19937_64& gen, std::size_t N, std::size_t J) {
    PosteriorMatrix post(default_item_ids(N), J);
    for (std::size_t i = 0; i < N; ++i) {
        const auto row = random_simplex(gen, J, 1.0);
        std::copy(row.begin(), row.end(), post.row(i).begin());
    }
    return post;
}

inline SdsModel random_model(std::mt19937_64& gen, std::size_t K, std::size_t J) {
    std::uniform_real_distribution<double> param(0.3, 5.0);
    std::vector<double> pi(K * J * J);
    for (double& v : pi) {
        v = param(gen);
    }
    return {ConfusionTensor(K, J, std::move(pi)), ClassPrior(random_simplex(gen, J, 2.0))};
}

/// Confusion tensor with diagonal mass `diag[k]` and the rest spread evenly,
/// every row scaled to sum to `concentration`.
inline ConfusionTensor diagonal_confusion(const std::vector<double>& diag, std::size_t J,
                                          double concentration) {
    const std::size_t K = diag.size();
    std::vector<double> pi(K * J * J);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t l = 0; l < J; ++l) {
                const double share = j == l ? diag[k] : (1.0 - diag[k]) / static_cast<double>(J - 1);
                pi[(k * J + j) * J + l] = concentration * share;
            }
        }
    }
    return ConfusionTensor(K, J, std::move(pi));
}

/// The recovery instance: three members of decreasing quality, five classes.
/// Rows sum to 1, so a member's hard-label frequencies track the Dirichlet mean.
inline GenerativeSpec recovery_spec(std::size_t n_items = 2000, std::uint64_t seed = 20240607) {
    const std::size_t J = 5;
    return {n_items, 3, J, ClassPrior::uniform(J), diagonal_confusion({0.9, 0.85, 0.8}, J, 1.0), seed};
}

inline double max_row_tv(const ConfusionTensor& fitted, const ConfusionTensor& truth) {
    const auto a = fitted.row_normalized();
    const auto b = truth.row_normalized();
    const std::size_t J = truth.n_classes();
    double worst = 0.0;
    for (std::size_t r = 0; r < truth.n_members() * J; ++r) {
        double tv = 0.0;
        for (std::size_t l = 0; l < J; ++l) {
            tv += std::abs(a[r * J + l] - b[r * J + l]);
        }
        worst = std::max(worst, 0.5 * tv);
    }
    return worst;
}

} // namespace softds::testing
