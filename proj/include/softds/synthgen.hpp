#pragma once

// Sampler for the generative model: t_i ~ Categorical(nu), and each member's
// soft output c_i^(k) ~ Dirichlet(pi^(k)_{t_i}).
//
// Randomness: std::mt19937_64 seeded through std::seed_seq, whose algorithm is
// fixed by the standard. Every (item, stream) pair gets its own generator,
// stream 0 drawing the label and stream k+1 drawing member k, so adding members
// or items never perturbs earlier draws. Variates are derived from raw 64-bit
// outputs here rather than std:: distributions, whose algorithms are
// implementation-defined.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "softds/core_math.hpp"
#include "softds/data_model.hpp"
#include "softds/errors.hpp"

namespace softds {

struct GenerativeSpec {
    std::size_t n_items = 0;
    std::size_t n_members = 0;
    std::size_t n_classes = 0;
    ClassPrior nu_true;
    ConfusionTensor pi_true;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_items < 1 || n_members < 1 || n_classes < 2) {
            throw ValidationError("generative spec needs n_items >= 1, n_members >= 1, n_classes >= 2");
        }
        if (nu_true.n_classes() != n_classes || pi_true.n_classes() != n_classes ||
            pi_true.n_members() != n_members) {
            throw ValidationError("generative spec: nu/pi shapes do not match the declared sizes");
        }
    }
};

struct SyntheticData {
    PredictionSet predictions;
    GroundTruth truth;
};

/// Generator for one (seed, item, stream) triple.
inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint64_t item, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(item), static_cast<std::uint32_t>(item >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

/// Uniform on the open interval (0, 1) with 53 random bits.
inline double uniform_open(std::mt19937_64& gen) {
    return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via the Marsaglia polar method.
inline double standard_normal(std::mt19937_64& gen) {
    while (true) {
        const double u = 2.0 * uniform_open(gen) - 1.0;
        const double v = 2.0 * uniform_open(gen) - 1.0;
        const double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

/// ln of a Gamma(shape, 1) draw. Marsaglia-Tsang for shape >= 1; shape < 1 uses
/// Gamma(a) = Gamma(a + 1) * U^(1/a), kept in log space so tiny draws do not underflow.
inline double log_gamma_variate(double shape, std::mt19937_64& gen) {
    if (shape < 1.0) {
        const double boosted = log_gamma_variate(shape + 1.0, gen);
        return boosted + std::log(uniform_open(gen)) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = standard_normal(gen);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform_open(gen);
        if (u < 1.0 - 0.0331 * x * x * x * x ||
            std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return std::log(d * v);
        }
    }
}

/// Dirichlet draw by normalizing independent Gamma draws.
inline std::vector<double> dirichlet_variate(std::span<const double> alpha, std::mt19937_64& gen) {
    std::vector<double> logs(alpha.size());
    for (std::size_t l = 0; l < alpha.size(); ++l) {
        logs[l] = log_gamma_variate(alpha[l], gen);
    }
    return normalize_log(logs);
}

inline ClassIndex categorical_variate(std::span<const double> probs, std::mt19937_64& gen) {
    const double u = uniform_open(gen);
    double cumulative = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
        cumulative += probs[j];
        if (u < cumulative) {
            return static_cast<ClassIndex>(j);
        }
    }
    // rounding left u above the final cumulative sum: take the last class with mass
    for (std::size_t j = probs.size(); j-- > 0;) {
        if (probs[j] > 0.0) {
            return static_cast<ClassIndex>(j);
        }
    }
    return 0;
}

inline SyntheticData sample(const GenerativeSpec& spec, double prob_floor = kDefaultProbFloor) {
    spec.validate();
    const std::size_t K = spec.n_members;
    const std::size_t J = spec.n_classes;
    GroundTruth truth{default_item_ids(spec.n_items), std::vector<ClassIndex>(spec.n_items)};
    std::vector<double> probs(spec.n_items * K * J);
    for (std::size_t i = 0; i < spec.n_items; ++i) {
        auto label_gen = stream_engine(spec.seed, i, 0);
        const ClassIndex t = categorical_variate(spec.nu_true.values(), label_gen);
        truth.labels[i] = t;
        for (std::size_t k = 0; k < K; ++k) {
            auto member_gen = stream_engine(spec.seed, i, k + 1);
            const auto c = dirichlet_variate(spec.pi_true.row(k, t), member_gen);
            std::copy(c.begin(), c.end(), probs.begin() + static_cast<std::ptrdiff_t>((i * K + k) * J));
        }
    }
    PredictionSet preds(truth.item_ids, K, J, std::move(probs), prob_floor);
    return {std::move(preds), std::move(truth)};
}

/// Exact posterior under the true parameters:
/// row i proportional to nu_j prod_k Dir(c_i^(k); pi^(k)_j).
inline PosteriorMatrix bayes_posterior(const GenerativeSpec& spec, const PredictionSet& preds,
                                       double prob_floor = kDefaultProbFloor) {
    if (preds.n_members() != spec.n_members || preds.n_classes() != spec.n_classes) {
        throw ValidationError("bayes_posterior: predictions do not match the generative spec");
    }
    const std::size_t J = spec.n_classes;
    PosteriorMatrix out(preds.item_ids(), J);
    std::vector<long double> lw(J);
    for (std::size_t i = 0; i < preds.n_items(); ++i) {
        long double top = -std::numeric_limits<long double>::infinity();
        for (std::size_t j = 0; j < J; ++j) {
            if (spec.nu_true[j] <= 0.0) {
                lw[j] = -std::numeric_limits<long double>::infinity();
                continue;
            }
            long double s = std::log(static_cast<long double>(spec.nu_true[j]));
            for (std::size_t k = 0; k < spec.n_members; ++k) {
                s += dirichlet_log_density(preds.row(i, k), spec.pi_true.row(k, j), prob_floor);
            }
            lw[j] = s;
            top = std::max(top, s);
        }
        long double z = 0.0L;
        for (std::size_t j = 0; j < J; ++j) {
            z += std::exp(lw[j] - top);
        }
        auto r = out.row(i);
        for (std::size_t j = 0; j < J; ++j) {
            r[j] = static_cast<double>(std::exp(lw[j] - top) / z);
        }
    }
    return out;
}

} // namespace softds
