#pragma once

// Special functions and probability primitives.
//
// ln Gamma uses the Stirling series with Bernoulli-number coefficients after
// shifting the argument to x >= 10 with the recurrence Gamma(x+1) = x Gamma(x).
// digamma shifts to x >= 10 with psi(x+1) = psi(x) + 1/x and then applies the
// asymptotic expansion. Both are self-contained; no libm special functions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace softds {

inline constexpr double kDefaultProbFloor = 1e-12;

namespace detail {

inline void require_positive_finite(double x, const char* fn) {
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw std::domain_error(std::string(fn) + ": argument must be positive and finite, got " +
                                std::to_string(x));
    }
}

// Stirling series for ln Gamma(z), z >= 10. Coefficients are
// B_{2n} / (2n (2n-1)) for n = 1..7.
inline double log_gamma_stirling(double z) {
    constexpr double c1 = 1.0 / 12.0;
    constexpr double c2 = -1.0 / 360.0;
    constexpr double c3 = 1.0 / 1260.0;
    constexpr double c4 = -1.0 / 1680.0;
    constexpr double c5 = 1.0 / 1188.0;
    constexpr double c6 = -691.0 / 360360.0;
    constexpr double c7 = 1.0 / 156.0;
    const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
    const double inv = 1.0 / z;
    const double inv2 = inv * inv;
    const double series =
        inv * (c1 + inv2 * (c2 + inv2 * (c3 + inv2 * (c4 + inv2 * (c5 + inv2 * (c6 + inv2 * c7))))));
    return (z - 0.5) * std::log(z) - z + half_log_two_pi + series;
}

} // namespace detail

/// ln Gamma(x) for x > 0.
inline double log_gamma(double x) {
    detail::require_positive_finite(x, "log_gamma");
    if (x >= 10.0) {
        return detail::log_gamma_stirling(x);
    }
    // ln Gamma(x) = ln Gamma(x + n) - ln(x (x+1) ... (x+n-1))
    double shifted = x;
    double product = 1.0;
    while (shifted < 10.0) {
        product *= shifted;
        shifted += 1.0;
    }
    return detail::log_gamma_stirling(shifted) - std::log(product);
}

/// psi(x) = d/dx ln Gamma(x) for x > 0.
inline double digamma(double x) {
    detail::require_positive_finite(x, "digamma");
    double acc = 0.0;
    double z = x;
    while (z < 10.0) {
        acc -= 1.0 / z;
        z += 1.0;
    }
    const double inv = 1.0 / z;
    const double inv2 = inv * inv;
    // -sum_{n>=1} B_{2n} / (2n z^{2n})
    const double tail =
        inv2 * (1.0 / 12.0 -
                inv2 * (1.0 / 120.0 -
                        inv2 * (1.0 / 252.0 -
                                inv2 * (1.0 / 240.0 -
                                        inv2 * (1.0 / 132.0 -
                                                inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))));
    return acc + std::log(z) - 0.5 * inv - tail;
}

/// ln sum_j exp(w_j), shifted by the maximum.
inline double log_sum_exp(std::span<const double> w) {
    if (w.empty()) {
        throw std::invalid_argument("log_sum_exp: empty input");
    }
    const double top = *std::max_element(w.begin(), w.end());
    if (!std::isfinite(top)) {
        return top;
    }
    double sum = 0.0;
    for (double v : w) {
        sum += std::exp(v - top);
    }
    return top + std::log(sum);
}

/// Softmax of log weights. Entries equal to -inf map to probability 0.
inline std::vector<double> normalize_log(std::span<const double> w) {
    const double lse = log_sum_exp(w);
    if (!std::isfinite(lse)) {
        throw std::domain_error("normalize_log: weights have no finite maximum");
    }
    std::vector<double> out(w.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        out[j] = std::exp(w[j] - lse);
        sum += out[j];
    }
    // exp/log rounding leaves the total a few ulps off 1
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

/// ln Dir(c; pi) = sum_l (pi_l - 1) ln c_l - sum_l ln Gamma(pi_l) + ln Gamma(sum_l pi_l).
/// `c` is expected to be floored already; entries are floored again at `prob_floor`.
inline double dirichlet_log_density(std::span<const double> c, std::span<const double> pi_row,
                                    double prob_floor = kDefaultProbFloor) {
    if (c.size() != pi_row.size() || c.empty()) {
        throw std::invalid_argument("dirichlet_log_density: size mismatch");
    }
    double log_norm = 0.0;
    double pi_sum = 0.0;
    double kernel = 0.0;
    for (std::size_t l = 0; l < c.size(); ++l) {
        if (!(pi_row[l] > 0.0) || !std::isfinite(pi_row[l])) {
            throw std::domain_error("dirichlet_log_density: parameters must be positive");
        }
        kernel += (pi_row[l] - 1.0) * std::log(std::max(c[l], prob_floor));
        log_norm += log_gamma(pi_row[l]);
        pi_sum += pi_row[l];
    }
    return kernel - log_norm + log_gamma(pi_sum);
}

} // namespace softds
