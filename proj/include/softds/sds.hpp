#pragma once

// Soft Dawid-Skene: each member's soft output for an item with true class j is
// Dirichlet-distributed with parameter row pi^(k)_j; true classes follow a
// categorical prior nu. Parameters are fitted by EM with a damped (Polyak
// averaged) E-step, a closed-form nu M-step and a few AdamW steps on pi.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "softds/baselines.hpp"
#include "softds/core_math.hpp"
#include "softds/data_model.hpp"
#include "softds/errors.hpp"
#include "softds/optimizer.hpp"
#include "softds/parallel.hpp"

namespace softds {

/// ln nu is taken on values floored here so an empty class stays finite.
inline constexpr double kLogPriorFloor = 1e-300;

struct FitRecord {
    std::size_t iteration = 0;
    double q = 0.0;
    double alpha = 0.0;
    double millis = 0.0;
};

struct FitTrace {
    std::vector<FitRecord> records;
};

struct FitResult {
    SdsModel model;
    PosteriorMatrix posterior;
    FitTrace trace;
};

/// ln c for every prediction entry, floored at `prob_floor`.
class LogPredictions {
public:
    LogPredictions(const PredictionSet& preds, double prob_floor)
        : n_members_(preds.n_members()), n_classes_(preds.n_classes()), logs_(preds.data().size()) {
        const auto src = preds.data();
        for (std::size_t p = 0; p < src.size(); ++p) {
            logs_[p] = std::log(std::max(src[p], prob_floor));
        }
    }

    std::size_t n_items() const noexcept { return logs_.size() / (n_members_ * n_classes_); }
    std::size_t n_members() const noexcept { return n_members_; }
    std::size_t n_classes() const noexcept { return n_classes_; }

    std::span<const double> item(std::size_t i) const {
        const std::size_t width = n_members_ * n_classes_;
        return {logs_.data() + i * width, width};
    }

private:
    std::size_t n_members_;
    std::size_t n_classes_;
    std::vector<double> logs_;
};

/// Model quantities that do not depend on the item: ln nu_j and, per (k, j),
/// the Dirichlet log normalizer ln Gamma(sum_l pi_jl) - sum_l ln Gamma(pi_jl).
struct ModelTerms {
    std::vector<double> log_nu;
    std::vector<double> log_norm; // [member][class]

    explicit ModelTerms(const SdsModel& model) {
        const std::size_t K = model.pi.n_members();
        const std::size_t J = model.pi.n_classes();
        if (model.nu.n_classes() != J) {
            throw ValidationError("model: prior and confusion tensor disagree on class count");
        }
        log_nu.resize(J);
        for (std::size_t j = 0; j < J; ++j) {
            log_nu[j] = std::log(std::max(model.nu[j], kLogPriorFloor));
        }
        log_norm.resize(K * J);
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t j = 0; j < J; ++j) {
                double sum = 0.0;
                double lg = 0.0;
                for (double v : model.pi.row(k, j)) {
                    if (!(v > 0.0) || !std::isfinite(v)) {
                        throw std::domain_error("confusion parameters must be positive and finite");
                    }
                    lg += log_gamma(v);
                    sum += v;
                }
                log_norm[k * J + j] = log_gamma(sum) - lg;
            }
        }
    }
};

namespace detail {

inline void check_shapes(const PredictionSet& preds, const SdsModel& model) {
    if (preds.n_members() != model.pi.n_members() || preds.n_classes() != model.pi.n_classes() ||
        model.nu.n_classes() != preds.n_classes()) {
        throw ValidationError("predictions and model disagree on member or class count");
    }
}

inline void check_shapes(const PredictionSet& preds, const PosteriorMatrix& post) {
    if (post.n_items() != preds.n_items() || post.n_classes() != preds.n_classes()) {
        throw ValidationError("predictions and posterior disagree on item or class count");
    }
}

// sum_l (pi_jl - 1) ln c_l for one member row
inline double member_data_term(std::span<const double> pi_row, std::span<const double> log_c) {
    double s = 0.0;
    for (std::size_t l = 0; l < pi_row.size(); ++l) {
        s += (pi_row[l] - 1.0) * log_c[l];
    }
    return s;
}

inline double sorted_sum(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) {
        s += v;
    }
    return s;
}

} // namespace detail

/// Unnormalized log posterior of one item. `log_c` holds the item's K rows of
/// ln c, member-major; `out` receives J log weights.
///
/// Per-member contributions are summed in sorted order, so relabeling the
/// members leaves the result bitwise unchanged.
inline void item_log_weights(std::span<const double> log_c, const SdsModel& model,
                             const ModelTerms& terms, std::span<double> out) {
    const std::size_t K = model.pi.n_members();
    const std::size_t J = model.pi.n_classes();
    std::vector<double> per_member(K);
    for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t k = 0; k < K; ++k) {
            per_member[k] = detail::member_data_term(model.pi.row(k, j), log_c.subspan(k * J, J)) +
                            terms.log_norm[k * J + j];
        }
        out[j] = terms.log_nu[j] + detail::sorted_sum(per_member);
    }
}

/// Normalized E-step posteriors from cached logs, no averaging.
inline PosteriorMatrix e_step_raw(const LogPredictions& logs, const SdsModel& model,
                                  std::vector<std::string> item_ids, unsigned threads = 1) {
    const ModelTerms terms(model);
    const std::size_t J = model.pi.n_classes();
    PosteriorMatrix out(std::move(item_ids), J);
    for_each_block(logs.n_items(), threads, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> w(J);
        for (std::size_t i = begin; i < end; ++i) {
            item_log_weights(logs.item(i), model, terms, w);
            const auto p = normalize_log(w);
            std::copy(p.begin(), p.end(), out.row(i).begin());
        }
    });
    return out;
}

inline PosteriorMatrix e_step_raw(const PredictionSet& preds, const SdsModel& model,
                                  double prob_floor = kDefaultProbFloor, unsigned threads = 1) {
    detail::check_shapes(preds, model);
    return e_step_raw(LogPredictions(preds, prob_floor), model, preds.item_ids(), threads);
}

/// Rowwise (1 - alpha) * old + alpha * fresh.
inline PosteriorMatrix polyak_update(const PosteriorMatrix& old, const PosteriorMatrix& fresh,
                                     double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw ValidationError("polyak_update: alpha must lie in (0, 1]");
    }
    if (old.n_items() != fresh.n_items() || old.n_classes() != fresh.n_classes()) {
        throw ValidationError("polyak_update: shape mismatch");
    }
    std::vector<double> mixed(old.values().size());
    const auto a = old.values();
    const auto b = fresh.values();
    for (std::size_t p = 0; p < mixed.size(); ++p) {
        mixed[p] = (1.0 - alpha) * a[p] + alpha * b[p];
    }
    return PosteriorMatrix(fresh.item_ids(), fresh.n_classes(), std::move(mixed));
}

/// nu_j = sum_i post_ij / sum_i sum_j' post_ij'.
inline ClassPrior m_step_nu(const PosteriorMatrix& post, unsigned threads = 1) {
    const std::size_t J = post.n_classes();
    auto mass = reduce_blocks(post.n_items(), J, threads,
                              [&](std::size_t begin, std::size_t end, std::span<double> acc) {
                                  for (std::size_t i = begin; i < end; ++i) {
                                      const auto r = post.row(i);
                                      for (std::size_t j = 0; j < J; ++j) {
                                          acc[j] += r[j];
                                      }
                                  }
                              });
    double total = 0.0;
    for (double m : mass) {
        total += m;
    }
    if (!(total > 0.0)) {
        throw NumericError("m_step_nu: posterior has no mass");
    }
    for (double& m : mass) {
        m /= total;
    }
    return ClassPrior(std::move(mass));
}

/// Posterior-weighted statistics that Q and its gradient depend on:
/// class_mass[j] = sum_i post_ij and weighted_log[k][j][l] = sum_i post_ij ln c_il^(k).
struct SoftCounts {
    std::size_t n_members = 0;
    std::size_t n_classes = 0;
    std::vector<double> class_mass;
    std::vector<double> weighted_log;
};

inline SoftCounts soft_counts(const LogPredictions& logs, const PosteriorMatrix& post,
                              unsigned threads = 1) {
    const std::size_t K = logs.n_members();
    const std::size_t J = logs.n_classes();
    const std::size_t width = J + K * J * J;
    auto total = reduce_blocks(logs.n_items(), width, threads,
                               [&](std::size_t begin, std::size_t end, std::span<double> acc) {
                                   for (std::size_t i = begin; i < end; ++i) {
                                       const auto p = post.row(i);
                                       const auto lc = logs.item(i);
                                       for (std::size_t j = 0; j < J; ++j) {
                                           acc[j] += p[j];
                                       }
                                       for (std::size_t k = 0; k < K; ++k) {
                                           for (std::size_t j = 0; j < J; ++j) {
                                               double* dst = acc.data() + J + (k * J + j) * J;
                                               for (std::size_t l = 0; l < J; ++l) {
                                                   dst[l] += p[j] * lc[k * J + l];
                                               }
                                           }
                                       }
                                   }
                               });
    SoftCounts out{K, J, {}, {}};
    out.class_mass.assign(total.begin(), total.begin() + static_cast<std::ptrdiff_t>(J));
    out.weighted_log.assign(total.begin() + static_cast<std::ptrdiff_t>(J), total.end());
    return out;
}

/// Q evaluated from soft counts; equal to `q_function` up to summation order.
inline double q_from_counts(const SoftCounts& counts, const SdsModel& model) {
    const std::size_t K = counts.n_members;
    const std::size_t J = counts.n_classes;
    const ModelTerms terms(model);
    double q = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        if (counts.class_mass[j] == 0.0) {
            continue;
        }
        if (!(model.nu[j] > 0.0)) {
            throw std::domain_error("q_function: zero prior on a class with posterior mass");
        }
        q += counts.class_mass[j] * std::log(model.nu[j]);
    }
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < J; ++j) {
            const auto pi_row = model.pi.row(k, j);
            const double* s = counts.weighted_log.data() + (k * J + j) * J;
            for (std::size_t l = 0; l < J; ++l) {
                q += (pi_row[l] - 1.0) * s[l];
            }
            q += counts.class_mass[j] * terms.log_norm[k * J + j];
        }
    }
    return q;
}

/// dQ/dpi_jl^(k) = sum_i post_ij (ln c_il^(k) - psi(pi_jl^(k)) + psi(sum_l' pi_jl'^(k))).
inline std::vector<double> q_grad_from_counts(const SoftCounts& counts, const ConfusionTensor& pi) {
    const std::size_t K = counts.n_members;
    const std::size_t J = counts.n_classes;
    std::vector<double> grad(K * J * J);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < J; ++j) {
            const auto pi_row = pi.row(k, j);
            double sum = 0.0;
            for (double v : pi_row) {
                if (!(v > 0.0) || !std::isfinite(v)) {
                    throw std::domain_error("q_grad_pi: confusion parameters must be positive");
                }
                sum += v;
            }
            const double psi_sum = digamma(sum);
            const double mass = counts.class_mass[j];
            for (std::size_t l = 0; l < J; ++l) {
                const std::size_t idx = (k * J + j) * J + l;
                grad[idx] = counts.weighted_log[idx] - mass * (digamma(pi_row[l]) - psi_sum);
            }
        }
    }
    return grad;
}

/// Expected complete-data log likelihood, evaluated item by item.
inline double q_function(const PredictionSet& preds, const PosteriorMatrix& post,
                         const SdsModel& model, double prob_floor = kDefaultProbFloor,
                         unsigned threads = 1) {
    detail::check_shapes(preds, model);
    detail::check_shapes(preds, post);
    const std::size_t K = preds.n_members();
    const std::size_t J = preds.n_classes();
    const ModelTerms terms(model);
    const auto total = reduce_blocks(
        preds.n_items(), 1, threads, [&](std::size_t begin, std::size_t end, std::span<double> acc) {
            for (std::size_t i = begin; i < end; ++i) {
                const auto p = post.row(i);
                for (std::size_t j = 0; j < J; ++j) {
                    if (p[j] == 0.0) {
                        continue;
                    }
                    if (!(model.nu[j] > 0.0)) {
                        throw std::domain_error(
                            "q_function: zero prior on a class with posterior mass");
                    }
                    double bracket = std::log(model.nu[j]);
                    for (std::size_t k = 0; k < K; ++k) {
                        const auto c = preds.row(i, k);
                        const auto pi_row = model.pi.row(k, j);
                        for (std::size_t l = 0; l < J; ++l) {
                            bracket += (pi_row[l] - 1.0) * std::log(std::max(c[l], prob_floor));
                        }
                        bracket += terms.log_norm[k * J + j];
                    }
                    acc[0] += p[j] * bracket;
                }
            }
        });
    return total[0];
}

/// Gradient of Q with respect to every confusion parameter, laid out like ConfusionTensor.
inline std::vector<double> q_grad_pi(const PredictionSet& preds, const PosteriorMatrix& post,
                                     const SdsModel& model, double prob_floor = kDefaultProbFloor,
                                     unsigned threads = 1) {
    detail::check_shapes(preds, model);
    detail::check_shapes(preds, post);
    return q_grad_from_counts(soft_counts(LogPredictions(preds, prob_floor), post, threads),
                              model.pi);
}

inline AdamWSettings adamw_settings(const SdsConfig& config) {
    return {config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon,
            config.weight_decay};
}

/// `config.inner_steps` AdamW steps on -Q over pi with posteriors held fixed,
/// clamping at `config.pi_floor` after each step. `state` carries across calls.
inline ConfusionTensor m_step_pi(const SoftCounts& counts, const SdsModel& model,
                                 const SdsConfig& config, AdamState& state) {
    ConfusionTensor pi = model.pi;
    auto params = pi.values();
    if (state.m.size() != params.size()) {
        state = AdamState(params.size());
    }
    const AdamWSettings settings = adamw_settings(config);
    std::vector<double> loss_grad(params.size());
    for (std::size_t s = 0; s < config.inner_steps; ++s) {
        const auto grad = q_grad_from_counts(counts, pi);
        for (std::size_t p = 0; p < grad.size(); ++p) {
            loss_grad[p] = -grad[p];
        }
        adamw_step(params, loss_grad, state, settings);
        for (double& v : params) {
            v = std::max(v, config.pi_floor);
        }
    }
    return pi;
}

inline ConfusionTensor m_step_pi(const PredictionSet& preds, const PosteriorMatrix& post,
                                 const SdsModel& model, const SdsConfig& config, AdamState& state,
                                 unsigned threads = 1) {
    detail::check_shapes(preds, model);
    detail::check_shapes(preds, post);
    return m_step_pi(soft_counts(LogPredictions(preds, config.prob_floor), post, threads), model,
                     config, state);
}

/// Initial model: one DS iteration on hardened predictions, scaled into
/// Dirichlet parameters as concentration * (confusion + smoothing).
inline SdsModel initial_model(const PredictionSet& preds, const SdsConfig& config) {
    const auto [ds, ds_post] = ds_em(harden(preds), 1, config.ds_init_smoothing);
    const std::size_t K = preds.n_members();
    const std::size_t J = preds.n_classes();
    std::vector<double> pi(K * J * J);
    for (std::size_t p = 0; p < pi.size(); ++p) {
        pi[p] = std::max(config.ds_init_concentration * (ds.confusion[p] + config.ds_init_smoothing),
                         config.pi_floor);
    }
    return {ConfusionTensor(K, J, std::move(pi)), ds.prior};
}

namespace detail {

inline void check_finite(const PosteriorMatrix& post, const char* what) {
    for (double v : post.values()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(what) + ": non-finite posterior");
        }
    }
}

} // namespace detail

/// Full EM fit. Posteriors start from the ensemble average; every iteration
/// runs a damped E-step then the nu and pi M-steps, and records Q.
inline FitResult fit(const PredictionSet& preds, const SdsConfig& config, unsigned threads = 1) {
    config.validate();
    using clock = std::chrono::steady_clock;
    const auto started = clock::now();

    const LogPredictions logs(preds, config.prob_floor);
    SdsModel model = initial_model(preds, config);
    PosteriorMatrix post = ensemble_average(preds);
    AdamState state(model.pi.values().size());
    FitTrace trace;

    for (std::size_t it = 0; it < config.em_iterations; ++it) {
        const double alpha = config.alpha_at(it);
        post = polyak_update(post, e_step_raw(logs, model, preds.item_ids(), threads), alpha);
        detail::check_finite(post, "fit");

        model.nu = m_step_nu(post, threads);
        const SoftCounts counts = soft_counts(logs, post, threads);
        if (config.reset_optimizer_each_m_step) {
            state.reset();
        }
        model.pi = m_step_pi(counts, model, config, state);
        const double q = q_from_counts(counts, model);
        if (!std::isfinite(q)) {
            throw NumericError("fit: Q became non-finite at iteration " + std::to_string(it));
        }
        const double millis =
            std::chrono::duration<double, std::milli>(clock::now() - started).count();
        trace.records.push_back({it, q, alpha, millis});

        if (config.q_rel_tolerance > 0.0 && trace.records.size() >= 2) {
            const double previous = trace.records[trace.records.size() - 2].q;
            if (std::abs(q - previous) < config.q_rel_tolerance * std::abs(q)) {
                break;
            }
        }
    }
    return {std::move(model), std::move(post), std::move(trace)};
}

/// Posterior of a single item under a frozen model: one undamped E-step.
/// `item_probs` holds K rows of J probabilities, member-major, already floored.
inline std::vector<double> online_infer(std::span<const double> item_probs, const SdsModel& model,
                                        const ModelTerms& terms,
                                        double prob_floor = kDefaultProbFloor) {
    const std::size_t K = model.pi.n_members();
    const std::size_t J = model.pi.n_classes();
    if (item_probs.size() != K * J) {
        throw ValidationError("online_infer: expected " + std::to_string(K * J) +
                              " probabilities, got " + std::to_string(item_probs.size()));
    }
    std::vector<double> log_c(item_probs.size());
    for (std::size_t p = 0; p < log_c.size(); ++p) {
        log_c[p] = std::log(std::max(item_probs[p], prob_floor));
    }
    std::vector<double> w(J);
    item_log_weights(log_c, model, terms, w);
    return normalize_log(w);
}

inline std::vector<double> online_infer(std::span<const double> item_probs, const SdsModel& model,
                                        double prob_floor = kDefaultProbFloor) {
    return online_infer(item_probs, model, ModelTerms(model), prob_floor);
}

/// Additive decomposition of one item's unnormalized log posterior.
struct Explanation {
    std::size_t n_members = 0;
    std::size_t n_classes = 0;
    std::vector<double> prior_term;      // [class] ln nu_j
    std::vector<double> member_term;     // [member][class] sum_l (pi_jl - 1) ln c_l
    std::vector<double> normalizer_term; // [member][class] ln Gamma(sum pi_j) - sum ln Gamma(pi_jl)
    std::vector<double> log_weight;      // [class] sum of the above
    std::vector<double> posterior;       // [class]
};

inline Explanation explain(const PredictionSet& preds, const SdsModel& model,
                           std::size_t item_index, double prob_floor = kDefaultProbFloor) {
    detail::check_shapes(preds, model);
    if (item_index >= preds.n_items()) {
        throw std::out_of_range("explain: item index " + std::to_string(item_index) +
                                " out of range");
    }
    const std::size_t K = preds.n_members();
    const std::size_t J = preds.n_classes();
    const ModelTerms terms(model);
    Explanation out{K, J, terms.log_nu, std::vector<double>(K * J), terms.log_norm,
                    std::vector<double>(J), {}};
    std::vector<double> log_c(J);
    for (std::size_t k = 0; k < K; ++k) {
        const auto c = preds.row(item_index, k);
        for (std::size_t l = 0; l < J; ++l) {
            log_c[l] = std::log(std::max(c[l], prob_floor));
        }
        for (std::size_t j = 0; j < J; ++j) {
            out.member_term[k * J + j] = detail::member_data_term(model.pi.row(k, j), log_c);
        }
    }
    for (std::size_t j = 0; j < J; ++j) {
        double w = out.prior_term[j];
        for (std::size_t k = 0; k < K; ++k) {
            w += out.member_term[k * J + j] + out.normalizer_term[k * J + j];
        }
        out.log_weight[j] = w;
    }
    out.posterior = normalize_log(out.log_weight);
    return out;
}

} // namespace softds
