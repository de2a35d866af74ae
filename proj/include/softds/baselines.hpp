#pragma once

// Majority voting, ensemble averaging and classic (hard-label) Dawid-Skene EM.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "softds/core_math.hpp"
#include "softds/data_model.hpp"
#include "softds/errors.hpp"

namespace softds {

/// One-hot at the modal label per item; ties go to the lowest class index.
inline PosteriorMatrix majority_vote(const HardLabelSet& labels,
                                     std::vector<std::string> item_ids = {}) {
    if (item_ids.empty()) {
        item_ids = default_item_ids(labels.n_items);
    }
    const std::size_t n_classes = labels.n_classes;
    PosteriorMatrix out(std::move(item_ids), n_classes);
    std::vector<std::size_t> tally(n_classes);
    for (std::size_t i = 0; i < labels.n_items; ++i) {
        std::fill(tally.begin(), tally.end(), 0);
        for (std::size_t k = 0; k < labels.n_members; ++k) {
            ++tally[labels.at(i, k)];
        }
        std::size_t best = 0;
        for (std::size_t j = 1; j < n_classes; ++j) {
            if (tally[j] > tally[best]) {
                best = j;
            }
        }
        out.row(i)[best] = 1.0;
    }
    return out;
}

/// Row i = (1/K) sum_k c_i^(k).
inline PosteriorMatrix ensemble_average(const PredictionSet& preds) {
    const std::size_t n_classes = preds.n_classes();
    const double inv_members = 1.0 / static_cast<double>(preds.n_members());
    PosteriorMatrix out(preds.item_ids(), n_classes);
    std::vector<double> acc(n_classes);
    for (std::size_t i = 0; i < preds.n_items(); ++i) {
        // sort each column before summing so the result does not depend on member order
        auto r = out.row(i);
        for (std::size_t j = 0; j < n_classes; ++j) {
            acc.assign(preds.n_members(), 0.0);
            for (std::size_t k = 0; k < preds.n_members(); ++k) {
                acc[k] = preds.row(i, k)[j];
            }
            std::sort(acc.begin(), acc.end());
            double sum = 0.0;
            for (double v : acc) {
                sum += v;
            }
            r[j] = sum * inv_members;
        }
    }
    return out;
}

/// Row-stochastic per-member confusion matrices and class prior from hard-label DS.
struct DsModel {
    std::size_t n_members = 0;
    std::size_t n_classes = 0;
    std::vector<double> confusion; // [member][true][predicted], rows sum to 1
    ClassPrior prior;

    double at(std::size_t k, std::size_t j, std::size_t l) const {
        return confusion[(k * n_classes + j) * n_classes + l];
    }
};

namespace detail {

inline void ds_m_step(const HardLabelSet& labels, const PosteriorMatrix& post, double smoothing,
                      DsModel& model) {
    const std::size_t J = labels.n_classes;
    const std::size_t K = labels.n_members;
    std::fill(model.confusion.begin(), model.confusion.end(), 0.0);
    std::vector<double> class_mass(J, 0.0);
    for (std::size_t i = 0; i < labels.n_items; ++i) {
        const auto p = post.row(i);
        for (std::size_t j = 0; j < J; ++j) {
            class_mass[j] += p[j];
        }
        for (std::size_t k = 0; k < K; ++k) {
            const ClassIndex l = labels.at(i, k);
            for (std::size_t j = 0; j < J; ++j) {
                model.confusion[(k * J + j) * J + l] += p[j];
            }
        }
    }
    for (std::size_t r = 0; r < K * J; ++r) {
        double total = 0.0;
        for (std::size_t l = 0; l < J; ++l) {
            total += model.confusion[r * J + l];
        }
        const double denom = total + static_cast<double>(J) * smoothing;
        for (std::size_t l = 0; l < J; ++l) {
            double& v = model.confusion[r * J + l];
            // rows never observed with zero smoothing fall back to uniform
            v = denom > 0.0 ? (v + smoothing) / denom : 1.0 / static_cast<double>(J);
        }
    }
    double mass_total = 0.0;
    for (double m : class_mass) {
        mass_total += m;
    }
    for (double& m : class_mass) {
        m /= mass_total;
    }
    model.prior = ClassPrior(std::move(class_mass), 1e-9);
}

inline void ds_e_step(const HardLabelSet& labels, const DsModel& model, PosteriorMatrix& post) {
    const std::size_t J = labels.n_classes;
    std::vector<double> w(J);
    std::vector<double> per_member(labels.n_members);
    for (std::size_t i = 0; i < labels.n_items; ++i) {
        for (std::size_t j = 0; j < J; ++j) {
            for (std::size_t k = 0; k < labels.n_members; ++k) {
                const double theta = model.at(k, j, labels.at(i, k));
                per_member[k] = theta > 0.0 ? std::log(theta) : -std::numeric_limits<double>::infinity();
            }
            // sorted so that member order cannot change the rounding
            std::sort(per_member.begin(), per_member.end());
            double s = model.prior[j] > 0.0 ? std::log(model.prior[j])
                                            : -std::numeric_limits<double>::infinity();
            for (double v : per_member) {
                s += v;
            }
            w[j] = s;
        }
        const double top = *std::max_element(w.begin(), w.end());
        if (!std::isfinite(top)) {
            continue; // every class impossible under zero smoothing; keep the previous row
        }
        const auto p = normalize_log(w);
        std::copy(p.begin(), p.end(), post.row(i).begin());
    }
}

} // namespace detail

/// Classic Dawid-Skene EM on hard labels. Posteriors start at per-item label
/// frequencies; each iteration is one M-step followed by one E-step.
inline std::pair<DsModel, PosteriorMatrix> ds_em(const HardLabelSet& labels,
                                                 std::size_t n_iterations, double smoothing = 0.01,
                                                 std::vector<std::string> item_ids = {}) {
    if (n_iterations < 1) {
        throw ValidationError("ds_em: n_iterations must be >= 1");
    }
    if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) {
        throw ValidationError("ds_em: smoothing must be finite and >= 0");
    }
    if (item_ids.empty()) {
        item_ids = default_item_ids(labels.n_items);
    }
    const std::size_t J = labels.n_classes;
    PosteriorMatrix post(std::move(item_ids), J);
    const double vote = 1.0 / static_cast<double>(labels.n_members);
    for (std::size_t i = 0; i < labels.n_items; ++i) {
        for (std::size_t k = 0; k < labels.n_members; ++k) {
            post.row(i)[labels.at(i, k)] += vote;
        }
    }

    DsModel model{labels.n_members, J, std::vector<double>(labels.n_members * J * J, 0.0), {}};
    for (std::size_t it = 0; it < n_iterations; ++it) {
        detail::ds_m_step(labels, post, smoothing, model);
        detail::ds_e_step(labels, model, post);
    }
    return {std::move(model), std::move(post)};
}

} // namespace softds
