#pragma once

// In-memory containers for member predictions, labels, confusion parameters,
// class priors and posteriors, plus the EM configuration.
//
// Layouts are flat and row-major:
//   PredictionSet   [item][member][class]
//   ConfusionTensor [member][true class][predicted class]
//   PosteriorMatrix [item][class]

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "softds/core_math.hpp"
#include "softds/errors.hpp"

namespace softds {

inline constexpr double kDefaultPiFloor = 1e-6;
/// Largest accepted deviation of a loaded probability row from sum 1.
inline constexpr double kLoadSumTolerance = 1e-3;

using ClassIndex = std::uint32_t;

inline std::vector<std::string> default_item_ids(std::size_t n) {
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back(std::to_string(i));
    }
    return ids;
}

/// Index of the largest entry; ties go to the lowest index.
inline ClassIndex argmax(std::span<const double> row) {
    ClassIndex best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) {
            best = static_cast<ClassIndex>(j);
        }
    }
    return best;
}

/// Floors every entry at `prob_floor` and renormalizes in place.
inline void floor_and_renormalize(std::span<double> row, double prob_floor) {
    double sum = 0.0;
    for (double& v : row) {
        v = std::max(v, prob_floor);
        sum += v;
    }
    for (double& v : row) {
        v /= sum;
    }
}

/// Checks a raw probability row: finite, nonnegative, sum within `tolerance` of 1.
/// Returns an empty string when valid, otherwise a description of the problem.
inline std::string probability_row_problem(std::span<const double> row, double tolerance) {
    double sum = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (!std::isfinite(row[j])) {
            return "non-finite probability in column p_" + std::to_string(j);
        }
        if (row[j] < 0.0) {
            return "negative probability in column p_" + std::to_string(j);
        }
        sum += row[j];
    }
    if (std::abs(sum - 1.0) > tolerance) {
        return "row sums to " + std::to_string(sum) + " instead of 1";
    }
    return {};
}

/// Soft outputs of K members on N items over J classes. Rows are floored at
/// `prob_floor` and renormalized on construction, so logs are always finite.
class PredictionSet {
public:
    PredictionSet(std::vector<std::string> item_ids, std::size_t n_members, std::size_t n_classes,
                  std::vector<double> probs, double prob_floor = kDefaultProbFloor)
        : item_ids_(std::move(item_ids)),
          n_members_(n_members),
          n_classes_(n_classes),
          probs_(std::move(probs)) {
        if (item_ids_.empty() || n_members_ == 0 || n_classes_ < 2) {
            throw ValidationError("PredictionSet requires N >= 1, K >= 1, J >= 2");
        }
        if (probs_.size() != item_ids_.size() * n_members_ * n_classes_) {
            throw ValidationError("PredictionSet: probability array has wrong size");
        }
        for (std::size_t i = 0; i < n_items(); ++i) {
            for (std::size_t k = 0; k < n_members_; ++k) {
                auto r = mutable_row(i, k);
                if (auto problem = probability_row_problem(r, kLoadSumTolerance); !problem.empty()) {
                    throw ValidationError("PredictionSet item " + item_ids_[i] + " member " +
                                          std::to_string(k) + ": " + problem);
                }
                floor_and_renormalize(r, prob_floor);
            }
        }
    }

    std::size_t n_items() const noexcept { return item_ids_.size(); }
    std::size_t n_members() const noexcept { return n_members_; }
    std::size_t n_classes() const noexcept { return n_classes_; }
    const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
    std::span<const double> data() const noexcept { return probs_; }

    std::span<const double> row(std::size_t item, std::size_t member) const {
        return {probs_.data() + (item * n_members_ + member) * n_classes_, n_classes_};
    }
    /// All K rows of one item, member-major.
    std::span<const double> item(std::size_t item) const {
        return {probs_.data() + item * n_members_ * n_classes_, n_members_ * n_classes_};
    }

private:
    std::span<double> mutable_row(std::size_t item, std::size_t member) {
        return {probs_.data() + (item * n_members_ + member) * n_classes_, n_classes_};
    }

    std::vector<std::string> item_ids_;
    std::size_t n_members_;
    std::size_t n_classes_;
    std::vector<double> probs_;
};

/// Argmax labels of K members on N items.
struct HardLabelSet {
    std::size_t n_items = 0;
    std::size_t n_members = 0;
    std::size_t n_classes = 0;
    std::vector<ClassIndex> labels; // [item][member]

    ClassIndex at(std::size_t item, std::size_t member) const {
        return labels[item * n_members + member];
    }
};

inline HardLabelSet harden(const PredictionSet& preds) {
    HardLabelSet out{preds.n_items(), preds.n_members(), preds.n_classes(), {}};
    out.labels.reserve(preds.n_items() * preds.n_members());
    for (std::size_t i = 0; i < preds.n_items(); ++i) {
        for (std::size_t k = 0; k < preds.n_members(); ++k) {
            out.labels.push_back(argmax(preds.row(i, k)));
        }
    }
    return out;
}

/// Per-member Dirichlet parameters: row (k, j) parameterizes member k's
/// output distribution when the true class is j. Entries are positive but not
/// normalized.
class ConfusionTensor {
public:
    ConfusionTensor() = default;
    ConfusionTensor(std::size_t n_members, std::size_t n_classes, std::vector<double> values)
        : n_members_(n_members), n_classes_(n_classes), values_(std::move(values)) {
        if (values_.size() != n_members_ * n_classes_ * n_classes_) {
            throw ValidationError("ConfusionTensor: parameter array has wrong size");
        }
        for (double v : values_) {
            if (!std::isfinite(v) || !(v > 0.0)) {
                throw ValidationError("ConfusionTensor: entries must be positive and finite");
            }
        }
    }
    ConfusionTensor(std::size_t n_members, std::size_t n_classes, double fill)
        : ConfusionTensor(n_members, n_classes,
                          std::vector<double>(n_members * n_classes * n_classes, fill)) {}

    std::size_t n_members() const noexcept { return n_members_; }
    std::size_t n_classes() const noexcept { return n_classes_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    double at(std::size_t k, std::size_t j, std::size_t l) const {
        return values_[(k * n_classes_ + j) * n_classes_ + l];
    }
    double& at(std::size_t k, std::size_t j, std::size_t l) {
        return values_[(k * n_classes_ + j) * n_classes_ + l];
    }
    std::span<const double> row(std::size_t k, std::size_t j) const {
        return {values_.data() + (k * n_classes_ + j) * n_classes_, n_classes_};
    }

    /// Each row divided by its sum (the Dirichlet mean).
    std::vector<double> row_normalized() const {
        std::vector<double> out(values_);
        for (std::size_t r = 0; r < n_members_ * n_classes_; ++r) {
            double sum = 0.0;
            for (std::size_t l = 0; l < n_classes_; ++l) {
                sum += out[r * n_classes_ + l];
            }
            for (std::size_t l = 0; l < n_classes_; ++l) {
                out[r * n_classes_ + l] /= sum;
            }
        }
        return out;
    }

    friend bool operator==(const ConfusionTensor&, const ConfusionTensor&) = default;

private:
    std::size_t n_members_ = 0;
    std::size_t n_classes_ = 0;
    std::vector<double> values_;
};

/// Class prior nu on the simplex.
class ClassPrior {
public:
    ClassPrior() = default;
    explicit ClassPrior(std::vector<double> nu, double tolerance = 1e-9) : nu_(std::move(nu)) {
        if (nu_.size() < 2) {
            throw ValidationError("ClassPrior: need at least two classes");
        }
        double sum = 0.0;
        for (double v : nu_) {
            if (!std::isfinite(v) || v < 0.0) {
                throw ValidationError("ClassPrior: entries must be finite and nonnegative");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > tolerance) {
            throw ValidationError("ClassPrior: entries sum to " + std::to_string(sum));
        }
    }

    static ClassPrior uniform(std::size_t n_classes) {
        return ClassPrior(std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes)));
    }

    std::size_t n_classes() const noexcept { return nu_.size(); }
    std::span<const double> values() const noexcept { return nu_; }
    double operator[](std::size_t j) const { return nu_[j]; }

    friend bool operator==(const ClassPrior&, const ClassPrior&) = default;

private:
    std::vector<double> nu_;
};

/// Per-item class posteriors. Construction checks shape only; use
/// `check_rows` where the simplex invariant must hold.
class PosteriorMatrix {
public:
    PosteriorMatrix() = default;
    PosteriorMatrix(std::vector<std::string> item_ids, std::size_t n_classes,
                    std::vector<double> values)
        : item_ids_(std::move(item_ids)), n_classes_(n_classes), values_(std::move(values)) {
        if (values_.size() != item_ids_.size() * n_classes_) {
            throw ValidationError("PosteriorMatrix: value array has wrong size");
        }
    }
    /// Zero-filled matrix.
    PosteriorMatrix(std::vector<std::string> item_ids, std::size_t n_classes)
        : item_ids_(std::move(item_ids)),
          n_classes_(n_classes),
          values_(item_ids_.size() * n_classes, 0.0) {}

    std::size_t n_items() const noexcept { return item_ids_.size(); }
    std::size_t n_classes() const noexcept { return n_classes_; }
    const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
    std::span<const double> values() const noexcept { return values_; }

    std::span<const double> row(std::size_t i) const {
        return {values_.data() + i * n_classes_, n_classes_};
    }
    std::span<double> row(std::size_t i) { return {values_.data() + i * n_classes_, n_classes_}; }

    /// Throws ValidationError if any row leaves the simplex by more than `tolerance`.
    void check_rows(double tolerance = 1e-9) const {
        for (std::size_t i = 0; i < n_items(); ++i) {
            if (auto problem = probability_row_problem(row(i), tolerance); !problem.empty()) {
                throw ValidationError("posterior item " + item_ids_[i] + ": " + problem);
            }
        }
    }

    friend bool operator==(const PosteriorMatrix&, const PosteriorMatrix&) = default;

private:
    std::vector<std::string> item_ids_;
    std::size_t n_classes_ = 0;
    std::vector<double> values_;
};

/// True labels; used by metrics and reporting only, never by aggregation.
struct GroundTruth {
    std::vector<std::string> item_ids;
    std::vector<ClassIndex> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

/// Fitted soft Dawid-Skene parameters.
struct SdsModel {
    ConfusionTensor pi;
    ClassPrior nu;
};

struct AlphaStep {
    std::size_t start_iteration = 0;
    double alpha = 1e-3;

    friend bool operator==(const AlphaStep&, const AlphaStep&) = default;
};

/// EM hyperparameters.
struct SdsConfig {
    std::vector<AlphaStep> alpha_schedule{{0, 1e-3}};
    std::size_t em_iterations = 100;
    std::size_t inner_steps = 5;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double pi_floor = kDefaultPiFloor;
    double prob_floor = kDefaultProbFloor;
    double ds_init_concentration = 10.0;
    double ds_init_smoothing = 0.01;
    double q_rel_tolerance = 0.0;
    std::uint64_t seed = 0;
    /// Start every M-step with fresh optimizer moments instead of carrying them.
    bool reset_optimizer_each_m_step = false;

    void validate() const {
        if (alpha_schedule.empty() || alpha_schedule.front().start_iteration != 0) {
            throw ValidationError("alpha_schedule must start at iteration 0");
        }
        for (std::size_t s = 0; s < alpha_schedule.size(); ++s) {
            const double a = alpha_schedule[s].alpha;
            if (!(a > 0.0 && a <= 1.0)) {
                throw ValidationError("alpha_schedule values must lie in (0, 1]");
            }
            if (s > 0 && alpha_schedule[s].start_iteration <= alpha_schedule[s - 1].start_iteration) {
                throw ValidationError("alpha_schedule start iterations must increase");
            }
        }
        if (em_iterations < 1 || inner_steps < 1) {
            throw ValidationError("em_iterations and inner_steps must be >= 1");
        }
        auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
        auto nonnegative = [](double v) { return std::isfinite(v) && v >= 0.0; };
        if (!positive(learning_rate) || !nonnegative(weight_decay) || !positive(adam_epsilon)) {
            throw ValidationError("learning_rate, adam_epsilon must be > 0 and weight_decay >= 0");
        }
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
            throw ValidationError("adam betas must lie in [0, 1)");
        }
        if (!positive(pi_floor) || !positive(prob_floor) || !positive(ds_init_concentration)) {
            throw ValidationError("pi_floor, prob_floor, ds_init_concentration must be > 0");
        }
        if (!nonnegative(ds_init_smoothing) || !nonnegative(q_rel_tolerance)) {
            throw ValidationError("ds_init_smoothing and q_rel_tolerance must be >= 0");
        }
    }

    /// Polyak weight in effect at a 0-based EM iteration.
    double alpha_at(std::size_t iteration) const {
        if (alpha_schedule.empty() || alpha_schedule.front().start_iteration != 0) {
            throw ValidationError("alpha_schedule must start at iteration 0");
        }
        double alpha = alpha_schedule.front().alpha;
        for (const auto& step : alpha_schedule) {
            if (step.start_iteration <= iteration) {
                alpha = step.alpha;
            }
        }
        return alpha;
    }
};

} // namespace softds
