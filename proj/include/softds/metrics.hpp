#pragma once

// Accuracy, calibration (ECE), Brier score, NLL, AUROC, OOD scores and
// empirical confusion matrices against ground truth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "softds/core_math.hpp"
#include "softds/data_model.hpp"
#include "softds/errors.hpp"

namespace softds {

inline constexpr std::size_t kDefaultEceBins = 300;

struct MetricReport {
    double accuracy = 0.0;
    double ece = 0.0;
    double brier = 0.0;
    double nll = 0.0;
    std::size_t n_items = 0;
};

namespace detail {

inline void check_truth(const PosteriorMatrix& post, const GroundTruth& truth) {
    if (post.n_items() != truth.size()) {
        throw ValidationError("posterior has " + std::to_string(post.n_items()) +
                              " items but ground truth has " + std::to_string(truth.size()));
    }
    if (post.n_items() == 0) {
        throw ValidationError("metrics need at least one item");
    }
    for (ClassIndex t : truth.labels) {
        if (t >= post.n_classes()) {
            throw ValidationError("ground-truth label " + std::to_string(t) + " out of range");
        }
    }
}

} // namespace detail

inline double accuracy(const PosteriorMatrix& post, const GroundTruth& truth) {
    detail::check_truth(post, truth);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < post.n_items(); ++i) {
        hits += argmax(post.row(i)) == truth.labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(post.n_items());
}

/// Bin of a confidence value: bin b covers (b/n, (b+1)/n], and 0 goes to bin 0.
inline std::size_t confidence_bin(double confidence, std::size_t n_bins) {
    const double n = static_cast<double>(n_bins);
    double raw = std::ceil(confidence * n) - 1.0;
    std::size_t b = raw <= 0.0 ? 0 : std::min(n_bins - 1, static_cast<std::size_t>(raw));
    // confidence * n may round across an edge; settle against the exact edges
    while (b > 0 && confidence <= static_cast<double>(b) / n) {
        --b;
    }
    while (b + 1 < n_bins && confidence > static_cast<double>(b + 1) / n) {
        ++b;
    }
    return b;
}

struct ReliabilityBin {
    double mean_confidence = 0.0;
    double accuracy = 0.0;
    std::size_t count = 0;
};

/// Per-bin mean confidence, accuracy and count over equal-width bins.
inline std::vector<ReliabilityBin> reliability_bins(const PosteriorMatrix& post,
                                                    const GroundTruth& truth,
                                                    std::size_t n_bins = kDefaultEceBins) {
    detail::check_truth(post, truth);
    if (n_bins < 1) {
        throw ValidationError("ece: n_bins must be >= 1");
    }
    std::vector<double> conf_sum(n_bins, 0.0);
    std::vector<double> hit_sum(n_bins, 0.0);
    std::vector<ReliabilityBin> bins(n_bins);
    for (std::size_t i = 0; i < post.n_items(); ++i) {
        const auto r = post.row(i);
        const ClassIndex predicted = argmax(r);
        const double confidence = r[predicted];
        const std::size_t b = confidence_bin(confidence, n_bins);
        conf_sum[b] += confidence;
        hit_sum[b] += predicted == truth.labels[i] ? 1.0 : 0.0;
        ++bins[b].count;
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
        if (bins[b].count > 0) {
            const double c = static_cast<double>(bins[b].count);
            bins[b].mean_confidence = conf_sum[b] / c;
            bins[b].accuracy = hit_sum[b] / c;
        }
    }
    return bins;
}

/// sum_b (|B_b| / N) |acc_b - conf_b|
inline double ece(const PosteriorMatrix& post, const GroundTruth& truth,
                  std::size_t n_bins = kDefaultEceBins) {
    const auto bins = reliability_bins(post, truth, n_bins);
    const double n = static_cast<double>(post.n_items());
    double total = 0.0;
    for (const auto& bin : bins) {
        if (bin.count > 0) {
            total += static_cast<double>(bin.count) / n * std::abs(bin.accuracy - bin.mean_confidence);
        }
    }
    return total;
}

/// Multiclass Brier score, summed over classes and averaged over items.
inline double brier(const PosteriorMatrix& post, const GroundTruth& truth) {
    detail::check_truth(post, truth);
    double total = 0.0;
    for (std::size_t i = 0; i < post.n_items(); ++i) {
        const auto r = post.row(i);
        double s = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) {
            const double d = r[j] - (j == truth.labels[i] ? 1.0 : 0.0);
            s += d * d;
        }
        total += s;
    }
    return total / static_cast<double>(post.n_items());
}

inline double nll(const PosteriorMatrix& post, const GroundTruth& truth,
                  double prob_floor = kDefaultProbFloor) {
    detail::check_truth(post, truth);
    double total = 0.0;
    for (std::size_t i = 0; i < post.n_items(); ++i) {
        total -= std::log(std::max(post.row(i)[truth.labels[i]], prob_floor));
    }
    return total / static_cast<double>(post.n_items());
}

inline MetricReport evaluate(const PosteriorMatrix& post, const GroundTruth& truth,
                             std::size_t n_bins = kDefaultEceBins) {
    return {accuracy(post, truth), ece(post, truth, n_bins), brier(post, truth), nll(post, truth),
            post.n_items()};
}

/// P(out > in) + 0.5 P(out == in) via midranks; higher scores mean "more OOD".
inline double auroc(std::span<const double> scores_in, std::span<const double> scores_out) {
    if (scores_in.empty() || scores_out.empty()) {
        throw ValidationError("auroc: both score lists must be non-empty");
    }
    struct Scored {
        double score;
        bool out;
    };
    std::vector<Scored> all;
    all.reserve(scores_in.size() + scores_out.size());
    for (double s : scores_in) {
        all.push_back({s, false});
    }
    for (double s : scores_out) {
        all.push_back({s, true});
    }
    std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });

    // twice the rank sum of the OOD group, kept integral so ties stay exact
    std::size_t twice_rank_sum = 0;
    for (std::size_t lo = 0; lo < all.size();) {
        std::size_t hi = lo;
        while (hi < all.size() && all[hi].score == all[lo].score) {
            ++hi;
        }
        const std::size_t twice_midrank = (lo + 1) + hi; // ranks lo+1 .. hi
        for (std::size_t p = lo; p < hi; ++p) {
            if (all[p].out) {
                twice_rank_sum += twice_midrank;
            }
        }
        lo = hi;
    }
    const std::size_t n_out = scores_out.size();
    const std::size_t twice_u = twice_rank_sum - n_out * (n_out + 1);
    return static_cast<double>(twice_u) /
           (2.0 * static_cast<double>(scores_in.size()) * static_cast<double>(n_out));
}

enum class OodScore { max_prob, entropy };

/// Uncertainty of one posterior row; larger means more uncertain.
inline double ood_score(std::span<const double> row, OodScore method = OodScore::max_prob) {
    if (method == OodScore::max_prob) {
        return 1.0 - *std::max_element(row.begin(), row.end());
    }
    double h = 0.0;
    for (double p : row) {
        if (p > 0.0) {
            h -= p * std::log(p);
        }
    }
    return h;
}

inline std::vector<double> ood_scores(const PosteriorMatrix& post, OodScore method = OodScore::max_prob) {
    std::vector<double> out(post.n_items());
    for (std::size_t i = 0; i < post.n_items(); ++i) {
        out[i] = ood_score(post.row(i), method);
    }
    return out;
}

/// Row-stochastic P(predicted l | true j). Rows for classes absent from the
/// truth are uniform and listed in `empty_rows`.
struct EmpiricalConfusion {
    std::size_t n_classes = 0;
    std::vector<double> matrix; // [true][predicted]
    std::vector<ClassIndex> empty_rows;
};

namespace detail {

inline EmpiricalConfusion normalize_tally(std::size_t J, std::vector<double> tally) {
    EmpiricalConfusion out{J, std::move(tally), {}};
    for (std::size_t j = 0; j < J; ++j) {
        double total = 0.0;
        for (std::size_t l = 0; l < J; ++l) {
            total += out.matrix[j * J + l];
        }
        for (std::size_t l = 0; l < J; ++l) {
            double& v = out.matrix[j * J + l];
            v = total > 0.0 ? v / total : 1.0 / static_cast<double>(J);
        }
        if (!(total > 0.0)) {
            out.empty_rows.push_back(static_cast<ClassIndex>(j));
        }
    }
    return out;
}

} // namespace detail

/// One confusion matrix per member from hardened predictions.
inline std::vector<EmpiricalConfusion> true_confusion(const PredictionSet& preds,
                                                      const GroundTruth& truth) {
    if (preds.n_items() != truth.size()) {
        throw ValidationError("true_confusion: item counts differ");
    }
    const std::size_t J = preds.n_classes();
    std::vector<EmpiricalConfusion> out;
    for (std::size_t k = 0; k < preds.n_members(); ++k) {
        std::vector<double> tally(J * J, 0.0);
        for (std::size_t i = 0; i < preds.n_items(); ++i) {
            if (truth.labels[i] >= J) {
                throw ValidationError("true_confusion: label out of range");
            }
            tally[truth.labels[i] * J + argmax(preds.row(i, k))] += 1.0;
        }
        out.push_back(detail::normalize_tally(J, std::move(tally)));
    }
    return out;
}

/// Confusion matrix of an aggregated posterior.
inline EmpiricalConfusion true_confusion(const PosteriorMatrix& post, const GroundTruth& truth) {
    detail::check_truth(post, truth);
    const std::size_t J = post.n_classes();
    std::vector<double> tally(J * J, 0.0);
    for (std::size_t i = 0; i < post.n_items(); ++i) {
        tally[truth.labels[i] * J + argmax(post.row(i))] += 1.0;
    }
    return detail::normalize_tally(J, std::move(tally));
}

} // namespace softds
