#include "histofuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "histofuse/errors.hpp"

namespace histofuse {

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw IndexError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(y);
    }
    if (pos == 0 || pos == labels.size()) throw UndefinedMetricError("AUC needs both classes");
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
    check_binary(scores, labels);
    // Rank-sum form with mid-ranks for ties.
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j + 1);  // 1-based mean rank of [i, j)
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                rank_sum += mid;
                ++pos;
            }
        }
        i = j;
    }
    const double np = static_cast<double>(pos);
    const double nn = static_cast<double>(n - pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
    check_binary(scores, labels);
    double credit = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) {
                credit += 1.0;
            } else if (scores[i] == scores[j]) {
                credit += 0.5;
            }
        }
    }
    return credit / pairs;
}

int majority_vote(std::span<const int> labels) {
    if (labels.empty()) throw ContractError("majority vote over no patches");
    std::size_t pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw IndexError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(y);
    }
    return 2 * pos >= labels.size() ? 1 : 0;
}

double patient_score(std::span<const double> probabilities) {
    if (probabilities.empty()) throw ContractError("patient score over no patches");
    return std::accumulate(probabilities.begin(), probabilities.end(), 0.0) /
           static_cast<double>(probabilities.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
    if (labels.empty()) throw UndefinedMetricError("accuracy over no samples");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double rmse(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) throw DimensionError("rmse: length mismatch");
    if (pred.empty()) throw DimensionError("rmse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
    return std::sqrt(s / static_cast<double>(pred.size()));
}

}  // namespace histofuse
