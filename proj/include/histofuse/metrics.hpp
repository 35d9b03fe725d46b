#pragma once

#include <span>

namespace histofuse {

// Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly,
// ties counted as one half. Throws UndefinedMetricError unless both classes occur.
double auc(std::span<const double> scores, std::span<const int> labels);

// O(P·N) pair counting; reference for auc().
double auc_pairwise(std::span<const double> scores, std::span<const int> labels);

// Modal label; an exact tie goes to the positive class.
int majority_vote(std::span<const int> labels);

// Mean positive-class probability over a patient's patches.
double patient_score(std::span<const double> probabilities);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

double rmse(std::span<const double> pred, std::span<const double> target);

}  // namespace histofuse
