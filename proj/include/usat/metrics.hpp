#pragma once

#include <vector>

#include "usat/mat.hpp"

namespace usat {

/// Scores and binary labels for a batch of samples; labels hold one
/// column per class (a single-label task uses one-hot rows).
struct EvalBatch {
    Mat scores; // [n_samples, n_classes]
    Mat labels; // same shape, entries in {0, 1}
};

/// Step-interpolated average precision: sort by descending score (ties
/// broken by stable index order), AP = sum over positive ranks of
/// (R_n - R_{n-1}) * P_n. Throws NoPositivesError without positives.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

/// AP over the flattened (sample, class) pairs.
double micro_ap(const EvalBatch& batch);

/// Mean of per-class APs over classes with at least one positive.
double macro_ap(const EvalBatch& batch);

/// Fraction of samples whose argmax score hits a positive label.
double accuracy(const EvalBatch& batch);

} // namespace usat
