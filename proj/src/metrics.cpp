#include "usat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "usat/errors.hpp"

namespace usat {

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("average_precision: size mismatch");
    const int n = static_cast<int>(scores.size());
    int positives = 0;
    for (int l : labels) positives += (l != 0);
    if (positives == 0) throw NoPositivesError("average_precision: no positive labels");
    for (double s : scores)
        if (!std::isfinite(s)) throw ShapeError("average_precision: non-finite score");

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](int a, int b) { return scores[static_cast<size_t>(a)] >
                                                      scores[static_cast<size_t>(b)]; });
    double ap = 0.0;
    int hits = 0;
    for (int rank = 1; rank <= n; ++rank) {
        if (labels[static_cast<size_t>(order[static_cast<size_t>(rank - 1)])] != 0) {
            ++hits;
            const double precision = static_cast<double>(hits) / rank;
            ap += precision / positives; // (R_n - R_{n-1}) = 1/positives at each hit
        }
    }
    return ap;
}

double micro_ap(const EvalBatch& batch) {
    std::vector<double> s;
    std::vector<int> l;
    s.reserve(batch.scores.size());
    l.reserve(batch.labels.size());
    for (size_t i = 0; i < batch.scores.d.size(); ++i) {
        s.push_back(batch.scores.d[i]);
        l.push_back(batch.labels.d[i] > 0.5 ? 1 : 0);
    }
    return average_precision(s, l);
}

double macro_ap(const EvalBatch& batch) {
    const int classes = batch.scores.cols;
    double sum = 0.0;
    int counted = 0;
    for (int c = 0; c < classes; ++c) {
        std::vector<double> s;
        std::vector<int> l;
        int pos = 0;
        for (int i = 0; i < batch.scores.rows; ++i) {
            s.push_back(batch.scores.at(i, c));
            const int li = batch.labels.at(i, c) > 0.5 ? 1 : 0;
            l.push_back(li);
            pos += li;
        }
        if (pos == 0) continue; // class absent from this split
        sum += average_precision(s, l);
        ++counted;
    }
    if (counted == 0) throw NoPositivesError("macro_ap: no class has positives");
    return sum / counted;
}

double accuracy(const EvalBatch& batch) {
    if (batch.scores.rows == 0) throw ShapeError("accuracy: empty batch");
    int correct = 0;
    for (int i = 0; i < batch.scores.rows; ++i) {
        const double* row = batch.scores.row_ptr(i);
        int arg = 0;
        for (int c = 1; c < batch.scores.cols; ++c)
            if (row[c] > row[arg]) arg = c;
        if (batch.labels.at(i, arg) > 0.5) ++correct;
    }
    return static_cast<double>(correct) / batch.scores.rows;
}

} // namespace usat
