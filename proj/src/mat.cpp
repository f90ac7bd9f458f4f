#include "usat/mat.hpp"

#include <cmath>

#include "usat/errors.hpp"

namespace usat {

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
    Mat out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double s = arow[k];
            if (s == 0.0) continue;
            const double* brow = b.row_ptr(k);
            for (int j = 0; j < b.cols; ++j) orow[j] += s * brow[j];
        }
    }
    return out;
}

void matmul_nt_acc(Mat& acc, const Mat& g, const Mat& b) {
    // acc(i,k) += sum_j g(i,j) * b(k,j); done against b^T so the inner
    // loop accumulates contiguously instead of reducing
    const Mat bt = transpose(b);
    for (int i = 0; i < g.rows; ++i) {
        const double* grow = g.row_ptr(i);
        double* arow = acc.row_ptr(i);
        for (int j = 0; j < g.cols; ++j) {
            const double s = grow[j];
            if (s == 0.0) continue;
            const double* btrow = bt.row_ptr(j);
            for (int k = 0; k < b.rows; ++k) arow[k] += s * btrow[k];
        }
    }
}

void matmul_tn_acc(Mat& acc, const Mat& a, const Mat& g) {
    // acc(k,j) += sum_i a(i,k) * g(i,j)
    for (int i = 0; i < a.rows; ++i) {
        const double* arow = a.row_ptr(i);
        const double* grow = g.row_ptr(i);
        for (int k = 0; k < a.cols; ++k) {
            const double s = arow[k];
            if (s == 0.0) continue;
            double* orow = acc.row_ptr(k);
            for (int j = 0; j < g.cols; ++j) orow[j] += s * grow[j];
        }
    }
}

Mat transpose(const Mat& a) {
    Mat out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

bool all_finite(const Mat& a) {
    for (double v : a.d)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace usat
