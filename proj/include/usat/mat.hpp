#pragma once

#include <cstddef>
#include <vector>

namespace usat {

/// Dense row-major matrix of doubles. The only numeric container used in
/// the project; vectors are 1xN or Nx1.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), d(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return d.data() + static_cast<size_t>(r) * cols; }

    size_t size() const { return d.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
    void zero() { std::fill(d.begin(), d.end(), 0.0); }
};

/// out = a * b
Mat matmul(const Mat& a, const Mat& b);

/// acc += g * b^T  (shapes: g n x m, b k x m, acc n x k)
void matmul_nt_acc(Mat& acc, const Mat& g, const Mat& b);

/// acc += a^T * g  (shapes: a n x k, g n x m, acc k x m)
void matmul_tn_acc(Mat& acc, const Mat& a, const Mat& g);

Mat transpose(const Mat& a);

bool all_finite(const Mat& a);

} // namespace usat
