#include "gnnrec/kernels.hpp"

#include "gnnrec/error.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gnnrec::kernels {

namespace {

void check_affine(ConstMatView X, ConstMatView W, MatView Y) {
    if (X.cols != W.cols || Y.rows != X.rows || Y.cols != W.rows)
        throw DimensionError("affine_rows: X " + std::to_string(X.rows) + "x" + std::to_string(X.cols) + ", W " +
                             std::to_string(W.rows) + "x" + std::to_string(W.cols) + ", Y " +
                             std::to_string(Y.rows) + "x" + std::to_string(Y.cols));
}

void check_grad_input(ConstMatView dY, ConstMatView W, MatView dX) {
    if (dY.cols != W.rows || dX.rows != dY.rows || dX.cols != W.cols)
        throw DimensionError("affine_rows_grad_input: shape mismatch");
}

void check_grad_weight(ConstMatView dY, ConstMatView X, MatView dW) {
    if (dY.rows != X.rows || dW.rows != dY.cols || dW.cols != X.cols)
        throw DimensionError("affine_rows_grad_weight: shape mismatch");
}

// W^T packed contiguously (in x out) so the inner loop is a unit-stride axpy.
std::vector<double> transpose(ConstMatView W) {
    std::vector<double> t(W.rows * W.cols);
    for (std::size_t o = 0; o < W.rows; ++o) {
        const double* w = W.row(o);
        for (std::size_t k = 0; k < W.cols; ++k) t[k * W.rows + o] = w[k];
    }
    return t;
}

inline void affine_row(const double* x, std::size_t in, const double* wt, std::size_t out, const double* bias,
                       double* y) {
    if (bias != nullptr) {
        for (std::size_t o = 0; o < out; ++o) y[o] = bias[o];
    } else {
        for (std::size_t o = 0; o < out; ++o) y[o] = 0.0;
    }
    for (std::size_t k = 0; k < in; ++k) {
        const double xk = x[k];
        const double* w = wt + k * out;
        for (std::size_t o = 0; o < out; ++o) y[o] += xk * w[o];
    }
}

inline void grad_input_row(const double* dy, std::size_t out, ConstMatView W, double* dx) {
    for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[o];
        const double* w = W.row(o);
        for (std::size_t k = 0; k < W.cols; ++k) dx[k] += g * w[k];
    }
}

// Accumulates rows [o_begin, o_end) of dW and db over all samples in order.
inline void grad_weight_block(ConstMatView dY, ConstMatView X, MatView dW, double* db, std::size_t o_begin,
                              std::size_t o_end) {
    for (std::size_t r = 0; r < dY.rows; ++r) {
        const double* dy = dY.row(r);
        const double* x = X.row(r);
        for (std::size_t o = o_begin; o < o_end; ++o) {
            const double g = dy[o];
            if (db != nullptr) db[o] += g;
            double* w = dW.row(o);
            for (std::size_t k = 0; k < X.cols; ++k) w[k] += g * x[k];
        }
    }
}

constexpr std::size_t kParallelThreshold = 1 << 14;

} // namespace

namespace serial {

void affine_rows(ConstMatView X, ConstMatView W, const double* bias, MatView Y) {
    check_affine(X, W, Y);
    const auto wt = transpose(W);
    for (std::size_t r = 0; r < X.rows; ++r) affine_row(X.row(r), X.cols, wt.data(), W.rows, bias, Y.row(r));
}

void affine_rows_grad_input(ConstMatView dY, ConstMatView W, MatView dX) {
    check_grad_input(dY, W, dX);
    for (std::size_t r = 0; r < dY.rows; ++r) grad_input_row(dY.row(r), dY.cols, W, dX.row(r));
}

void affine_rows_grad_weight(ConstMatView dY, ConstMatView X, MatView dW, double* db) {
    check_grad_weight(dY, X, dW);
    grad_weight_block(dY, X, dW, db, 0, dW.rows);
}

} // namespace serial

namespace parallel {

void affine_rows(ConstMatView X, ConstMatView W, const double* bias, MatView Y) {
    check_affine(X, W, Y);
    const auto wt = transpose(W);
    const auto rows = static_cast<std::int64_t>(X.rows);
    const bool big = X.rows * X.cols * W.rows >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto i = static_cast<std::size_t>(r);
        affine_row(X.row(i), X.cols, wt.data(), W.rows, bias, Y.row(i));
    }
}

void affine_rows_grad_input(ConstMatView dY, ConstMatView W, MatView dX) {
    check_grad_input(dY, W, dX);
    const auto rows = static_cast<std::int64_t>(dY.rows);
    const bool big = dY.rows * W.rows * W.cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
    for (std::int64_t r = 0; r < rows; ++r) {
        const auto i = static_cast<std::size_t>(r);
        grad_input_row(dY.row(i), dY.cols, W, dX.row(i));
    }
}

void affine_rows_grad_weight(ConstMatView dY, ConstMatView X, MatView dW, double* db) {
    check_grad_weight(dY, X, dW);
    const bool big = dY.rows * dW.rows * dW.cols >= kParallelThreshold;
    // Each thread owns a contiguous band of output rows of dW, so no two
    // threads write the same element and per-element order stays r-ascending.
#pragma omp parallel if (big)
    {
        std::size_t begin = 0, end = dW.rows;
#ifdef _OPENMP
        const auto nt = static_cast<std::size_t>(omp_get_num_threads());
        const auto t = static_cast<std::size_t>(omp_get_thread_num());
        const std::size_t chunk = (dW.rows + nt - 1) / nt;
        begin = std::min(dW.rows, t * chunk);
        end = std::min(dW.rows, begin + chunk);
#endif
        if (begin < end) grad_weight_block(dY, X, dW, db, begin, end);
    }
}

} // namespace parallel

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

} // namespace gnnrec::kernels
