#pragma once

#include "gnnrec/numeric.hpp"

namespace gnnrec::kernels {

// Row-batched affine maps. X holds one input per row; W is out x in, as in
// a Parameter. The parallel versions split work so that every output
// element is summed in the same order as the serial reference, so both
// produce bit-identical results for any thread count.

namespace serial {

/// Y = X W^T + b (overwrites Y). `bias` may be null.
void affine_rows(ConstMatView X, ConstMatView W, const double* bias, MatView Y);
/// dX += dY W
void affine_rows_grad_input(ConstMatView dY, ConstMatView W, MatView dX);
/// dW += dY^T X, db += column sums of dY. `db` may be null.
void affine_rows_grad_weight(ConstMatView dY, ConstMatView X, MatView dW, double* db);

} // namespace serial

namespace parallel {

void affine_rows(ConstMatView X, ConstMatView W, const double* bias, MatView Y);
void affine_rows_grad_input(ConstMatView dY, ConstMatView W, MatView dX);
void affine_rows_grad_weight(ConstMatView dY, ConstMatView X, MatView dW, double* db);

} // namespace parallel

using parallel::affine_rows;
using parallel::affine_rows_grad_input;
using parallel::affine_rows_grad_weight;

/// Threads OpenMP will use (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

} // namespace gnnrec::kernels
