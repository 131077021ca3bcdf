#pragma once

#include "gnnrec/rng.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace gnnrec {

using Vector = std::vector<double>;

/// Strided read-only view of a row-major block.
struct ConstMatView {
    const double* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t stride = 0;

    const double* row(std::size_t r) const { return data + r * stride; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
    ConstMatView columns(std::size_t first, std::size_t count) const { return {data + first, rows, count, stride}; }
};

struct MatView {
    double* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t stride = 0;

    double* row(std::size_t r) const { return data + r * stride; }
    double& operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
    MatView columns(std::size_t first, std::size_t count) const { return {data + first, rows, count, stride}; }
    operator ConstMatView() const { return {data, rows, cols, stride}; }
};

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    MatView view() { return {data_.data(), rows_, cols_, cols_}; }
    ConstMatView view() const { return {data_.data(), rows_, cols_, cols_}; }

    void resize(std::size_t rows, std::size_t cols) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(rows * cols, 0.0);
    }
    void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// A trainable tensor with its gradient accumulator. Vectors (biases) are
/// stored as 1 x n.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string name, std::size_t rows, std::size_t cols)
        : name(std::move(name)), value(rows, cols), grad(rows, cols) {}

    std::size_t size() const { return value.size(); }
    void zero_grad() { grad.fill(0.0); }
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)) with fan_in = cols and
/// fan_out = rows.
double xavier_bound(std::size_t rows, std::size_t cols);
void xavier_uniform(Matrix& m, Rng& rng);

// Forward ops on single vectors.

/// W x + b. W is out x in; b has `out` entries (or is empty for no bias).
Vector affine(const Matrix& W, std::span<const double> x, std::span<const double> b);
Vector relu(std::span<const double> x);
Vector leaky_relu(std::span<const double> x, double slope);
Vector sigmoid(std::span<const double> x);
double sigmoid(double z);
/// max-subtracted softmax; throws DegenerateError on empty input.
Vector softmax(std::span<const double> scores);
Vector concat(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

inline constexpr double kLeakySlope = 0.01;

// Backward rules. Each accumulates (+=) into the gradients it is given.

void affine_backward(const Matrix& W, std::span<const double> x, std::span<const double> dy, Matrix* dW,
                     std::span<double> db, std::span<double> dx);
/// y = relu(x): dx += dy where x > 0.
void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);
void leaky_relu_backward(std::span<const double> x, double slope, std::span<const double> dy, std::span<double> dx);
/// y = sigmoid(x): dx += dy * y * (1 - y), given the forward output y.
void sigmoid_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx);
/// y = softmax(s): ds += y * (dy - <y, dy>).
void softmax_backward(std::span<const double> y, std::span<const double> dy, std::span<double> ds);

double squared_norm(std::span<const double> x);

/// A scalar objective over a set of parameters. Called with
/// `accumulate = true` it must also add its analytic gradient into each
/// parameter's `grad`.
using Objective = std::function<double(bool accumulate)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates = 0;
};

/// Central-difference gradient check. Per coordinate the error is
/// |a - n| / max(|a|, |n|, 1e-8); the maximum is reported. Leaves parameter
/// values untouched and `grad` holding the analytic gradient.
/// Throws ConfigError for epsilon outside [1e-7, 1e-4] and EvaluationError
/// when the objective is not finite.
GradCheckResult grad_check(const Objective& f, std::span<Parameter* const> params, double epsilon = 1e-5);

/// Named tensors: `tensor <name> <rows> <cols>` line followed by
/// rows*cols little-endian float64 values and a newline.
void write_tensor(std::ostream& out, const std::string& name, const Matrix& m);
/// Reads one tensor; returns false at a clean end of stream.
bool read_tensor(std::istream& in, std::string& name, Matrix& m);

} // namespace gnnrec
