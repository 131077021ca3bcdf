#include "gnnrec/numeric.hpp"

#include "gnnrec/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace gnnrec {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) throw DimensionError("matrix value count does not match shape");
}

double xavier_bound(std::size_t rows, std::size_t cols) {
    return std::sqrt(6.0 / static_cast<double>(rows + cols));
}

void xavier_uniform(Matrix& m, Rng& rng) {
    const double bound = xavier_bound(m.rows(), m.cols());
    for (auto& v : m.flat()) v = (2.0 * uniform_real(rng) - 1.0) * bound;
}

Vector affine(const Matrix& W, std::span<const double> x, std::span<const double> b) {
    if (W.cols() != x.size() || (!b.empty() && b.size() != W.rows()))
        throw DimensionError("affine: W is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) +
                             ", x has " + std::to_string(x.size()) + ", b has " + std::to_string(b.size()));
    Vector y(W.rows());
    for (std::size_t o = 0; o < W.rows(); ++o) {
        double acc = b.empty() ? 0.0 : b[o];
        const auto w = W.row(o);
        for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
        y[o] = acc;
    }
    return y;
}

Vector relu(std::span<const double> x) {
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Vector leaky_relu(std::span<const double> x, double slope) {
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
    return y;
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Vector sigmoid(std::span<const double> x) {
    Vector y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
    return y;
}

Vector softmax(std::span<const double> scores) {
    if (scores.empty()) throw DegenerateError("softmax of an empty vector");
    const double mx = *std::max_element(scores.begin(), scores.end());
    Vector y(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        y[i] = std::exp(scores[i] - mx);
        total += y[i];
    }
    for (auto& v : y) v /= total;
    return y;
}

Vector concat(std::span<const double> a, std::span<const double> b) {
    Vector y;
    y.reserve(a.size() + b.size());
    y.insert(y.end(), a.begin(), a.end());
    y.insert(y.end(), b.begin(), b.end());
    return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void affine_backward(const Matrix& W, std::span<const double> x, std::span<const double> dy, Matrix* dW,
                     std::span<double> db, std::span<double> dx) {
    for (std::size_t o = 0; o < W.rows(); ++o) {
        const double g = dy[o];
        if (!db.empty()) db[o] += g;
        if (dW != nullptr) {
            auto row = dW->row(o);
            for (std::size_t k = 0; k < x.size(); ++k) row[k] += g * x[k];
        }
        if (!dx.empty()) {
            const auto w = W.row(o);
            for (std::size_t k = 0; k < x.size(); ++k) dx[k] += g * w[k];
        }
    }
}

void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) dx[i] += dy[i];
    }
}

void leaky_relu_backward(std::span<const double> x, double slope, std::span<const double> dy, std::span<double> dx) {
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += x[i] > 0.0 ? dy[i] : slope * dy[i];
}

void sigmoid_backward(std::span<const double> y, std::span<const double> dy, std::span<double> dx) {
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
}

void softmax_backward(std::span<const double> y, std::span<const double> dy, std::span<double> ds) {
    double inner = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) inner += y[i] * dy[i];
    for (std::size_t i = 0; i < y.size(); ++i) ds[i] += y[i] * (dy[i] - inner);
}

double squared_norm(std::span<const double> x) {
    double acc = 0.0;
    for (double v : x) acc += v * v;
    return acc;
}

GradCheckResult grad_check(const Objective& f, std::span<Parameter* const> params, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-4)) throw ConfigError("grad_check epsilon must lie in [1e-7, 1e-4]");
    for (auto* p : params) p->zero_grad();
    const double base = f(true);
    if (!std::isfinite(base)) throw EvaluationError("grad_check: objective is not finite");

    GradCheckResult result;
    for (auto* p : params) {
        auto values = p->value.flat();
        const auto grads = p->grad.flat();
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + epsilon;
            const double plus = f(false);
            values[k] = saved - epsilon;
            const double minus = f(false);
            values[k] = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus))
                throw EvaluationError("grad_check: objective is not finite near " + p->name);
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double analytic = grads[k];
            const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double err = std::abs(analytic - numeric) / scale;
            ++result.coordinates;
            if (err > result.max_rel_error || result.coordinates == 1) {
                result.max_rel_error = err;
                result.worst_parameter = p->name;
                result.worst_index = k;
                result.analytic = analytic;
                result.numeric = numeric;
            }
        }
    }
    return result;
}

namespace {

static_assert(sizeof(double) == sizeof(std::uint64_t));

void put_le(std::ostream& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>(bits & 0xffu);
        bits >>= 8;
    }
    out.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | bytes[i];
    return std::bit_cast<double>(bits);
}

} // namespace

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
    if (name.find_first_of(" \t\n") != std::string::npos) throw IoError("tensor name contains whitespace: " + name);
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (double v : m.flat()) put_le(out, v);
    out << '\n';
    if (!out) throw IoError("failed to write tensor " + name);
}

bool read_tensor(std::istream& in, std::string& name, Matrix& m) {
    std::string line;
    if (!std::getline(in, line)) return false;
    if (line.empty()) return false;
    std::istringstream header(line);
    std::string tag;
    std::size_t rows = 0, cols = 0;
    if (!(header >> tag >> name >> rows >> cols) || tag != "tensor") throw ParseError("bad tensor header: " + line);
    std::vector<unsigned char> raw(rows * cols * 8);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ParseError("truncated tensor " + name);
    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_le(raw.data() + 8 * i);
    if (in.get() != '\n') throw ParseError("missing terminator after tensor " + name);
    m = Matrix(rows, cols, std::move(values));
    return true;
}

} // namespace gnnrec
