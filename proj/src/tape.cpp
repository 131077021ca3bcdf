#include "gnnrec/tape.hpp"

#include "gnnrec/error.hpp"

#include <string>

namespace gnnrec {

Tape::Var Tape::push(Vector value, std::function<void(Tape&, Var)> back) {
    Node node;
    node.grad.assign(value.size(), 0.0);
    node.value = std::move(value);
    node.back = std::move(back);
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

Tape::Var Tape::input(Vector value) {
    return push(std::move(value), nullptr);
}

Tape::Var Tape::row(Parameter& p, std::size_t r) {
    if (r >= p.value.rows())
        throw BoundsError(p.name + ": row " + std::to_string(r) + " out of range [0, " +
                          std::to_string(p.value.rows()) + ")");
    const auto src = p.value.row(r);
    return push(Vector(src.begin(), src.end()), [&p, r](Tape& t, Var self) {
        const auto gsrc = t.g(self);
        auto dst = p.grad.row(r);
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gsrc[k];
    });
}

Tape::Var Tape::param(Parameter& p) {
    const auto src = p.value.flat();
    return push(Vector(src.begin(), src.end()), [&p](Tape& t, Var self) {
        const auto gsrc = t.g(self);
        auto dst = p.grad.flat();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += gsrc[k];
    });
}

Tape::Var Tape::affine(Parameter& W, Var x, Parameter* b) {
    auto y = gnnrec::affine(W.value, value(x),
                            b != nullptr ? std::span<const double>(b->value.flat()) : std::span<const double>{});
    return push(std::move(y), [&W, x, b](Tape& t, Var self) {
        affine_backward(W.value, t.value(x), t.g(self), &W.grad,
                        b != nullptr ? b->grad.flat() : std::span<double>{}, t.g(x));
    });
}

Tape::Var Tape::relu(Var x) {
    return push(gnnrec::relu(value(x)),
                [x](Tape& t, Var self) { relu_backward(t.value(x), t.g(self), t.g(x)); });
}

Tape::Var Tape::leaky_relu(Var x, double slope) {
    return push(gnnrec::leaky_relu(value(x), slope),
                [x, slope](Tape& t, Var self) { leaky_relu_backward(t.value(x), slope, t.g(self), t.g(x)); });
}

Tape::Var Tape::sigmoid(Var x) {
    return push(gnnrec::sigmoid(value(x)),
                [x](Tape& t, Var self) { sigmoid_backward(t.value(self), t.g(self), t.g(x)); });
}

Tape::Var Tape::concat(Var a, Var b) {
    const std::size_t na = value(a).size();
    return push(gnnrec::concat(value(a), value(b)), [a, b, na](Tape& t, Var self) {
        const auto gs = t.g(self);
        auto ga = t.g(a);
        auto gb = t.g(b);
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += gs[k];
        for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += gs[na + k];
    });
}

Tape::Var Tape::add(Var a, Var b) {
    const auto& va = value(a);
    const auto& vb = value(b);
    if (va.size() != vb.size()) throw DimensionError("tape add: length mismatch");
    Vector y(va.size());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = va[k] + vb[k];
    return push(std::move(y), [a, b](Tape& t, Var self) {
        const auto gs = t.g(self);
        auto ga = t.g(a);
        auto gb = t.g(b);
        for (std::size_t k = 0; k < gs.size(); ++k) {
            ga[k] += gs[k];
            gb[k] += gs[k];
        }
    });
}

Tape::Var Tape::stack(std::span<const Var> scalars) {
    Vector y;
    y.reserve(scalars.size());
    for (auto s : scalars) {
        if (value(s).size() != 1) throw DimensionError("tape stack: expected scalar nodes");
        y.push_back(value(s)[0]);
    }
    std::vector<Var> ids(scalars.begin(), scalars.end());
    return push(std::move(y), [ids = std::move(ids)](Tape& t, Var self) {
        const auto gs = t.g(self);
        for (std::size_t k = 0; k < ids.size(); ++k) t.g(ids[k])[0] += gs[k];
    });
}

Tape::Var Tape::softmax(Var scores) {
    return push(gnnrec::softmax(value(scores)),
                [scores](Tape& t, Var self) { softmax_backward(t.value(self), t.g(self), t.g(scores)); });
}

Tape::Var Tape::weighted_sum(std::span<const Var> xs, Var weights) {
    const auto& w = value(weights);
    if (w.size() != xs.size()) throw DimensionError("weighted_sum: weight count does not match input count");
    if (xs.empty()) throw DegenerateError("weighted_sum of no vectors");
    const std::size_t n = value(xs[0]).size();
    Vector y(n, 0.0);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& x = value(xs[k]);
        if (x.size() != n) throw DimensionError("weighted_sum: length mismatch");
        for (std::size_t j = 0; j < n; ++j) y[j] += w[k] * x[j];
    }
    std::vector<Var> ids(xs.begin(), xs.end());
    return push(std::move(y), [ids = std::move(ids), weights](Tape& t, Var self) {
        const auto gs = t.g(self);
        const auto& w = t.value(weights);
        auto gw = t.g(weights);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const auto& x = t.value(ids[k]);
            auto gx = t.g(ids[k]);
            double acc = 0.0;
            for (std::size_t j = 0; j < gs.size(); ++j) {
                gx[j] += w[k] * gs[j];
                acc += x[j] * gs[j];
            }
            gw[k] += acc;
        }
    });
}

Tape::Var Tape::weighted_sum(std::span<const Var> xs, std::span<const double> weights) {
    return weighted_sum(xs, input(Vector(weights.begin(), weights.end())));
}

Tape::Var Tape::mean(std::span<const Var> xs) {
    if (xs.empty()) throw DegenerateError("mean of no vectors");
    const std::size_t n = value(xs[0]).size();
    const double inv = 1.0 / static_cast<double>(xs.size());
    Vector y(n, 0.0);
    for (auto x : xs) {
        const auto& v = value(x);
        if (v.size() != n) throw DimensionError("mean: length mismatch");
        for (std::size_t j = 0; j < n; ++j) y[j] += inv * v[j];
    }
    std::vector<Var> ids(xs.begin(), xs.end());
    return push(std::move(y), [ids = std::move(ids), inv](Tape& t, Var self) {
        const auto gs = t.g(self);
        for (auto x : ids) {
            auto gx = t.g(x);
            for (std::size_t j = 0; j < gs.size(); ++j) gx[j] += inv * gs[j];
        }
    });
}

Tape::Var Tape::max_pool(std::span<const Var> xs) {
    if (xs.empty()) throw DegenerateError("max_pool of no vectors");
    const std::size_t n = value(xs[0]).size();
    Vector y(value(xs[0]));
    std::vector<std::size_t> arg(n, 0);
    for (std::size_t k = 1; k < xs.size(); ++k) {
        const auto& v = value(xs[k]);
        if (v.size() != n) throw DimensionError("max_pool: length mismatch");
        for (std::size_t j = 0; j < n; ++j) {
            if (v[j] > y[j]) {
                y[j] = v[j];
                arg[j] = k;
            }
        }
    }
    std::vector<Var> ids(xs.begin(), xs.end());
    return push(std::move(y), [ids = std::move(ids), arg = std::move(arg)](Tape& t, Var self) {
        const auto gs = t.g(self);
        for (std::size_t j = 0; j < gs.size(); ++j) t.g(ids[arg[j]])[j] += gs[j];
    });
}

Tape::Var Tape::dot(Var a, Var b) {
    const double y = gnnrec::dot(value(a), value(b));
    return push(Vector{y}, [a, b](Tape& t, Var self) {
        const double gs = t.g(self)[0];
        const auto& va = t.value(a);
        const auto& vb = t.value(b);
        auto ga = t.g(a);
        auto gb = t.g(b);
        for (std::size_t k = 0; k < va.size(); ++k) {
            ga[k] += gs * vb[k];
            gb[k] += gs * va[k];
        }
    });
}

void Tape::seed(Var v, std::span<const double> grad) {
    auto dst = g(v);
    if (grad.size() != dst.size()) throw DimensionError("tape seed: length mismatch");
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += grad[k];
}

void Tape::backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].back) nodes_[i].back(*this, i);
    }
}

} // namespace gnnrec
