#pragma once

#include "gnnrec/numeric.hpp"

#include <functional>
#include <span>
#include <vector>

namespace gnnrec {

/// Minimal reverse-mode tape over vector-valued nodes. Each op stores its
/// forward value and a backward rule; `backward()` replays the rules in
/// reverse creation order, accumulating into node gradients and into the
/// `grad` of any Parameter the ops read.
///
/// Parameters are held by pointer and must outlive the tape.
class Tape {
public:
    using Var = std::size_t;

    Var input(Vector value);
    /// Embedding lookup: gradient flows into row `r` of `p.grad` only.
    Var row(Parameter& p, std::size_t r);
    /// The whole parameter, flattened.
    Var param(Parameter& p);

    /// W x + b with W (out x in) and b (1 x out) or no bias.
    Var affine(Parameter& W, Var x, Parameter* b);
    Var relu(Var x);
    Var leaky_relu(Var x, double slope);
    Var sigmoid(Var x);
    Var concat(Var a, Var b);
    Var add(Var a, Var b);
    /// Collects scalar (length-1) nodes into one vector.
    Var stack(std::span<const Var> scalars);
    Var softmax(Var scores);
    /// Sum of weights[k] * xs[k]; `weights` must have xs.size() entries.
    Var weighted_sum(std::span<const Var> xs, Var weights);
    /// Same as weighted_sum but with constant weights.
    Var weighted_sum(std::span<const Var> xs, std::span<const double> weights);
    Var mean(std::span<const Var> xs);
    /// Elementwise max over xs; the gradient goes to the first maximizer.
    Var max_pool(std::span<const Var> xs);
    Var dot(Var a, Var b);
    Var zeros(std::size_t n) { return input(Vector(n, 0.0)); }

    const Vector& value(Var v) const { return nodes_[v].value; }
    const Vector& grad(Var v) const { return nodes_[v].grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Adds `g` to the gradient of node `v`.
    void seed(Var v, std::span<const double> g);
    void backward();

private:
    struct Node {
        Vector value;
        Vector grad;
        std::function<void(Tape&, Var)> back;
    };

    Var push(Vector value, std::function<void(Tape&, Var)> back);
    std::span<double> g(Var v) { return nodes_[v].grad; }

    std::vector<Node> nodes_;
};

} // namespace gnnrec
