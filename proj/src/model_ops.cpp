#include "gnnrec/error.hpp"
#include "gnnrec/model.hpp"

#include <algorithm>
#include <cmath>

namespace gnnrec {

std::string to_string(Aggregator a) {
    switch (a) {
    case Aggregator::Mean: return "mean";
    case Aggregator::Attention: return "attention";
    case Aggregator::Pooling: return "pooling";
    }
    return "?";
}

std::string to_string(Head h) {
    return h == Head::Dot ? "dot" : "mlp";
}

Aggregator parse_aggregator(const std::string& text) {
    if (text == "mean") return Aggregator::Mean;
    if (text == "attention") return Aggregator::Attention;
    if (text == "pooling") return Aggregator::Pooling;
    throw ConfigError("unknown aggregator '" + text + "'");
}

Head parse_head(const std::string& text) {
    if (text == "dot") return Head::Dot;
    if (text == "mlp") return Head::Mlp;
    throw ConfigError("unknown prediction head '" + text + "'");
}

SideLayer::SideLayer(const std::string& prefix, std::size_t d)
    : fuse_in(prefix + ".fuse_in", d, 2 * d),
      fuse_out(prefix + ".fuse_out", d, d),
      attn_hidden(prefix + ".attn_hidden", d, 2 * d),
      attn_out(prefix + ".attn_out", 1, d),
      pool(prefix + ".pool", d, d),
      aggregate(prefix + ".aggregate", d, d),
      self(prefix + ".self", d, d) {}

Vector embed_lookup(const EmbeddingTable& table, EmbeddingKind kind, Index index) {
    const Parameter& p = kind == EmbeddingKind::User   ? table.users
                         : kind == EmbeddingKind::Item ? table.items
                                                       : table.ratings;
    if (index < 0 || static_cast<std::size_t>(index) >= p.value.rows())
        throw BoundsError(p.name + ": index " + std::to_string(index) + " out of range");
    const auto row = p.value.row(static_cast<std::size_t>(index));
    return {row.begin(), row.end()};
}

Vector fuse_interaction(std::span<const double> e_neighbor, std::span<const double> e_rating, const SideLayer& layer) {
    if (e_neighbor.size() != e_rating.size())
        throw DimensionError("fuse_interaction: embedding lengths differ");
    return layer.fuse_out(relu(layer.fuse_in(concat(e_neighbor, e_rating))));
}

double attention_score(std::span<const double> x, std::span<const double> e_center, const SideLayer& layer) {
    if (x.size() != e_center.size()) throw DimensionError("attention_score: input lengths differ");
    return layer.attn_out(relu(layer.attn_hidden(concat(x, e_center))))[0];
}

Vector attention_weights(std::span<const double> scores) {
    return softmax(scores);
}

Vector aggregate_mean(std::span<const Vector> xs, const Affine& transform) {
    // Accumulated as sum (1/k) x so that uniform attention weights reproduce
    // this result bit for bit.
    Vector mean(transform.in(), 0.0);
    const double inv = xs.empty() ? 0.0 : 1.0 / static_cast<double>(xs.size());
    for (const auto& x : xs) {
        if (x.size() != mean.size()) throw DimensionError("aggregate_mean: length mismatch");
        for (std::size_t j = 0; j < x.size(); ++j) mean[j] += inv * x[j];
    }
    return relu(transform(mean));
}

Vector aggregate_attention(std::span<const Vector> xs, std::span<const double> betas, const Affine& transform) {
    if (xs.size() != betas.size()) throw DimensionError("aggregate_attention: weight count does not match inputs");
    Vector sum(transform.in(), 0.0);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (xs[k].size() != sum.size()) throw DimensionError("aggregate_attention: length mismatch");
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += betas[k] * xs[k][j];
    }
    return relu(transform(sum));
}

Vector aggregate_pooling(std::span<const double> self, std::span<const Vector> neighbor_feats, const Affine& pool,
                         const Affine& transform) {
    Vector combined(self.begin(), self.end());
    if (!neighbor_feats.empty()) {
        Vector pooled = relu(pool(neighbor_feats[0]));
        for (std::size_t k = 1; k < neighbor_feats.size(); ++k) {
            const auto q = relu(pool(neighbor_feats[k]));
            for (std::size_t j = 0; j < pooled.size(); ++j) pooled[j] = std::max(pooled[j], q[j]);
        }
        if (pooled.size() != combined.size()) throw DimensionError("aggregate_pooling: length mismatch");
        for (std::size_t j = 0; j < combined.size(); ++j) combined[j] += pooled[j];
    }
    return relu(transform(combined));
}

Vector aggregate_user_neighbors(std::span<const double> user, std::span<const Vector> neighbors,
                                std::span<const double> relation_weights, const Affine& transform) {
    if (neighbors.size() != relation_weights.size())
        throw DimensionError("aggregate_user_neighbors: relation weight count does not match neighbors");
    Vector combined(user.begin(), user.end());
    if (!neighbors.empty()) {
        const auto g = softmax(relation_weights);
        for (std::size_t k = 0; k < neighbors.size(); ++k) {
            if (neighbors[k].size() != combined.size())
                throw DimensionError("aggregate_user_neighbors: length mismatch");
            for (std::size_t j = 0; j < combined.size(); ++j) combined[j] += g[k] * neighbors[k][j];
        }
    }
    return relu(transform(combined));
}

double predict_logit(std::span<const double> user, std::span<const double> item, Head head, const ModelParams& params) {
    if (user.size() != item.size()) throw DimensionError("predict: representation lengths differ");
    if (head == Head::Dot) return dot(user, item);
    return params.head_out(relu(params.head_hidden(concat(user, item))))[0];
}

double predict(std::span<const double> user, std::span<const double> item, Head head, const ModelParams& params) {
    return sigmoid(predict_logit(user, item, head, params));
}

namespace taped {

Tape::Var fuse_interaction(Tape& t, Tape::Var e_neighbor, Tape::Var e_rating, SideLayer& layer) {
    const auto q = t.concat(e_neighbor, e_rating);
    const auto h = t.relu(t.affine(layer.fuse_in.weight, q, &layer.fuse_in.bias));
    return t.affine(layer.fuse_out.weight, h, &layer.fuse_out.bias);
}

Tape::Var attention_score(Tape& t, Tape::Var x, Tape::Var e_center, SideLayer& layer) {
    const auto p = t.concat(x, e_center);
    const auto h = t.relu(t.affine(layer.attn_hidden.weight, p, &layer.attn_hidden.bias));
    return t.affine(layer.attn_out.weight, h, &layer.attn_out.bias);
}

Tape::Var aggregate_user_neighbors(Tape& t, Tape::Var user, std::span<const Tape::Var> neighbors,
                                   std::span<const double> relation_weights, Affine& transform) {
    auto combined = user;
    if (!neighbors.empty()) {
        const auto g = t.input(softmax(relation_weights));
        combined = t.add(user, t.weighted_sum(neighbors, g));
    }
    return t.relu(t.affine(transform.weight, combined, &transform.bias));
}

Tape::Var predict_logit(Tape& t, Tape::Var user, Tape::Var item, Head head, ModelParams& params) {
    if (head == Head::Dot) return t.dot(user, item);
    const auto h = t.relu(t.affine(params.head_hidden.weight, t.concat(user, item), &params.head_hidden.bias));
    return t.affine(params.head_out.weight, h, &params.head_out.bias);
}

} // namespace taped

namespace {
constexpr double kProbFloor = 1e-12;
// Logit at which sigmoid reaches 1 - kProbFloor.
const double kLogitCap = std::log((1.0 - kProbFloor) / kProbFloor);

// ln(1 + e^x) without overflow or cancellation.
double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
} // namespace

double pair_loss(double prob, double label) {
    const double p = std::clamp(prob, kProbFloor, 1.0 - kProbFloor);
    return label > 0.5 ? -std::log(p) : -std::log(1.0 - p);
}

double pair_loss_grad_logit(double prob, double label) {
    if (prob <= kProbFloor || prob >= 1.0 - kProbFloor) return 0.0;
    return prob - (label > 0.5 ? 1.0 : 0.0);
}

double pair_loss_logit(double logit, double label) {
    const double z = std::clamp(logit, -kLogitCap, kLogitCap);
    return label > 0.5 ? softplus(-z) : softplus(z);
}

double pair_loss_logit_grad(double logit, double label) {
    if (logit <= -kLogitCap || logit >= kLogitCap) return 0.0;
    return sigmoid(logit) - (label > 0.5 ? 1.0 : 0.0);
}

} // namespace gnnrec
