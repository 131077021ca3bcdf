#pragma once

#include "gnnrec/graph_store.hpp"
#include "gnnrec/numeric.hpp"
#include "gnnrec/sampler.hpp"
#include "gnnrec/tape.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gnnrec {

enum class Aggregator { Mean, Attention, Pooling };
enum class Head { Dot, Mlp };

std::string to_string(Aggregator a);
std::string to_string(Head h);
Aggregator parse_aggregator(const std::string& text);
Head parse_head(const std::string& text);

struct ModelConfig {
    std::size_t dim = 64;
    std::size_t layers = 2;
    Aggregator aggregator = Aggregator::Attention;
    Head head = Head::Dot;
    double leaky_slope = kLeakySlope;
};

/// y = W x + b; W is out x in, b is 1 x out.
struct Affine {
    Parameter weight;
    Parameter bias;

    Affine() = default;
    Affine(const std::string& name, std::size_t out, std::size_t in)
        : weight(name + ".w", out, in), bias(name + ".b", 1, out) {}

    std::size_t in() const { return weight.value.cols(); }
    std::size_t out() const { return weight.value.rows(); }
    Vector operator()(std::span<const double> x) const { return affine(weight.value, x, bias.value.flat()); }
};

/// User, item, and rating-level embedding rows.
struct EmbeddingTable {
    Parameter users;
    Parameter items;
    Parameter ratings;
};

enum class EmbeddingKind { User, Item, Rating };

/// Weights of one propagation layer on one side of the graph.
struct SideLayer {
    Affine fuse_in;     ///< [neighbor ⊕ rating] (2d) -> d
    Affine fuse_out;    ///< d -> d
    Affine attn_hidden; ///< [fused ⊕ center] (2d) -> d
    Affine attn_out;    ///< d -> 1
    Affine pool;        ///< per-neighbor transform before max pooling
    Affine aggregate;   ///< transform applied to the aggregated neighborhood
    Affine self;        ///< self message

    SideLayer() = default;
    SideLayer(const std::string& prefix, std::size_t d);
};

struct ModelParams {
    std::vector<SideLayer> user_layers;
    std::vector<SideLayer> item_layers;
    Affine user_relation; ///< fuses a user with its user-user neighborhood
    Affine head_hidden;   ///< MLP head, 2d -> d
    Affine head_out;      ///< MLP head, d -> 1
};

/// A message passed into `target` during propagation; `source` is -1 for an
/// aggregated neighborhood message.
struct Message {
    Index source;
    Index target;
    Vector vector;
};

// Single-vector forward ops. Each mirrors one step of the batched
// propagation and is used directly by tests and the reference path.

Vector embed_lookup(const EmbeddingTable& table, EmbeddingKind kind, Index index);

/// fuse_out(relu(fuse_in([e_neighbor ⊕ e_rating]))).
Vector fuse_interaction(std::span<const double> e_neighbor, std::span<const double> e_rating, const SideLayer& layer);

/// w2 . relu(attn_hidden([x ⊕ e_center])) + b2.
double attention_score(std::span<const double> x, std::span<const double> e_center, const SideLayer& layer);

/// Softmax of attention scores.
Vector attention_weights(std::span<const double> scores);

/// relu(transform(mean(xs))). An empty list yields relu(bias).
Vector aggregate_mean(std::span<const Vector> xs, const Affine& transform);

/// relu(transform(sum_k betas[k] xs[k])).
Vector aggregate_attention(std::span<const Vector> xs, std::span<const double> betas, const Affine& transform);

/// pooled = elementwise max over relu(pool(x)); returns
/// relu(transform(self + pooled)), or relu(transform(self)) with no
/// neighbors.
Vector aggregate_pooling(std::span<const double> self, std::span<const Vector> neighbor_feats, const Affine& pool,
                         const Affine& transform);

/// Softmax-normalized relation weights g(r) over the user's neighbors,
/// u_n = sum g(r) n, then relu(transform(u + u_n)).
Vector aggregate_user_neighbors(std::span<const double> user, std::span<const Vector> neighbors,
                                std::span<const double> relation_weights, const Affine& transform);

/// sigmoid(u . i) for the dot head; sigmoid(out(relu(hidden([u ⊕ i])))) for
/// the MLP head.
double predict(std::span<const double> user, std::span<const double> item, Head head, const ModelParams& params);
double predict_logit(std::span<const double> user, std::span<const double> item, Head head, const ModelParams& params);

// Tape versions of the same ops, used by the reference model.
namespace taped {
Tape::Var fuse_interaction(Tape& t, Tape::Var e_neighbor, Tape::Var e_rating, SideLayer& layer);
Tape::Var attention_score(Tape& t, Tape::Var x, Tape::Var e_center, SideLayer& layer);
Tape::Var aggregate_user_neighbors(Tape& t, Tape::Var user, std::span<const Tape::Var> neighbors,
                                   std::span<const double> relation_weights, Affine& transform);
Tape::Var predict_logit(Tape& t, Tape::Var user, Tape::Var item, Head head, ModelParams& params);
} // namespace taped

/// Labeled (user, item) pairs; label 1 for observed, 0 for sampled negatives.
struct PairBatch {
    std::vector<Index> users;
    std::vector<Index> items;
    std::vector<double> labels;

    std::size_t size() const { return users.size(); }
    void push(Index u, Index i, double label) {
        users.push_back(u);
        items.push_back(i);
        labels.push_back(label);
    }
    void clear() {
        users.clear();
        items.clear();
        labels.clear();
    }
};

/// Embedding rows that took part in a batch; only these are regularized
/// and stepped.
struct TouchedRows {
    std::vector<Index> users;
    std::vector<Index> items;
    std::vector<Index> ratings;
};

struct Representations {
    Matrix users;
    Matrix items;
};

struct ObjectiveValue {
    double total = 0.0;
    double data = 0.0;
};

/// Per-pair data loss -ln p (label 1) or -ln(1 - p) (label 0), with p
/// clamped to [1e-12, 1 - 1e-12].
double pair_loss(double prob, double label);
/// d(pair_loss)/d(logit); zero inside the clamped region.
double pair_loss_grad_logit(double prob, double label);
/// pair_loss(sigmoid(logit), label) evaluated from the logit, which keeps
/// precision when the probability saturates. Same clamp.
double pair_loss_logit(double logit, double label);
double pair_loss_logit_grad(double logit, double label);

/// The graph recommender: embeddings, per-layer weights, and the batched
/// propagation used for training and scoring.
class GnnModel {
public:
    GnnModel() = default;
    GnnModel(std::size_t n_users, std::size_t n_items, int rating_levels, const ModelConfig& config,
             std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    std::size_t n_users() const { return table_.users.value.rows(); }
    std::size_t n_items() const { return table_.items.value.rows(); }
    int rating_levels() const { return static_cast<int>(table_.ratings.value.rows()); }

    EmbeddingTable& embeddings() { return table_; }
    const EmbeddingTable& embeddings() const { return table_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    /// Every parameter in a fixed order (snapshot order).
    std::vector<Parameter*> all_parameters();
    std::vector<const Parameter*> all_parameters() const;
    /// Network weights used under the current config (no embeddings).
    std::vector<Parameter*> dense_parameters();
    /// dense_parameters() plus the embedding tables in use.
    std::vector<Parameter*> trainable_parameters();

    /// Batched forward (and, with `accumulate`, backward) of the objective
    /// sum_pairs pair_loss + lambda/2 (||touched rows||^2 + ||dense||^2).
    ObjectiveValue objective(const NeighborSamples& samples, const PairBatch& batch, double lambda, bool accumulate,
                             TouchedRows* touched = nullptr);

    /// Final representations of every user and item.
    Representations represent(const NeighborSamples& samples) const;

private:
    ModelConfig config_;
    EmbeddingTable table_;
    ModelParams params_;
};

/// Full propagation with neighborhoods drawn by `sampler` (round 0).
Representations propagate(const InteractionGraph& graph, const GnnModel& model, const ImportanceConfig& sampler);

/// Serial reference built from the single-vector ops on a Tape. Slow;
/// kept to check the batched path.
namespace reference {

Representations represent(GnnModel& model, const NeighborSamples& samples);
ObjectiveValue objective(GnnModel& model, const NeighborSamples& samples, const PairBatch& batch, double lambda,
                         bool accumulate);
/// Self message and aggregated neighbor message into `node` at `layer`
/// (1-based).
std::vector<Message> node_messages(GnnModel& model, const NeighborSamples& samples, Side side, Index node,
                                   std::size_t layer);

} // namespace reference

} // namespace gnnrec
