#include "gnnrec/error.hpp"
#include "gnnrec/model.hpp"

#include <map>
#include <optional>
#include <set>
#include <tuple>

namespace gnnrec::reference {

namespace {

// Recursive propagation on a tape, memoized per (side, node, level).
class Builder {
public:
    Builder(GnnModel& model, const NeighborSamples& samples, Tape& tape)
        : model_(model), samples_(samples), tape_(tape) {
        if (samples.users.size() != model.n_users() || samples.items.size() != model.n_items())
            throw DimensionError("neighbor samples do not match model node counts");
    }

    Tape::Var rep(Side side, Index node, std::size_t level) {
        const auto key = std::make_tuple(side, node, level);
        if (auto it = memo_.find(key); it != memo_.end()) return it->second;
        Tape::Var out;
        auto& emb = model_.embeddings();
        if (level == 0) {
            if (side == Side::User) {
                users_.insert(node);
                out = tape_.row(emb.users, static_cast<std::size_t>(node));
            } else {
                items_.insert(node);
                out = tape_.row(emb.items, static_cast<std::size_t>(node));
            }
        } else {
            const auto parts = messages(side, node, level);
            const auto self = parts.first;
            out = parts.second ? tape_.add(self, *parts.second) : self;
            out = tape_.leaky_relu(out, model_.config().leaky_slope);
        }
        memo_.emplace(key, out);
        return out;
    }

    // Self message and, if the node has sampled neighbors, the aggregated
    // neighborhood message.
    std::pair<Tape::Var, std::optional<Tape::Var>> messages(Side side, Index node, std::size_t level) {
        const auto& cfg = model_.config();
        auto& P = side == Side::User ? model_.params().user_layers[level - 1] : model_.params().item_layers[level - 1];
        const Side other = side == Side::User ? Side::Item : Side::User;
        const auto prev = rep(side, node, level - 1);
        const auto self = tape_.affine(P.self.weight, prev, &P.self.bias);

        const auto& nbrs = samples_.of(side, node);
        if (nbrs.empty()) return {self, std::nullopt};
        std::vector<Tape::Var> xs;
        for (const auto& nb : nbrs) {
            const auto n = rep(other, nb.index, level - 1);
            const auto level_row = static_cast<std::size_t>(nb.rating - 1);
            ratings_.insert(static_cast<Index>(level_row));
            const auto r = tape_.row(model_.embeddings().ratings, level_row);
            xs.push_back(taped::fuse_interaction(tape_, n, r, P));
        }
        Tape::Var m;
        if (cfg.aggregator == Aggregator::Mean) {
            m = tape_.mean(xs);
        } else if (cfg.aggregator == Aggregator::Attention) {
            std::vector<Tape::Var> scores;
            for (auto x : xs) scores.push_back(taped::attention_score(tape_, x, prev, P));
            m = tape_.weighted_sum(xs, tape_.softmax(tape_.stack(scores)));
        } else {
            std::vector<Tape::Var> pooled;
            for (auto x : xs) pooled.push_back(tape_.relu(tape_.affine(P.pool.weight, x, &P.pool.bias)));
            m = tape_.add(prev, tape_.max_pool(pooled));
        }
        const auto h = tape_.relu(tape_.affine(P.aggregate.weight, m, &P.aggregate.bias));
        return {self, h};
    }

    const std::set<Index>& users() const { return users_; }
    const std::set<Index>& items() const { return items_; }
    const std::set<Index>& ratings() const { return ratings_; }

private:
    GnnModel& model_;
    const NeighborSamples& samples_;
    Tape& tape_;
    std::map<std::tuple<Side, Index, std::size_t>, Tape::Var> memo_;
    std::set<Index> users_, items_, ratings_;
};

} // namespace

Representations represent(GnnModel& model, const NeighborSamples& samples) {
    Tape tape;
    Builder b(model, samples, tape);
    const std::size_t L = model.config().layers;
    const std::size_t d = model.config().dim;
    Representations out{Matrix(model.n_users(), d), Matrix(model.n_items(), d)};
    for (std::size_t u = 0; u < model.n_users(); ++u) {
        const auto& v = tape.value(b.rep(Side::User, static_cast<Index>(u), L));
        std::copy(v.begin(), v.end(), out.users.row(u).begin());
    }
    for (std::size_t i = 0; i < model.n_items(); ++i) {
        const auto& v = tape.value(b.rep(Side::Item, static_cast<Index>(i), L));
        std::copy(v.begin(), v.end(), out.items.row(i).begin());
    }
    return out;
}

ObjectiveValue objective(GnnModel& model, const NeighborSamples& samples, const PairBatch& batch, double lambda,
                         bool accumulate) {
    if (batch.items.size() != batch.size() || batch.labels.size() != batch.size())
        throw DimensionError("pair batch arrays differ in length");
    Tape tape;
    Builder b(model, samples, tape);
    const std::size_t L = model.config().layers;
    ObjectiveValue value;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        if (batch.users[k] < 0 || static_cast<std::size_t>(batch.users[k]) >= model.n_users())
            throw BoundsError("user index out of range");
        if (batch.items[k] < 0 || static_cast<std::size_t>(batch.items[k]) >= model.n_items())
            throw BoundsError("item index out of range");
        const auto u = b.rep(Side::User, batch.users[k], L);
        const auto i = b.rep(Side::Item, batch.items[k], L);
        const auto logit = taped::predict_logit(tape, u, i, model.config().head, model.params());
        const double z = tape.value(logit)[0];
        value.data += pair_loss_logit(z, batch.labels[k]);
        const double g = pair_loss_logit_grad(z, batch.labels[k]);
        tape.seed(logit, std::span<const double>(&g, 1));
    }

    auto& emb = model.embeddings();
    double reg = 0.0;
    for (auto u : b.users()) reg += squared_norm(emb.users.value.row(static_cast<std::size_t>(u)));
    for (auto i : b.items()) reg += squared_norm(emb.items.value.row(static_cast<std::size_t>(i)));
    for (auto r : b.ratings()) reg += squared_norm(emb.ratings.value.row(static_cast<std::size_t>(r)));
    const auto dense = model.dense_parameters();
    for (const auto* p : dense) reg += squared_norm(p->value.flat());
    value.total = value.data + 0.5 * lambda * reg;
    if (!accumulate) return value;

    tape.backward();
    const auto add_row = [lambda](Parameter& p, std::size_t r) {
        const auto v = p.value.row(r);
        auto g = p.grad.row(r);
        for (std::size_t j = 0; j < v.size(); ++j) g[j] += lambda * v[j];
    };
    for (auto u : b.users()) add_row(emb.users, static_cast<std::size_t>(u));
    for (auto i : b.items()) add_row(emb.items, static_cast<std::size_t>(i));
    for (auto r : b.ratings()) add_row(emb.ratings, static_cast<std::size_t>(r));
    for (auto* p : dense) {
        const auto v = p->value.flat();
        auto g = p->grad.flat();
        for (std::size_t j = 0; j < v.size(); ++j) g[j] += lambda * v[j];
    }
    return value;
}

std::vector<Message> node_messages(GnnModel& model, const NeighborSamples& samples, Side side, Index node,
                                   std::size_t layer) {
    if (layer < 1 || layer > model.config().layers)
        throw ConfigError("layer must be in [1, " + std::to_string(model.config().layers) + "]");
    const std::size_t count = side == Side::User ? model.n_users() : model.n_items();
    if (node < 0 || static_cast<std::size_t>(node) >= count) throw BoundsError("node index out of range");
    Tape tape;
    Builder b(model, samples, tape);
    const auto [self, neighborhood] = b.messages(side, node, layer);
    std::vector<Message> out;
    out.push_back({node, node, tape.value(self)});
    if (neighborhood) out.push_back({-1, node, tape.value(*neighborhood)});
    return out;
}

} // namespace gnnrec::reference
