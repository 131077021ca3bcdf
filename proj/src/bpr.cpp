#include "gnnrec/bpr.hpp"

#include "gnnrec/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace gnnrec {

BprModel::BprModel(std::size_t n_users, std::size_t n_items, std::size_t dim, std::uint64_t init_seed)
    : user_factors("bpr.users", n_users, dim), item_factors("bpr.items", n_items, dim) {
    if (dim < 1) throw ConfigError("model.dim must be >= 1");
    Rng rng(init_seed);
    xavier_uniform(user_factors.value, rng);
    xavier_uniform(item_factors.value, rng);
}

namespace {

void check(const BprModel& model, Index user, Index item) {
    if (user < 0 || static_cast<std::size_t>(user) >= model.n_users())
        throw BoundsError("bpr: user " + std::to_string(user) + " out of range");
    if (item < 0 || static_cast<std::size_t>(item) >= model.n_items())
        throw BoundsError("bpr: item " + std::to_string(item) + " out of range");
}

// -ln sigmoid(x) = softplus(-x)
double neg_log_sigmoid(double x) {
    return std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

} // namespace

double bpr_score(const BprModel& model, Index user, Index item) {
    check(model, user, item);
    return dot(model.user_factors.value.row(static_cast<std::size_t>(user)),
               model.item_factors.value.row(static_cast<std::size_t>(item)));
}

double bpr_loss(const BprModel& model, Index user, Index pos, Index neg, double lambda) {
    const double gap = bpr_score(model, user, pos) - bpr_score(model, user, neg);
    double reg = squared_norm(model.user_factors.value.row(static_cast<std::size_t>(user))) +
                 squared_norm(model.item_factors.value.row(static_cast<std::size_t>(pos)));
    if (neg != pos) reg += squared_norm(model.item_factors.value.row(static_cast<std::size_t>(neg)));
    return neg_log_sigmoid(gap) + 0.5 * lambda * reg;
}

double bpr_objective(BprModel& model, std::span<const BprTriple> triples, double lambda, bool accumulate,
                     TouchedRows* touched) {
    std::vector<Index> users, items;
    double data = 0.0;
    const std::size_t d = model.dim();
    for (const auto& t : triples) {
        check(model, t.user, t.pos);
        check(model, t.user, t.neg);
        const auto pu = model.user_factors.value.row(static_cast<std::size_t>(t.user));
        const auto qi = model.item_factors.value.row(static_cast<std::size_t>(t.pos));
        const auto qj = model.item_factors.value.row(static_cast<std::size_t>(t.neg));
        const double gap = dot(pu, qi) - dot(pu, qj);
        data += neg_log_sigmoid(gap);
        users.push_back(t.user);
        items.push_back(t.pos);
        items.push_back(t.neg);
        if (!accumulate) continue;
        // d/dgap of -ln sigmoid(gap) = sigmoid(gap) - 1
        const double g = sigmoid(gap) - 1.0;
        auto gu = model.user_factors.grad.row(static_cast<std::size_t>(t.user));
        auto gi = model.item_factors.grad.row(static_cast<std::size_t>(t.pos));
        auto gj = model.item_factors.grad.row(static_cast<std::size_t>(t.neg));
        for (std::size_t k = 0; k < d; ++k) {
            gu[k] += g * (qi[k] - qj[k]);
            gi[k] += g * pu[k];
            gj[k] -= g * pu[k];
        }
    }
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    double reg = 0.0;
    for (auto u : users) reg += squared_norm(model.user_factors.value.row(static_cast<std::size_t>(u)));
    for (auto i : items) reg += squared_norm(model.item_factors.value.row(static_cast<std::size_t>(i)));
    if (accumulate && lambda != 0.0) {
        const auto add = [lambda](Parameter& p, Index r) {
            const auto v = p.value.row(static_cast<std::size_t>(r));
            auto g = p.grad.row(static_cast<std::size_t>(r));
            for (std::size_t k = 0; k < v.size(); ++k) g[k] += lambda * v[k];
        };
        for (auto u : users) add(model.user_factors, u);
        for (auto i : items) add(model.item_factors, i);
    }
    if (touched != nullptr) {
        touched->users = std::move(users);
        touched->items = std::move(items);
        touched->ratings.clear();
    }
    return data + 0.5 * lambda * reg;
}

std::vector<LossRecord> train_bpr(const InteractionGraph& graph, BprModel& model, const TrainingConfig& config,
                                  const std::function<void(const LossRecord&)>& on_epoch) {
    config.validate();
    if (graph.n_users() != model.n_users() || graph.n_items() != model.n_items())
        throw DimensionError("graph and model node counts differ");
    if (config.epochs > 0 && graph.n_edges() == 0) throw EmptyInputError("training graph has no edges");
    Optimizer optimizer(config.optimizer, config.learning_rate);
    model.user_factors.zero_grad();
    model.item_factors.zero_grad();
    std::vector<LossRecord> records;
    const auto stream = derive_seed(config.seed, "train");
    for (std::size_t e = 1; e <= config.epochs; ++e) {
        const auto started = std::chrono::steady_clock::now();
        Rng rng(derive_seed(stream, e));
        const auto batches = make_pair_batches(graph, config, rng);
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const auto& pairs = batches[b];
            std::vector<BprTriple> triples;
            // Each positive is followed by its negatives in the pair batch.
            Index user = -1, pos = -1;
            for (std::size_t k = 0; k < pairs.size(); ++k) {
                if (pairs.labels[k] > 0.5) {
                    user = pairs.users[k];
                    pos = pairs.items[k];
                } else {
                    triples.push_back({user, pos, pairs.items[k]});
                }
            }
            TouchedRows touched;
            const double value = bpr_objective(model, triples, config.lambda, true, &touched);
            if (!std::isfinite(value))
                throw DivergedError("non-finite BPR loss at epoch " + std::to_string(e) + ", batch " +
                                    std::to_string(b + 1) + " of " + std::to_string(batches.size()));
            total += value;
            count += triples.size();
            optimizer.begin_step();
            optimizer.step_rows(model.user_factors, touched.users);
            optimizer.step_rows(model.item_factors, touched.items);
            for (auto u : touched.users) {
                auto g = model.user_factors.grad.row(static_cast<std::size_t>(u));
                std::fill(g.begin(), g.end(), 0.0);
            }
            for (auto i : touched.items) {
                auto g = model.item_factors.grad.row(static_cast<std::size_t>(i));
                std::fill(g.begin(), g.end(), 0.0);
            }
        }
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
        records.push_back({e, total / static_cast<double>(count), elapsed.count()});
        if (on_epoch) on_epoch(records.back());
    }
    return records;
}

} // namespace gnnrec
