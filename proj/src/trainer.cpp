#include "gnnrec/trainer.hpp"

#include "gnnrec/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace gnnrec {

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "adam") return OptimizerKind::Adam;
    if (text == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("unknown optimizer '" + text + "'");
}

void TrainingConfig::validate() const {
    // Zero is accepted and makes every step a no-op.
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("training.learning_rate must be >= 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("training.lambda must be >= 0");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (negatives < 1) throw ConfigError("training.negatives must be >= 1");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, double beta1, double beta2, double epsilon)
    : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

Optimizer::Moments& Optimizer::moments(Parameter& p) {
    auto [it, inserted] = state_.try_emplace(&p);
    if (inserted) {
        it->second.m = Matrix(p.value.rows(), p.value.cols());
        it->second.v = Matrix(p.value.rows(), p.value.cols());
    }
    return it->second;
}

void Optimizer::update(Parameter& p, Moments* mom, std::size_t offset, std::size_t count) {
    double* w = p.value.data() + offset;
    const double* g = p.grad.data() + offset;
    if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t k = 0; k < count; ++k) w[k] -= lr_ * g[k];
        return;
    }
    double* m = mom->m.data() + offset;
    double* v = mom->v.data() + offset;
    const double t = static_cast<double>(t_);
    const double c1 = 1.0 - std::pow(beta1_, t);
    const double c2 = 1.0 - std::pow(beta2_, t);
    for (std::size_t k = 0; k < count; ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
        w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
}

void Optimizer::step_dense(Parameter& p) {
    if (t_ == 0) throw ConfigError("optimizer step before begin_step");
    update(p, kind_ == OptimizerKind::Adam ? &moments(p) : nullptr, 0, p.value.size());
}

void Optimizer::step_rows(Parameter& p, std::span<const Index> rows) {
    if (t_ == 0) throw ConfigError("optimizer step before begin_step");
    Moments* mom = kind_ == OptimizerKind::Adam ? &moments(p) : nullptr;
    const std::size_t cols = p.value.cols();
    for (auto r : rows) {
        if (r < 0 || static_cast<std::size_t>(r) >= p.value.rows()) throw BoundsError(p.name + ": row out of range");
        update(p, mom, static_cast<std::size_t>(r) * cols, cols);
    }
}

std::vector<Index> sample_negatives(const InteractionGraph& graph, Index user, std::size_t n, Rng& rng) {
    const std::size_t n_items = graph.n_items();
    const std::size_t degree = graph.degree(Side::User, user);
    if (degree >= n_items) throw SamplingError("user " + std::to_string(user) + " has interacted with every item");
    if (n > n_items - degree)
        throw SamplingError("user " + std::to_string(user) + " has only " + std::to_string(n_items - degree) +
                            " unseen items, " + std::to_string(n) + " requested");
    std::vector<Index> out;
    out.reserve(n);
    if (2 * (degree + n) <= n_items) {
        // Sparse user: rejection against the positives and earlier picks.
        while (out.size() < n) {
            const auto item = static_cast<Index>(uniform_index(rng, n_items));
            if (graph.has_edge(user, item) || std::find(out.begin(), out.end(), item) != out.end()) continue;
            out.push_back(item);
        }
        return out;
    }
    std::vector<Index> pool;
    pool.reserve(n_items - degree);
    const auto seen = graph.neighbors(Side::User, user);
    std::size_t s = 0;
    for (std::size_t i = 0; i < n_items; ++i) {
        while (s < seen.size() && static_cast<std::size_t>(seen[s].index) < i) ++s;
        if (s < seen.size() && static_cast<std::size_t>(seen[s].index) == i) continue;
        pool.push_back(static_cast<Index>(i));
    }
    for (std::size_t k = 0; k < n; ++k) {
        const auto j = k + uniform_index(rng, pool.size() - k);
        std::swap(pool[k], pool[j]);
        out.push_back(pool[k]);
    }
    return out;
}

double training_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                     std::span<const Parameter* const> params, double lambda) {
    double total = 0.0;
    for (double s : pos_scores) total += pair_loss(s, 1.0);
    for (double s : neg_scores) total += pair_loss(s, 0.0);
    double reg = 0.0;
    for (const auto* p : params) reg += squared_norm(p->value.flat());
    return total + 0.5 * lambda * reg;
}

std::vector<PairBatch> make_pair_batches(const InteractionGraph& graph, const TrainingConfig& config, Rng& rng) {
    auto edges = graph.edges();
    shuffle(edges.begin(), edges.end(), rng);
    std::vector<PairBatch> batches;
    for (std::size_t start = 0; start < edges.size(); start += config.batch_size) {
        const std::size_t end = std::min(edges.size(), start + config.batch_size);
        PairBatch batch;
        for (std::size_t k = start; k < end; ++k) {
            batch.push(edges[k].user, edges[k].item, 1.0);
            for (auto neg : sample_negatives(graph, edges[k].user, config.negatives, rng))
                batch.push(edges[k].user, neg, 0.0);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

namespace {

void zero_rows(Parameter& p, std::span<const Index> rows) {
    for (auto r : rows) {
        auto g = p.grad.row(static_cast<std::size_t>(r));
        std::fill(g.begin(), g.end(), 0.0);
    }
}

} // namespace

LossRecord train_epoch(const InteractionGraph& graph, GnnModel& model, const NeighborSamples& samples,
                       const TrainingConfig& config, Optimizer& optimizer, Rng& rng, std::size_t epoch) {
    config.validate();
    if (graph.n_edges() == 0) throw EmptyInputError("training graph has no edges");
    const auto started = std::chrono::steady_clock::now();
    const auto batches = make_pair_batches(graph, config, rng);
    auto dense = model.dense_parameters();
    auto& emb = model.embeddings();
    for (auto* p : model.all_parameters()) p->zero_grad();

    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        TouchedRows touched;
        const auto value = model.objective(samples, batches[b], config.lambda, true, &touched);
        if (!std::isfinite(value.total))
            throw DivergedError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(b + 1) + " of " + std::to_string(batches.size()));
        total += value.total;
        pairs += batches[b].size();

        optimizer.begin_step();
        for (auto* p : dense) {
            optimizer.step_dense(*p);
            p->zero_grad();
        }
        optimizer.step_rows(emb.users, touched.users);
        optimizer.step_rows(emb.items, touched.items);
        optimizer.step_rows(emb.ratings, touched.ratings);
        zero_rows(emb.users, touched.users);
        zero_rows(emb.items, touched.items);
        zero_rows(emb.ratings, touched.ratings);
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    return {epoch, total / static_cast<double>(pairs), elapsed.count()};
}

std::vector<LossRecord> fit(const InteractionGraph& graph, GnnModel& model, const TrainingConfig& config,
                            const ImportanceConfig& sampler, const std::function<void(const LossRecord&)>& on_epoch) {
    config.validate();
    if (graph.n_users() != model.n_users() || graph.n_items() != model.n_items())
        throw DimensionError("graph and model node counts differ");
    Optimizer optimizer(config.optimizer, config.learning_rate);
    std::vector<LossRecord> records;
    NeighborSamples samples;
    if (sampler.mode == SampleMode::TopK && config.epochs > 0) samples = sample_all(graph, sampler, 0);
    const auto stream = derive_seed(config.seed, "train");
    for (std::size_t e = 1; e <= config.epochs; ++e) {
        if (sampler.mode == SampleMode::Proportional) samples = sample_all(graph, sampler, e);
        Rng rng(derive_seed(stream, e));
        records.push_back(train_epoch(graph, model, samples, config, optimizer, rng, e));
        if (on_epoch) on_epoch(records.back());
    }
    return records;
}

void write_loss_csv(std::span<const LossRecord> records, std::ostream& out) {
    out << "epoch,mean_loss,wall_time_s\n";
    for (const auto& r : records)
        out << r.epoch << ',' << std::setprecision(17) << r.mean_train_loss << ',' << std::setprecision(6)
            << r.wall_time << '\n';
    if (!out) throw IoError("failed to write loss series");
}

std::vector<LossRecord> read_loss_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "epoch,mean_loss,wall_time_s") throw SchemaError("loss CSV: bad header");
    std::vector<LossRecord> out;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        std::istringstream row(line);
        LossRecord r;
        char c1 = 0, c2 = 0;
        if (!(row >> r.epoch >> c1 >> r.mean_train_loss >> c2 >> r.wall_time) || c1 != ',' || c2 != ',')
            throw ParseError("loss CSV: malformed line " + std::to_string(n));
        out.push_back(r);
    }
    return out;
}

} // namespace gnnrec
