#pragma once

#include "gnnrec/graph_store.hpp"
#include "gnnrec/model.hpp"
#include "gnnrec/sampler.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gnnrec {

enum class OptimizerKind { Sgd, Adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct TrainingConfig {
    double learning_rate = 1e-3;
    double lambda = 1e-4;
    std::size_t epochs = 30;
    std::size_t batch_size = 1024;
    std::size_t negatives = 1; ///< negatives drawn per positive edge
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::Adam;

    /// Throws ConfigError unless counts are >= 1 (epochs may be 0) and
    /// learning_rate and lambda are finite and >= 0.
    void validate() const;
};

struct LossRecord {
    std::size_t epoch = 0; ///< 1-based
    double mean_train_loss = 0.0;
    double wall_time = 0.0; ///< seconds spent in this epoch
};

/// SGD or Adam. Dense parameters are stepped whole; embedding tables are
/// stepped row by row so untouched rows (and their Adam moments) stay put.
/// Adam bias correction uses the global step count.
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                       double epsilon = 1e-8);

    /// Starts a new step; call once per batch before step_dense/step_rows.
    void begin_step() { ++t_; }
    void step_dense(Parameter& p);
    void step_rows(Parameter& p, std::span<const Index> rows);
    std::size_t steps() const { return t_; }

private:
    struct Moments {
        Matrix m;
        Matrix v;
    };
    Moments& moments(Parameter& p);
    void update(Parameter& p, Moments* mom, std::size_t offset, std::size_t count);

    OptimizerKind kind_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::unordered_map<const Parameter*, Moments> state_;
};

/// `n` distinct items the user has not interacted with, uniform over that
/// complement. Throws SamplingError when fewer than `n` such items exist.
std::vector<Index> sample_negatives(const InteractionGraph& graph, Index user, std::size_t n, Rng& rng);

/// sum -ln s over positives + sum -ln(1 - s) over negatives
/// + lambda/2 * sum of squared norms of `params`; scores are clamped to
/// [1e-12, 1 - 1e-12].
double training_loss(std::span<const double> pos_scores, std::span<const double> neg_scores,
                     std::span<const Parameter* const> params, double lambda);

/// Positives of one epoch in seeded shuffled order, each followed by its
/// sampled negatives, cut into batches of `batch_size` positives.
std::vector<PairBatch> make_pair_batches(const InteractionGraph& graph, const TrainingConfig& config, Rng& rng);

/// One pass over the shuffled training edges. `samples` are the neighbor
/// samples used for propagation this epoch.
LossRecord train_epoch(const InteractionGraph& graph, GnnModel& model, const NeighborSamples& samples,
                       const TrainingConfig& config, Optimizer& optimizer, Rng& rng, std::size_t epoch);

/// Runs `config.epochs` epochs. Top-k neighbor samples are drawn once;
/// proportional samples are redrawn every epoch. The shuffle/negative
/// stream of epoch e is derived from (config.seed, e).
std::vector<LossRecord> fit(const InteractionGraph& graph, GnnModel& model, const TrainingConfig& config,
                            const ImportanceConfig& sampler,
                            const std::function<void(const LossRecord&)>& on_epoch = {});

/// `epoch,mean_loss,wall_time_s` with a header line.
void write_loss_csv(std::span<const LossRecord> records, std::ostream& out);
std::vector<LossRecord> read_loss_csv(std::istream& in);

} // namespace gnnrec
