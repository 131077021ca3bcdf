#pragma once

#include "gnnrec/graph_store.hpp"
#include "gnnrec/model.hpp"
#include "gnnrec/numeric.hpp"
#include "gnnrec/trainer.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace gnnrec {

/// Matrix factorization scored by x_ui = <p_u, q_i>.
struct BprModel {
    Parameter user_factors;
    Parameter item_factors;

    BprModel() = default;
    /// Xavier-uniform factors.
    BprModel(std::size_t n_users, std::size_t n_items, std::size_t dim, std::uint64_t init_seed);

    std::size_t n_users() const { return user_factors.value.rows(); }
    std::size_t n_items() const { return item_factors.value.rows(); }
    std::size_t dim() const { return user_factors.value.cols(); }
};

/// <p_u, q_i>; throws BoundsError for out-of-range indices.
double bpr_score(const BprModel& model, Index user, Index item);

/// -ln sigmoid(x_u,pos - x_u,neg) + lambda/2 (|p_u|^2 + |q_pos|^2 + |q_neg|^2).
double bpr_loss(const BprModel& model, Index user, Index pos, Index neg, double lambda);

struct BprTriple {
    Index user;
    Index pos;
    Index neg;
};

/// Sum of per-triple data terms plus lambda/2 times the squared norm of each
/// distinct row the triples touch (counted once). With `accumulate`, adds
/// the gradient into the factor grads and fills `touched`.
double bpr_objective(BprModel& model, std::span<const BprTriple> triples, double lambda, bool accumulate,
                     TouchedRows* touched = nullptr);

/// Same epoch structure as the GNN trainer: shuffled positives, `negatives`
/// sampled items per positive, one optimizer step per batch.
std::vector<LossRecord> train_bpr(const InteractionGraph& graph, BprModel& model, const TrainingConfig& config,
                                  const std::function<void(const LossRecord&)>& on_epoch = {});

} // namespace gnnrec
