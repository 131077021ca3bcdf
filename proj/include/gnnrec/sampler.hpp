#pragma once

#include "gnnrec/graph_store.hpp"
#include "gnnrec/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gnnrec {

enum class SampleMode { TopK, Proportional };

std::string to_string(SampleMode mode);
SampleMode parse_sample_mode(const std::string& text);

struct ImportanceConfig {
    std::size_t sample_size = 10;
    SampleMode mode = SampleMode::TopK;
    std::uint64_t seed = 0;
};

struct ScoredNeighbor {
    Index index;
    int rating;
    double score;
};

/// Relationship tightness of center c to neighbor n is
/// rating(c, n) / degree(n); scores are tightness normalized over N(c), so
/// they sum to one. Returned in adjacency order; empty for an isolated node.
std::vector<ScoredNeighbor> importance_scores(const InteractionGraph& graph, Side side, Index center);

/// Picks at most `sample_size` neighbors of `center`.
///
/// Top-k returns the highest scores, ties broken by ascending index, and
/// never touches `rng`. Proportional draws without replacement with
/// probability proportional to score. A node with degree <= sample_size
/// gets its whole neighbor list in adjacency order.
std::vector<Neighbor> sample_neighbors(const InteractionGraph& graph, Side side, Index center,
                                       const ImportanceConfig& config, Rng& rng);

/// Convenience overload deriving the RNG from (config.seed, side, center).
std::vector<Neighbor> sample_neighbors(const InteractionGraph& graph, Side side, Index center,
                                       const ImportanceConfig& config);

/// Sampled neighborhoods of every node on both sides.
struct NeighborSamples {
    std::vector<std::vector<Neighbor>> users; ///< items sampled for each user
    std::vector<std::vector<Neighbor>> items; ///< users sampled for each item

    const std::vector<Neighbor>& of(Side side, Index index) const {
        return side == Side::User ? users[static_cast<std::size_t>(index)] : items[static_cast<std::size_t>(index)];
    }
};

/// Samples every node. `round` selects an independent proportional-mode
/// stream (e.g. the epoch); top-k ignores it. Parallel over nodes, with
/// per-node streams so the result does not depend on thread count.
NeighborSamples sample_all(const InteractionGraph& graph, const ImportanceConfig& config, std::uint64_t round = 0);

} // namespace gnnrec
