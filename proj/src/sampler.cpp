#include "gnnrec/sampler.hpp"

#include "gnnrec/error.hpp"

#include <algorithm>
#include <numeric>

namespace gnnrec {

std::string to_string(SampleMode mode) {
    return mode == SampleMode::TopK ? "topk" : "proportional";
}

SampleMode parse_sample_mode(const std::string& text) {
    if (text == "topk" || text == "top-k") return SampleMode::TopK;
    if (text == "proportional") return SampleMode::Proportional;
    throw ConfigError("unknown sampler mode '" + text + "'");
}

std::vector<ScoredNeighbor> importance_scores(const InteractionGraph& graph, Side side, Index center) {
    const auto adj = graph.neighbors(side, center);
    const Side other = side == Side::User ? Side::Item : Side::User;
    std::vector<ScoredNeighbor> out;
    out.reserve(adj.size());
    double total = 0.0;
    for (const auto& n : adj) {
        const double tightness =
            static_cast<double>(n.rating) / static_cast<double>(graph.degree(other, n.index));
        out.push_back({n.index, n.rating, tightness});
        total += tightness;
    }
    for (auto& s : out) s.score /= total;
    return out;
}

std::vector<Neighbor> sample_neighbors(const InteractionGraph& graph, Side side, Index center,
                                       const ImportanceConfig& config, Rng& rng) {
    if (config.sample_size < 1) throw ConfigError("sampler.size must be >= 1");
    const auto adj = graph.neighbors(side, center);
    if (adj.size() <= config.sample_size) return {adj.begin(), adj.end()};

    auto scored = importance_scores(graph, side, center);
    std::vector<Neighbor> out;
    out.reserve(config.sample_size);
    if (config.mode == SampleMode::TopK) {
        std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(config.sample_size),
                          scored.end(), [](const ScoredNeighbor& a, const ScoredNeighbor& b) {
                              return a.score != b.score ? a.score > b.score : a.index < b.index;
                          });
        for (std::size_t k = 0; k < config.sample_size; ++k) out.push_back({scored[k].index, scored[k].rating});
        return out;
    }

    // Successive draws; each removes the chosen neighbor from the pool.
    double remaining = 0.0;
    for (const auto& s : scored) remaining += s.score;
    for (std::size_t k = 0; k < config.sample_size; ++k) {
        const double target = uniform_real(rng) * remaining;
        double acc = 0.0;
        std::size_t pick = scored.size() - 1;
        for (std::size_t j = 0; j < scored.size(); ++j) {
            acc += scored[j].score;
            if (target < acc) {
                pick = j;
                break;
            }
        }
        out.push_back({scored[pick].index, scored[pick].rating});
        remaining -= scored[pick].score;
        scored.erase(scored.begin() + static_cast<std::ptrdiff_t>(pick));
        if (remaining <= 0.0) {
            remaining = 0.0;
            for (const auto& s : scored) remaining += s.score;
        }
    }
    return out;
}

namespace {
std::uint64_t node_stream(const ImportanceConfig& config, Side side, Index center, std::uint64_t round) {
    const std::uint64_t node = (static_cast<std::uint64_t>(side == Side::Item) << 40) ^
                               static_cast<std::uint64_t>(static_cast<std::uint32_t>(center));
    return derive_seed(config.seed, node, round);
}
} // namespace

std::vector<Neighbor> sample_neighbors(const InteractionGraph& graph, Side side, Index center,
                                       const ImportanceConfig& config) {
    Rng rng(node_stream(config, side, center, 0));
    return sample_neighbors(graph, side, center, config, rng);
}

NeighborSamples sample_all(const InteractionGraph& graph, const ImportanceConfig& config, std::uint64_t round) {
    NeighborSamples out;
    out.users.resize(graph.n_users());
    out.items.resize(graph.n_items());
    const auto fill = [&](Side side, std::vector<std::vector<Neighbor>>& dest) {
        const auto n = static_cast<std::int64_t>(dest.size());
#pragma omp parallel for schedule(dynamic, 64)
        for (std::int64_t v = 0; v < n; ++v) {
            const auto center = static_cast<Index>(v);
            Rng rng(node_stream(config, side, center, round));
            dest[static_cast<std::size_t>(v)] = sample_neighbors(graph, side, center, config, rng);
        }
    };
    fill(Side::User, out.users);
    fill(Side::Item, out.items);
    return out;
}

} // namespace gnnrec
