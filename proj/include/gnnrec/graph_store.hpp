#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace gnnrec {

using Index = std::int32_t;

struct RatingRecord {
    std::string user;
    std::string item;
    int rating = 1;
    std::int64_t timestamp = 0;
};

/// Raw explicit ratings before binarization. After `deduplicate` no
/// (user, item) pair appears twice.
struct RatingsTable {
    std::vector<RatingRecord> records;
    int max_rating = 5;
    std::size_t malformed_lines = 0;
    std::size_t first_malformed_line = 0; ///< 1-based, 0 when none
};

struct ParseOptions {
    bool strict = false;
    int max_rating = 5;
};

/// `UserID::MovieID::Rating::Timestamp`.
RatingsTable parse_movielens(const std::filesystem::path& path, const ParseOptions& options = {});
RatingsTable parse_movielens(std::istream& in, const ParseOptions& options = {});

/// CSV `user,item,rating,timestamp`; fractional ratings are truncated.
RatingsTable parse_amazon(const std::filesystem::path& path, const ParseOptions& options = {});
RatingsTable parse_amazon(std::istream& in, const ParseOptions& options = {});

/// Keeps, for each (user, item), the record with the latest timestamp
/// (the later line wins on equal timestamps). Order of first occurrence
/// is preserved.
void deduplicate(RatingsTable& table);

/// Drops users with fewer than `k` records. Single pass, users only.
RatingsTable filter_min_interactions(const RatingsTable& table, std::size_t k);

/// Keeps a seeded random `fraction` of the distinct users (all their records).
RatingsTable subsample_users(const RatingsTable& table, double fraction, std::uint64_t seed);

enum class Side { User, Item };

struct Neighbor {
    Index index;
    int rating;
    bool operator==(const Neighbor&) const = default;
};

/// Bidirectional id map between external keys and dense indices.
class IdMap {
public:
    Index intern(const std::string& key);
    std::optional<Index> find(const std::string& key) const;
    const std::string& key(Index index) const;
    std::size_t size() const { return keys_.size(); }
    const std::vector<std::string>& keys() const { return keys_; }

    bool operator==(const IdMap& other) const { return keys_ == other.keys_; }

private:
    std::vector<std::string> keys_;
    std::unordered_map<std::string, Index> lookup_;
};

struct Edge {
    Index user;
    Index item;
    int rating;
    bool operator==(const Edge&) const = default;
};

/// Immutable bipartite user/item graph in CSR form, both directions.
/// Adjacency lists are sorted by neighbor index. Every observed edge has
/// implicit weight 1; the original rating level is kept per edge.
class InteractionGraph {
public:
    InteractionGraph() = default;

    /// Builds the graph from an edge list. Duplicate (user, item) edges are
    /// rejected.
    static InteractionGraph from_edges(std::size_t n_users, std::size_t n_items, int rating_levels,
                                       std::span<const Edge> edges, IdMap users = {}, IdMap items = {});

    std::size_t n_users() const { return user_offsets_.empty() ? 0 : user_offsets_.size() - 1; }
    std::size_t n_items() const { return item_offsets_.empty() ? 0 : item_offsets_.size() - 1; }
    std::size_t n_edges() const { return user_adj_.size(); }
    std::size_t count(Side side) const { return side == Side::User ? n_users() : n_items(); }
    int rating_levels() const { return rating_levels_; }

    /// Sorted neighbor list; throws BoundsError for an out-of-range index.
    std::span<const Neighbor> neighbors(Side side, Index index) const;
    std::size_t degree(Side side, Index index) const { return neighbors(side, index).size(); }
    bool has_edge(Index user, Index item) const;

    /// All edges in user-major order.
    std::vector<Edge> edges() const;

    const IdMap& user_ids() const { return user_ids_; }
    const IdMap& item_ids() const { return item_ids_; }

    bool operator==(const InteractionGraph& other) const = default;

private:
    std::vector<std::size_t> user_offsets_;
    std::vector<Neighbor> user_adj_;
    std::vector<std::size_t> item_offsets_;
    std::vector<Neighbor> item_adj_;
    int rating_levels_ = 1;
    IdMap user_ids_;
    IdMap item_ids_;
};

/// Every observed rating becomes an edge; dense indices follow first-seen
/// order. Throws EmptyInputError for an empty table.
InteractionGraph to_implicit(const RatingsTable& table);

/// edges / (n_users * n_items).
double density(const InteractionGraph& graph);

inline std::span<const Neighbor> neighbors(const InteractionGraph& graph, Side side, Index index) {
    return graph.neighbors(side, index);
}

struct SplitSpec {
    double test_fraction = 0.2;
    std::uint64_t seed = 0;
};

struct TrainTestSplit {
    InteractionGraph train;
    std::vector<Edge> test;
};

/// Per-user random holdout of ceil(test_fraction * degree) edges, capped at
/// degree - 1. Users with fewer than two edges stay entirely in train.
TrainTestSplit split_train_test(const InteractionGraph& graph, const SplitSpec& spec);

/// Graph snapshot: `gnnrec-graph v1` header, a counts line, then one
/// `user<TAB>item:rating,...` line per user.
void write_graph_snapshot(const InteractionGraph& graph, std::ostream& out);
InteractionGraph read_graph_snapshot(std::istream& in, IdMap users = {}, IdMap items = {});

void write_id_map(const IdMap& ids, std::ostream& out);
IdMap read_id_map(std::istream& in);

void write_edge_list(std::span<const Edge> edges, std::ostream& out);
std::vector<Edge> read_edge_list(std::istream& in);

} // namespace gnnrec
