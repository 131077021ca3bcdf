#include "gnnrec/graph_store.hpp"

#include "gnnrec/error.hpp"
#include "gnnrec/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string_view>

namespace gnnrec {

namespace {

template <class T>
bool parse_number(std::string_view text, T& out) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
    if (text.empty()) return false;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

std::vector<std::string_view> split(std::string_view line, std::string_view delim) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + delim.size();
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"')) s.remove_suffix(1);
    return s;
}

// Returns false for a malformed line.
using LineParser = bool (*)(std::string_view, const ParseOptions&, RatingRecord&);

bool parse_movielens_line(std::string_view line, const ParseOptions& options, RatingRecord& rec) {
    const auto fields = split(line, "::");
    if (fields.size() != 4) return false;
    long long user = 0, item = 0;
    int rating = 0;
    std::int64_t ts = 0;
    if (!parse_number(fields[0], user) || !parse_number(fields[1], item) ||
        !parse_number(fields[2], rating) || !parse_number(fields[3], ts))
        return false;
    if (rating < 1 || rating > options.max_rating) return false;
    rec.user = std::to_string(user);
    rec.item = std::to_string(item);
    rec.rating = rating;
    rec.timestamp = ts;
    return true;
}

bool parse_amazon_line(std::string_view line, const ParseOptions& options, RatingRecord& rec) {
    const auto fields = split(line, ",");
    if (fields.size() != 4) return false;
    const auto user = trim(fields[0]);
    const auto item = trim(fields[1]);
    if (user.empty() || item.empty()) return false;
    double rating = 0.0;
    std::int64_t ts = 0;
    if (!parse_number(trim(fields[2]), rating) || !std::isfinite(rating)) return false;
    const auto ts_text = trim(fields[3]);
    if (!parse_number(ts_text, ts)) {
        double ts_real = 0.0;
        if (!parse_number(ts_text, ts_real) || !std::isfinite(ts_real)) return false;
        ts = static_cast<std::int64_t>(ts_real);
    }
    const int level = static_cast<int>(std::trunc(rating));
    if (level < 1 || level > options.max_rating) return false;
    rec.user.assign(user);
    rec.item.assign(item);
    rec.rating = level;
    rec.timestamp = ts;
    return true;
}

RatingsTable parse_stream(std::istream& in, const ParseOptions& options, LineParser parse_line,
                          const std::string& source) {
    if (options.max_rating < 1) throw ParseError("max_rating must be >= 1");
    RatingsTable table;
    table.max_rating = options.max_rating;
    std::string line;
    std::size_t line_no = 0;
    RatingRecord rec;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
        if (view.find_first_not_of(" \t") == std::string_view::npos) continue;
        if (parse_line(view, options, rec)) {
            table.records.push_back(rec);
        } else {
            if (table.malformed_lines == 0) table.first_malformed_line = line_no;
            ++table.malformed_lines;
        }
    }
    if (in.bad()) throw IoError("read failure in " + source);
    if (options.strict && table.malformed_lines > 0) {
        throw ParseError(source + ": " + std::to_string(table.malformed_lines) +
                         " malformed line(s); first at line " + std::to_string(table.first_malformed_line));
    }
    deduplicate(table);
    return table;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

} // namespace

RatingsTable parse_movielens(std::istream& in, const ParseOptions& options) {
    return parse_stream(in, options, parse_movielens_line, "<stream>");
}

RatingsTable parse_movielens(const std::filesystem::path& path, const ParseOptions& options) {
    auto in = open_input(path);
    return parse_stream(in, options, parse_movielens_line, path.string());
}

RatingsTable parse_amazon(std::istream& in, const ParseOptions& options) {
    return parse_stream(in, options, parse_amazon_line, "<stream>");
}

RatingsTable parse_amazon(const std::filesystem::path& path, const ParseOptions& options) {
    auto in = open_input(path);
    return parse_stream(in, options, parse_amazon_line, path.string());
}

void deduplicate(RatingsTable& table) {
    struct PairHash {
        std::size_t operator()(const std::pair<std::string_view, std::string_view>& p) const {
            return std::hash<std::string_view>{}(p.first) * 31 + std::hash<std::string_view>{}(p.second);
        }
    };
    std::unordered_map<std::pair<std::string_view, std::string_view>, std::size_t, PairHash> first_slot;
    first_slot.reserve(table.records.size());
    std::vector<bool> keep(table.records.size(), true);
    bool any_duplicate = false;
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        const auto& rec = table.records[i];
        auto [it, inserted] = first_slot.try_emplace({rec.user, rec.item}, i);
        if (inserted) continue;
        any_duplicate = true;
        keep[i] = false;
        auto& kept = table.records[it->second];
        if (rec.timestamp >= kept.timestamp) {
            kept.rating = rec.rating;
            kept.timestamp = rec.timestamp;
        }
    }
    if (!any_duplicate) return;
    std::vector<RatingRecord> out;
    out.reserve(first_slot.size());
    for (std::size_t i = 0; i < table.records.size(); ++i) {
        if (keep[i]) out.push_back(std::move(table.records[i]));
    }
    table.records = std::move(out);
}

RatingsTable filter_min_interactions(const RatingsTable& table, std::size_t k) {
    RatingsTable out;
    out.max_rating = table.max_rating;
    out.malformed_lines = table.malformed_lines;
    out.first_malformed_line = table.first_malformed_line;
    std::unordered_map<std::string_view, std::size_t> counts;
    for (const auto& rec : table.records) ++counts[rec.user];
    for (const auto& rec : table.records) {
        if (counts[rec.user] >= k) out.records.push_back(rec);
    }
    return out;
}

RatingsTable subsample_users(const RatingsTable& table, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("user fraction must lie in (0, 1]");
    if (fraction == 1.0) return table;
    IdMap users;
    for (const auto& rec : table.records) users.intern(rec.user);
    std::vector<Index> order(users.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
    Rng rng(seed);
    shuffle(order.begin(), order.end(), rng);
    const auto n_keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(order.size())));
    std::vector<bool> keep(users.size(), false);
    for (std::size_t i = 0; i < n_keep; ++i) keep[static_cast<std::size_t>(order[i])] = true;
    RatingsTable out;
    out.max_rating = table.max_rating;
    for (const auto& rec : table.records) {
        if (keep[static_cast<std::size_t>(*users.find(rec.user))]) out.records.push_back(rec);
    }
    return out;
}

Index IdMap::intern(const std::string& key) {
    auto [it, inserted] = lookup_.try_emplace(key, static_cast<Index>(keys_.size()));
    if (inserted) keys_.push_back(key);
    return it->second;
}

std::optional<Index> IdMap::find(const std::string& key) const {
    const auto it = lookup_.find(key);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

const std::string& IdMap::key(Index index) const {
    if (index < 0 || static_cast<std::size_t>(index) >= keys_.size())
        throw BoundsError("id index " + std::to_string(index) + " out of range");
    return keys_[static_cast<std::size_t>(index)];
}

InteractionGraph InteractionGraph::from_edges(std::size_t n_users, std::size_t n_items, int rating_levels,
                                              std::span<const Edge> edges, IdMap users, IdMap items) {
    if (rating_levels < 1) throw DimensionError("rating_levels must be >= 1");
    if ((users.size() != 0 && users.size() != n_users) || (items.size() != 0 && items.size() != n_items))
        throw DimensionError("id map size does not match node count");
    InteractionGraph g;
    g.rating_levels_ = rating_levels;
    g.user_offsets_.assign(n_users + 1, 0);
    g.item_offsets_.assign(n_items + 1, 0);
    for (const auto& e : edges) {
        if (e.user < 0 || static_cast<std::size_t>(e.user) >= n_users || e.item < 0 ||
            static_cast<std::size_t>(e.item) >= n_items)
            throw BoundsError("edge (" + std::to_string(e.user) + "," + std::to_string(e.item) + ") out of range");
        if (e.rating < 1 || e.rating > rating_levels)
            throw BoundsError("edge rating " + std::to_string(e.rating) + " outside 1.." + std::to_string(rating_levels));
        ++g.user_offsets_[static_cast<std::size_t>(e.user) + 1];
        ++g.item_offsets_[static_cast<std::size_t>(e.item) + 1];
    }
    for (std::size_t u = 0; u < n_users; ++u) g.user_offsets_[u + 1] += g.user_offsets_[u];
    for (std::size_t i = 0; i < n_items; ++i) g.item_offsets_[i + 1] += g.item_offsets_[i];
    g.user_adj_.resize(edges.size());
    g.item_adj_.resize(edges.size());
    auto ufill = std::vector<std::size_t>(g.user_offsets_.begin(), g.user_offsets_.end() - 1);
    auto ifill = std::vector<std::size_t>(g.item_offsets_.begin(), g.item_offsets_.end() - 1);
    for (const auto& e : edges) {
        g.user_adj_[ufill[static_cast<std::size_t>(e.user)]++] = {e.item, e.rating};
        g.item_adj_[ifill[static_cast<std::size_t>(e.item)]++] = {e.user, e.rating};
    }
    const auto by_index = [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; };
    for (std::size_t u = 0; u < n_users; ++u) {
        auto first = g.user_adj_.begin() + static_cast<std::ptrdiff_t>(g.user_offsets_[u]);
        auto last = g.user_adj_.begin() + static_cast<std::ptrdiff_t>(g.user_offsets_[u + 1]);
        std::sort(first, last, by_index);
        if (std::adjacent_find(first, last, [](const Neighbor& a, const Neighbor& b) {
                return a.index == b.index;
            }) != last)
            throw ParseError("duplicate edge for user " + std::to_string(u));
    }
    for (std::size_t i = 0; i < n_items; ++i) {
        std::sort(g.item_adj_.begin() + static_cast<std::ptrdiff_t>(g.item_offsets_[i]),
                  g.item_adj_.begin() + static_cast<std::ptrdiff_t>(g.item_offsets_[i + 1]), by_index);
    }
    g.user_ids_ = std::move(users);
    g.item_ids_ = std::move(items);
    return g;
}

std::span<const Neighbor> InteractionGraph::neighbors(Side side, Index index) const {
    const auto& offsets = side == Side::User ? user_offsets_ : item_offsets_;
    const auto& adj = side == Side::User ? user_adj_ : item_adj_;
    const std::size_t n = offsets.empty() ? 0 : offsets.size() - 1;
    if (index < 0 || static_cast<std::size_t>(index) >= n)
        throw BoundsError(std::string(side == Side::User ? "user" : "item") + " index " + std::to_string(index) +
                          " out of range [0, " + std::to_string(n) + ")");
    const auto i = static_cast<std::size_t>(index);
    return {adj.data() + offsets[i], offsets[i + 1] - offsets[i]};
}

bool InteractionGraph::has_edge(Index user, Index item) const {
    const auto adj = neighbors(Side::User, user);
    return std::binary_search(adj.begin(), adj.end(), Neighbor{item, 0},
                              [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; });
}

std::vector<Edge> InteractionGraph::edges() const {
    std::vector<Edge> out;
    out.reserve(n_edges());
    for (std::size_t u = 0; u < n_users(); ++u) {
        for (std::size_t k = user_offsets_[u]; k < user_offsets_[u + 1]; ++k)
            out.push_back({static_cast<Index>(u), user_adj_[k].index, user_adj_[k].rating});
    }
    return out;
}

InteractionGraph to_implicit(const RatingsTable& table) {
    if (table.records.empty()) throw EmptyInputError("ratings table is empty");
    IdMap users, items;
    std::vector<Edge> edges;
    edges.reserve(table.records.size());
    int max_level = 1;
    for (const auto& rec : table.records) {
        edges.push_back({users.intern(rec.user), items.intern(rec.item), rec.rating});
        max_level = std::max(max_level, rec.rating);
    }
    const int levels = std::max(table.max_rating, max_level);
    const auto n_users = users.size();
    const auto n_items = items.size();
    return InteractionGraph::from_edges(n_users, n_items, levels, edges, std::move(users), std::move(items));
}

double density(const InteractionGraph& graph) {
    if (graph.n_users() == 0 || graph.n_items() == 0)
        throw DegenerateError("density undefined for a graph with zero users or items");
    return static_cast<double>(graph.n_edges()) /
           (static_cast<double>(graph.n_users()) * static_cast<double>(graph.n_items()));
}

TrainTestSplit split_train_test(const InteractionGraph& graph, const SplitSpec& spec) {
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
        throw ConfigError("test_fraction must lie in (0, 1)");
    std::vector<Edge> train_edges;
    std::vector<Edge> test_edges;
    train_edges.reserve(graph.n_edges());
    std::vector<Index> order;
    for (std::size_t u = 0; u < graph.n_users(); ++u) {
        const auto user = static_cast<Index>(u);
        const auto adj = graph.neighbors(Side::User, user);
        const std::size_t deg = adj.size();
        std::size_t holdout = 0;
        if (deg >= 2) {
            // The epsilon keeps exact products like 0.1 * 30 from rounding up.
            holdout = static_cast<std::size_t>(std::ceil(spec.test_fraction * static_cast<double>(deg) - 1e-9));
            holdout = std::min(holdout, deg - 1);
        }
        order.resize(deg);
        for (std::size_t k = 0; k < deg; ++k) order[k] = static_cast<Index>(k);
        Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(u)));
        shuffle(order.begin(), order.end(), rng);
        std::vector<bool> held(deg, false);
        for (std::size_t k = 0; k < holdout; ++k) held[static_cast<std::size_t>(order[k])] = true;
        for (std::size_t k = 0; k < deg; ++k) {
            const Edge e{user, adj[k].index, adj[k].rating};
            (held[k] ? test_edges : train_edges).push_back(e);
        }
    }
    TrainTestSplit out;
    out.train = InteractionGraph::from_edges(graph.n_users(), graph.n_items(), graph.rating_levels(), train_edges,
                                             graph.user_ids(), graph.item_ids());
    out.test = std::move(test_edges);
    return out;
}

namespace {
constexpr std::string_view kGraphHeader = "gnnrec-graph v1";
}

void write_graph_snapshot(const InteractionGraph& graph, std::ostream& out) {
    out << kGraphHeader << '\n';
    out << "users " << graph.n_users() << " items " << graph.n_items() << " edges " << graph.n_edges()
        << " levels " << graph.rating_levels() << '\n';
    for (std::size_t u = 0; u < graph.n_users(); ++u) {
        out << u << '\t';
        bool first = true;
        for (const auto& n : graph.neighbors(Side::User, static_cast<Index>(u))) {
            if (!first) out << ',';
            out << n.index << ':' << n.rating;
            first = false;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed to write graph snapshot");
}

InteractionGraph read_graph_snapshot(std::istream& in, IdMap users, IdMap items) {
    std::string line;
    if (!std::getline(in, line) || line != kGraphHeader)
        throw ParseError("graph snapshot: missing or unsupported header");
    if (!std::getline(in, line)) throw ParseError("graph snapshot: missing counts line");
    std::istringstream counts(line);
    std::string w1, w2, w3, w4;
    std::size_t n_users = 0, n_items = 0, n_edges = 0;
    int levels = 0;
    if (!(counts >> w1 >> n_users >> w2 >> n_items >> w3 >> n_edges >> w4 >> levels) || w1 != "users" ||
        w2 != "items" || w3 != "edges" || w4 != "levels")
        throw ParseError("graph snapshot: malformed counts line");
    std::vector<Edge> edges;
    edges.reserve(n_edges);
    for (std::size_t u = 0; u < n_users; ++u) {
        if (!std::getline(in, line)) throw ParseError("graph snapshot: truncated at user " + std::to_string(u));
        const auto tab = line.find('\t');
        std::size_t user = 0;
        if (tab == std::string::npos || !parse_number(std::string_view(line).substr(0, tab), user) || user != u)
            throw ParseError("graph snapshot: bad adjacency line for user " + std::to_string(u));
        const auto rest = std::string_view(line).substr(tab + 1);
        if (rest.empty()) continue;
        for (auto entry : split(rest, ",")) {
            const auto colon = entry.find(':');
            Index item = 0;
            int rating = 0;
            if (colon == std::string_view::npos || !parse_number(entry.substr(0, colon), item) ||
                !parse_number(entry.substr(colon + 1), rating))
                throw ParseError("graph snapshot: bad entry for user " + std::to_string(u));
            edges.push_back({static_cast<Index>(u), item, rating});
        }
    }
    if (edges.size() != n_edges) throw ParseError("graph snapshot: edge count mismatch");
    return InteractionGraph::from_edges(n_users, n_items, levels, edges, std::move(users), std::move(items));
}

void write_id_map(const IdMap& ids, std::ostream& out) {
    for (std::size_t i = 0; i < ids.size(); ++i) out << i << '\t' << ids.keys()[i] << '\n';
    if (!out) throw IoError("failed to write id map");
}

IdMap read_id_map(std::istream& in) {
    IdMap ids;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        std::size_t index = 0;
        if (tab == std::string::npos || !parse_number(std::string_view(line).substr(0, tab), index) ||
            index != ids.size())
            throw ParseError("id map: malformed line " + std::to_string(ids.size() + 1));
        ids.intern(line.substr(tab + 1));
        if (ids.size() != index + 1) throw ParseError("id map: duplicate key " + line.substr(tab + 1));
    }
    return ids;
}

void write_edge_list(std::span<const Edge> edges, std::ostream& out) {
    for (const auto& e : edges) out << e.user << '\t' << e.item << '\t' << e.rating << '\n';
    if (!out) throw IoError("failed to write edge list");
}

std::vector<Edge> read_edge_list(std::istream& in) {
    std::vector<Edge> edges;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, "\t");
        Edge e{};
        if (f.size() != 3 || !parse_number(f[0], e.user) || !parse_number(f[1], e.item) ||
            !parse_number(f[2], e.rating))
            throw ParseError("edge list: malformed line " + std::to_string(edges.size() + 1));
        edges.push_back(e);
    }
    return edges;
}

} // namespace gnnrec
