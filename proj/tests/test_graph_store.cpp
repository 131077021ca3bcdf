#include "doctest.h"

#include "gnnrec/error.hpp"
#include "gnnrec/graph_store.hpp"

#include <cmath>
#include <sstream>

using namespace gnnrec;

namespace {

RatingsTable ml(const std::string& text, ParseOptions opts = {}) {
    std::istringstream in(text);
    return parse_movielens(in, opts);
}

const char* kThree = "1::10::5::0\n1::11::3::0\n2::10::4::0\n";

} // namespace

TEST_CASE("movielens three-line fixture") {
    const auto t = ml(kThree);
    CHECK(t.records.size() == 3);
    const auto g = to_implicit(t);
    CHECK(g.n_users() == 2);
    CHECK(g.n_items() == 2);
    CHECK(g.n_edges() == 3);
    CHECK(t.malformed_lines == 0);
}

TEST_CASE("empty inputs") {
    CHECK(ml("").records.empty());
    std::istringstream in("");
    CHECK(parse_amazon(in).records.empty());
    CHECK_THROWS_AS(to_implicit(RatingsTable{}), EmptyInputError);
}

TEST_CASE("amazon fixture maps keys") {
    std::istringstream in("A1,B7,5.0,1360000000\nA2,B8,3.0,1360000001\n");
    const auto t = parse_amazon(in);
    REQUIRE(t.records.size() == 2);
    CHECK(t.records[0].user == "A1");
    CHECK(t.records[0].item == "B7");
    CHECK(t.records[0].rating == 5);
    CHECK(t.records[1].user == "A2");
    CHECK(t.records[1].rating == 3);
    const auto g = to_implicit(t);
    CHECK(g.user_ids().key(0) == "A1");
    CHECK(g.item_ids().key(1) == "B8");
}

TEST_CASE("malformed lines") {
    const std::string text = "1::10::5::0\nnot a line\n2::10::9::0\n";
    const auto lax = ml(text);
    CHECK(lax.records.size() == 1);
    CHECK(lax.malformed_lines == 2);
    CHECK(lax.first_malformed_line == 2);
    try {
        ml(text, ParseOptions{true, 5});
        FAIL("expected parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_movielens(std::filesystem::path("/nonexistent/ratings.dat")), IoError);
}

TEST_CASE("duplicates keep the latest rating") {
    const auto t = ml("1::10::2::5\n1::10::4::9\n1::10::3::7\n");
    REQUIRE(t.records.size() == 1);
    CHECK(t.records[0].rating == 4);
}

TEST_CASE("filter_min_interactions") {
    const auto t = ml("1::1::5::0\n1::2::5::0\n1::3::5::0\n1::4::5::0\n1::5::5::0\n2::1::5::0\n2::2::5::0\n");
    CHECK(filter_min_interactions(t, 0).records.size() == 7);
    const auto f = filter_min_interactions(t, 5);
    CHECK(f.records.size() == 5);
    for (const auto& r : f.records) CHECK(r.user == "1");
    CHECK(filter_min_interactions(t, 6).records.empty());
}

TEST_CASE("graph structure and neighbors") {
    const auto g = to_implicit(ml(kThree));
    const auto u1 = g.neighbors(Side::User, 0);
    REQUIRE(u1.size() == 2);
    CHECK(u1[0] == Neighbor{*g.item_ids().find("10"), 5});
    CHECK(u1[1] == Neighbor{*g.item_ids().find("11"), 3});
    for (Index u = 0; u < static_cast<Index>(g.n_users()); ++u)
        for (const auto& nb : g.neighbors(Side::User, u)) {
            bool back = false;
            for (const auto& m : g.neighbors(Side::Item, nb.index)) back |= m.index == u && m.rating == nb.rating;
            CHECK(back);
        }
    CHECK_THROWS_AS(g.neighbors(Side::User, 5), BoundsError);
    CHECK_THROWS_AS(g.neighbors(Side::Item, -1), BoundsError);

    std::vector<Edge> edges{{0, 0, 1}};
    const auto iso = InteractionGraph::from_edges(2, 1, 1, edges);
    CHECK(iso.neighbors(Side::User, 1).empty());
    CHECK_THROWS(InteractionGraph::from_edges(1, 1, 1, std::vector<Edge>{{0, 0, 1}, {0, 0, 1}}));
}

TEST_CASE("density") {
    const std::vector<Edge> full{{0, 0, 1}, {0, 1, 1}, {1, 0, 1}, {1, 1, 1}};
    CHECK(density(InteractionGraph::from_edges(2, 2, 1, full)) == 1.0);
    const std::vector<Edge> half{{0, 0, 1}, {0, 1, 1}, {1, 2, 1}};
    CHECK(density(InteractionGraph::from_edges(2, 3, 1, half)) == 0.5);
    CHECK_THROWS_AS(density(InteractionGraph::from_edges(0, 3, 1, {})), DegenerateError);
    const auto single = to_implicit(ml("7::9::3::0\n"));
    CHECK(single.n_users() == 1);
    CHECK(single.n_items() == 1);
    CHECK(single.n_edges() == 1);
}

TEST_CASE("split_train_test") {
    std::vector<Edge> edges;
    for (Index i = 0; i < 10; ++i) edges.push_back({0, i, 5});
    edges.push_back({1, 0, 3});
    const auto g = InteractionGraph::from_edges(2, 10, 5, edges);
    const auto s = split_train_test(g, {0.2, 42});
    CHECK(s.test.size() == 2);
    for (const auto& e : s.test) CHECK(e.user == 0);
    CHECK(s.train.degree(Side::User, 0) == 8);
    CHECK(s.train.degree(Side::User, 1) == 1);
    CHECK(s.train.n_edges() + s.test.size() == g.n_edges());
    for (const auto& e : s.test) CHECK_FALSE(s.train.has_edge(e.user, e.item));

    const auto again = split_train_test(g, {0.2, 42});
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
}

TEST_CASE("snapshots round-trip") {
    const auto g = to_implicit(ml(kThree));
    std::stringstream buf;
    write_graph_snapshot(g, buf);
    const auto back = read_graph_snapshot(buf, g.user_ids(), g.item_ids());
    CHECK(back == g);

    std::stringstream ids;
    write_id_map(g.item_ids(), ids);
    CHECK(read_id_map(ids) == g.item_ids());

    const auto edges = g.edges();
    std::stringstream el;
    write_edge_list(edges, el);
    CHECK(read_edge_list(el) == edges);
}

TEST_CASE("subsample_users is seeded") {
    std::string text;
    for (int u = 1; u <= 50; ++u) text += std::to_string(u) + "::1::5::0\n";
    const auto t = ml(text);
    const auto a = subsample_users(t, 0.2, 3);
    const auto b = subsample_users(t, 0.2, 3);
    CHECK(a.records.size() == 10);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t k = 0; k < a.records.size(); ++k) CHECK(a.records[k].user == b.records[k].user);
}
