#include "doctest.h"

#include "synthetic.hpp"

#include "gnnrec/error.hpp"
#include "gnnrec/eval.hpp"
#include "gnnrec/kernels.hpp"

#include <cmath>
#include <map>
#include <sstream>

using namespace gnnrec;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double hits = 0.0;
    double pairs = 0.0;
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = 0; b < s.size(); ++b)
            if (y[a] == 1 && y[b] == 0) {
                pairs += 1.0;
                hits += s[a] > s[b] ? 1.0 : (s[a] == s[b] ? 0.5 : 0.0);
            }
    return hits / pairs;
}

class TableScorer : public Scorer {
public:
    TableScorer(std::size_t users, std::size_t items, std::function<double(Index, Index)> f)
        : users_(users), items_(items), f_(std::move(f)) {}
    std::string name() const override { return "table"; }
    std::size_t n_users() const override { return users_; }
    std::size_t n_items() const override { return items_; }
    double score(Index u, Index i) const override { return f_(u, i); }

private:
    std::size_t users_, items_;
    std::function<double(Index, Index)> f_;
};

} // namespace

TEST_CASE("auc examples") {
    CHECK(auc(std::vector<double>{0.9, 0.8, 0.3}, std::vector<int>{1, 0, 0}) == 1.0);
    CHECK(auc(std::vector<double>{0.4, 0.4, 0.4, 0.4}, std::vector<int>{1, 0, 1, 0}) == 0.5);
    CHECK(auc(std::vector<double>{0.2, 0.8}, std::vector<int>{1, 0}) == 0.0);
    CHECK_THROWS_AS(auc(std::vector<double>{0.2, 0.8}, std::vector<int>{1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(auc(std::vector<double>{0.2}, std::vector<int>{0}), UndefinedMetricError);
    CHECK_THROWS_AS(auc(std::vector<double>{0.2}, std::vector<int>{0, 1}), DimensionError);
}

TEST_CASE("auc equals the pairwise oracle exactly") {
    Rng rng(17);
    for (int inst = 0; inst < 500; ++inst) {
        const std::size_t n = 2 + uniform_index(rng, 199);
        std::vector<double> s(n);
        std::vector<int> y(n);
        const bool coarse = inst % 2 == 0;
        for (std::size_t k = 0; k < n; ++k) {
            s[k] = coarse ? static_cast<double>(uniform_index(rng, 7)) : uniform_real(rng);
            y[k] = uniform_real(rng) < 0.3 ? 1 : 0;
        }
        y[0] = 1;
        y[1] = 0;
        CAPTURE(inst);
        CHECK(auc(s, y) == pairwise_auc(s, y));

        std::vector<double> t(n);
        for (std::size_t k = 0; k < n; ++k) t[k] = std::exp(3.0 * s[k]) - 7.0;
        CHECK(auc(t, y) == auc(s, y));
    }
}

TEST_CASE("ndcg") {
    CHECK(ndcg_at_k(std::vector<int>{1, 0, 0}, 1) == 1.0);
    CHECK(ndcg_at_k(std::vector<int>{0, 1, 0}, 2) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
    CHECK(std::abs(ndcg_at_k(std::vector<int>{0, 1, 0}, 2) - 0.63093) < 1e-5);
    CHECK(ndcg_at_k(std::vector<int>{0, 0, 1}, 2) == 0.0);
    CHECK(ndcg_at_k(std::vector<int>{0, 1}, 10) == doctest::Approx(1.0 / std::log2(3.0)));
    CHECK_THROWS_AS(ndcg_at_k(std::vector<int>{0, 0}, 1), UndefinedMetricError);
    CHECK_THROWS_AS(ndcg_at_k(std::vector<int>{1, 0}, 0), ConfigError);

    Rng rng(5);
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = 2 + uniform_index(rng, 30);
        std::vector<int> rel(n);
        for (auto& r : rel) r = uniform_real(rng) < 0.3;
        rel[uniform_index(rng, n)] = 1;
        for (std::size_t k = 1; k <= n + 1; ++k) {
            CHECK(dcg_at_k(rel, k + 1) >= dcg_at_k(rel, k));
            const double v = ndcg_at_k(rel, k);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0 + 1e-15);
        }
        // Move one relevant item strictly down past an irrelevant one.
        for (std::size_t p = 0; p + 1 < n; ++p) {
            if (rel[p] != 1 || rel[p + 1] != 0) continue;
            auto moved = rel;
            std::swap(moved[p], moved[p + 1]);
            for (std::size_t k = 1; k <= n; ++k) CHECK(ndcg_at_k(moved, k) <= ndcg_at_k(rel, k));
        }
    }
}

TEST_CASE("evaluate: hand fixture") {
    // User 0 ranks its positive against items 3, 4, 5; user 1 ranks each of
    // its two positives against items 0, 1, 2. N equals the unseen pool, so
    // the candidate lists are forced.
    const std::vector<Edge> train_edges{{0, 0, 1}, {0, 1, 1}, {1, 5, 1}, {2, 0, 1}};
    const auto train = InteractionGraph::from_edges(3, 6, 1, train_edges);
    const std::vector<Edge> test{{0, 2, 1}, {1, 3, 1}, {1, 4, 1}};
    const std::vector<std::vector<double>> table{
        {9, 9, 0.5, 0.7, 0.2, 0.5}, {0.1, 0.3, 0.2, 0.4, 0.25, 9}, {0, 0, 0, 0, 0, 0}};
    TableScorer s(3, 6, [&](Index u, Index i) { return table[u][i]; });
    EvalProtocol p;
    p.negatives = 3;
    p.seed = 4;
    const auto r = evaluate(s, train, test, p, "hand");
    // Lists: AUC 0.5 (one loss, one tie, one win), 1, 2/3.
    CHECK(r.auc == doctest::Approx((0.5 + 1.0 + 2.0 / 3.0) / 3.0).epsilon(1e-15));
    const double second = 1.0 / std::log2(3.0);
    CHECK(r.ndcg.at(1) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(r.ndcg.at(2) == doctest::Approx((second + 0.5 * (1.0 + second)) / 2.0).epsilon(1e-15));
    CHECK(r.ndcg.at(10) == r.ndcg.at(2));
    CHECK(r.n_users_evaluated == 2);
    CHECK(r.n_users_skipped == 1);
    CHECK(r.model == "table");
    CHECK(r.dataset == "hand");
    CHECK(r.protocol == "sampled-negatives:N=3;seed=4;ks=1/2/10");

    p.negatives = 4;
    CHECK_THROWS_AS(evaluate(s, train, test, p, "hand"), EvaluationError);
    p.negatives = 3;
    CHECK_THROWS_AS(evaluate(s, train, {}, p, "hand"), EmptyInputError);
    p.ks = {0};
    CHECK_THROWS_AS(evaluate(s, train, test, p, "hand"), ConfigError);
}

namespace {

struct Holdout {
    InteractionGraph train;
    std::vector<Edge> test;
};

Holdout synthetic_holdout(std::size_t users, std::size_t items) {
    testing::SyntheticSpec spec;
    spec.users = users;
    spec.items = items;
    std::istringstream in(testing::synthetic_movielens(spec));
    const auto split = split_train_test(to_implicit(parse_movielens(in)), SplitSpec{0.2, 1});
    return {split.train, split.test};
}

} // namespace

TEST_CASE("evaluate: perfect and random rankers") {
    const auto h = synthetic_holdout(200, 400);
    std::map<std::pair<Index, Index>, bool> held;
    for (const auto& e : h.test) held[{e.user, e.item}] = true;
    const TableScorer perfect(h.train.n_users(), h.train.n_items(),
                              [&](Index u, Index i) { return held.count({u, i}) ? 1.0 : 0.0; });
    const auto r = evaluate(perfect, h.train, h.test, EvalProtocol{}, "synthetic");
    CHECK(r.auc == 1.0);
    for (const auto& [k, v] : r.ndcg) CHECK(v == 1.0);

    const TableScorer noise(h.train.n_users(), h.train.n_items(), [](Index u, Index i) {
        return static_cast<double>(mix_seed((static_cast<std::uint64_t>(u) << 32) ^ static_cast<std::uint64_t>(i)) >> 11);
    });
    const auto n = evaluate(noise, h.train, h.test, EvalProtocol{}, "synthetic");
    CHECK(std::abs(n.auc - 0.5) < 0.02);
    CHECK(n.ndcg.at(1) < 0.05);
}

TEST_CASE("evaluate is seeded and thread independent") {
    const auto h = synthetic_holdout(80, 300);
    GnnModel m(h.train.n_users(), h.train.n_items(), h.train.rating_levels(), ModelConfig{8, 1}, 2);
    const GnnScorer s(m, propagate(h.train, m, ImportanceConfig{}));
    EvalProtocol p;
    p.seed = 9;
    const int saved = kernels::max_threads();
    kernels::set_threads(1);
    const auto a = evaluate(s, h.train, h.test, p, "x");
    kernels::set_threads(4);
    const auto b = evaluate(s, h.train, h.test, p, "x");
    kernels::set_threads(saved);
    CHECK(a.auc == b.auc);
    CHECK(a.ndcg == b.ndcg);
    p.seed = 10;
    CHECK(evaluate(s, h.train, h.test, p, "x").auc != a.auc);
}

TEST_CASE("GNN without propagation scores like matrix factorization") {
    const auto h = synthetic_holdout(60, 200);
    GnnModel g(h.train.n_users(), h.train.n_items(), h.train.rating_levels(), ModelConfig{6, 0}, 3);
    BprModel b(h.train.n_users(), h.train.n_items(), 6, 99);
    b.user_factors.value = g.embeddings().users.value;
    b.item_factors.value = g.embeddings().items.value;
    const GnnScorer gs(g, propagate(h.train, g, ImportanceConfig{}));
    const BprScorer bs(b);
    for (Index u = 0; u < 5; ++u)
        for (Index i = 0; i < 5; ++i) CHECK(gs.score(u, i) == doctest::Approx(bs.score(u, i)).epsilon(1e-15));
    const auto rg = evaluate(gs, h.train, h.test, EvalProtocol{}, "x");
    const auto rb = evaluate(bs, h.train, h.test, EvalProtocol{}, "x");
    CHECK(rg.auc == doctest::Approx(rb.auc).epsilon(1e-12));
    CHECK(rg.ndcg.at(10) == doctest::Approx(rb.ndcg.at(10)).epsilon(1e-12));
    CHECK(rg.model == "gnn");
    CHECK(rb.model == "bpr");

    const std::vector<Edge> bad{{0, static_cast<Index>(h.train.n_items()), 1}};
    CHECK_THROWS_AS(evaluate(bs, h.train, bad, EvalProtocol{}, "x"), BoundsError);
}

TEST_CASE("report CSV and comparison") {
    MetricsReport a{"gnn", "ml-1m", 0.77, {{1, 0.5}, {2, 0.6}, {10, 0.7}}, 10, 0, "sampled-negatives:N=99;seed=0;ks=1/2/10"};
    MetricsReport b = a;
    b.model = "bpr";
    b.auc = 0.73;
    CHECK(report_header({1, 2, 10}) == "model,dataset,auc,ndcg@1,ndcg@2,ndcg@10,n_users,protocol");

    std::ostringstream out;
    write_report_csv(std::vector<MetricsReport>{a}, out);
    CHECK(out.str() ==
          "model,dataset,auc,ndcg@1,ndcg@2,ndcg@10,n_users,protocol\n"
          "gnn,ml-1m,0.770000,0.500000,0.600000,0.700000,10,sampled-negatives:N=99;seed=0;ks=1/2/10\n");
    std::istringstream in(out.str());
    const auto back = read_report_csv(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].model == "gnn");
    CHECK(back[0].ndcg.at(10) == 0.7);
    CHECK(back[0].n_users_evaluated == 10);

    const std::vector<std::vector<MetricsReport>> one{{a}};
    const auto passthrough = merge_reports(one);
    REQUIRE(passthrough.size() == 1);
    CHECK(passthrough[0].auc == a.auc);

    const std::vector<std::vector<MetricsReport>> two{{a}, {b}};
    const auto merged = merge_reports(two);
    REQUIRE(merged.size() == 2);
    CHECK(merged[0].model == "gnn");
    CHECK(merged[1].model == "bpr");
    std::ostringstream table;
    print_comparison(merged, table);
    const auto text = table.str();
    CHECK(text.find("NDCG@10") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    CHECK(text.find("0.7700") != std::string::npos);
    CHECK(text.find("0.7300") != std::string::npos);

    MetricsReport c = a;
    c.ndcg.erase(10);
    const std::vector<std::vector<MetricsReport>> mixed{{a}, {c}};
    CHECK_THROWS_AS(merge_reports(mixed), SchemaError);

    std::istringstream bad_header("model,auc\n");
    CHECK_THROWS_AS(read_report_csv(bad_header), SchemaError);
    std::istringstream short_row("model,dataset,auc,ndcg@1,n_users,protocol\ngnn,x,0.5\n");
    CHECK_THROWS_AS(read_report_csv(short_row), SchemaError);
}
