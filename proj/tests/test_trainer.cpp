#include "doctest.h"

#include "synthetic.hpp"

#include "gnnrec/error.hpp"
#include "gnnrec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

using namespace gnnrec;

namespace {

InteractionGraph synthetic_graph(std::size_t users) {
    testing::SyntheticSpec spec;
    spec.users = users;
    std::istringstream in(testing::synthetic_movielens(spec));
    return to_implicit(parse_movielens(in));
}

std::vector<Matrix> snapshot(GnnModel& m) {
    std::vector<Matrix> out;
    for (auto* p : m.all_parameters()) out.push_back(p->value);
    return out;
}

bool bit_identical(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (a[k].rows() != b[k].rows() || a[k].cols() != b[k].cols() ||
            !std::equal(a[k].flat().begin(), a[k].flat().end(), b[k].flat().begin()))
            return false;
    return true;
}

} // namespace

TEST_CASE("sample_negatives") {
    const std::vector<Edge> edges{{0, 0, 1}, {0, 1, 1}, {0, 2, 1}, {1, 3, 1}, {2, 0, 1}, {2, 1, 1}, {2, 2, 1}, {2, 3, 1}};
    const auto g = InteractionGraph::from_edges(3, 4, 1, edges);

    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) CHECK(sample_negatives(g, 0, 1, rng) == std::vector<Index>{3});
    CHECK_THROWS_AS(sample_negatives(g, 2, 1, rng), SamplingError);
    CHECK_THROWS_AS(sample_negatives(g, 0, 2, rng), SamplingError);

    for (std::size_t n : {1, 2, 3}) {
        Rng a(5), b(5);
        const auto first = sample_negatives(g, 1, n, a);
        CHECK(first == sample_negatives(g, 1, n, b));
        CHECK(first.size() == n);
        auto sorted = first;
        std::sort(sorted.begin(), sorted.end());
        CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
        for (auto i : first) CHECK_FALSE(g.has_edge(1, i));
    }

    const auto big = synthetic_graph(40);
    Rng r(9);
    for (Index u = 0; u < static_cast<Index>(big.n_users()); ++u)
        for (auto i : sample_negatives(big, u, 5, r)) CHECK_FALSE(big.has_edge(u, i));
}

TEST_CASE("sample_negatives is uniform over unseen items") {
    const std::vector<Edge> edges{{0, 0, 1}, {0, 2, 1}};
    const auto g = InteractionGraph::from_edges(1, 6, 1, edges);
    Rng rng(3);
    std::vector<int> counts(6, 0);
    const int trials = 40000;
    for (int t = 0; t < trials; ++t) counts[static_cast<std::size_t>(sample_negatives(g, 0, 1, rng)[0])] += 1;
    CHECK(counts[0] == 0);
    CHECK(counts[2] == 0);
    for (std::size_t i : {1, 3, 4, 5}) CHECK(std::abs(counts[i] / double(trials) - 0.25) < 0.01);
}

TEST_CASE("training_loss") {
    const std::vector<double> half{0.5};
    CHECK(training_loss(half, half, {}, 0.0) == doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-15));
    CHECK(std::abs(training_loss(half, half, {}, 0.0) - 1.38629) < 1e-5);
    CHECK(training_loss({}, {}, {}, 0.0) == 0.0);

    Parameter zero("w", 2, 3);
    const std::vector<const Parameter*> params{&zero};
    const std::vector<double> pos{0.9, 0.7}, neg{0.2};
    const double data = training_loss(pos, neg, {}, 0.0);
    CHECK(training_loss(pos, neg, params, 3.0) == data);

    zero.value(1, 2) = 0.5;
    double last = data;
    for (double lambda : {0.01, 0.1, 1.0, 10.0}) {
        const double v = training_loss(pos, neg, params, lambda);
        CHECK(v > last);
        last = v;
    }

    const std::vector<double> extremes{0.0, 1.0};
    const double clamped = training_loss(extremes, extremes, {}, 0.0);
    CHECK(std::isfinite(clamped));
    // 1 - (1 - 1e-12) is not exactly 1e-12 in binary floating point.
    CHECK(clamped == doctest::Approx(-std::log(1e-12) - std::log(1.0 - (1.0 - 1e-12))).epsilon(1e-9));
}

TEST_CASE("config validation") {
    TrainingConfig c;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = 0.0;
    CHECK_NOTHROW(c.validate());
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.negatives = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lambda = std::nan("");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
    CHECK(to_string(parse_optimizer("adam")) == "adam");
    CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("make_pair_batches") {
    const auto g = synthetic_graph(30);
    TrainingConfig c;
    c.batch_size = 64;
    c.negatives = 2;
    Rng rng(4);
    const auto batches = make_pair_batches(g, c, rng);
    CHECK(batches.size() == (g.n_edges() + 63) / 64);
    std::vector<Edge> seen;
    for (const auto& b : batches) {
        CHECK(b.size() % 3 == 0);
        CHECK(b.size() <= 64 * 3);
        for (std::size_t k = 0; k < b.size(); k += 3) {
            CHECK(b.labels[k] == 1.0);
            CHECK(g.has_edge(b.users[k], b.items[k]));
            seen.push_back({b.users[k], b.items[k], 0});
            for (std::size_t j = 1; j <= 2; ++j) {
                CHECK(b.labels[k + j] == 0.0);
                CHECK(b.users[k + j] == b.users[k]);
                CHECK_FALSE(g.has_edge(b.users[k + j], b.items[k + j]));
            }
        }
    }
    auto expected = g.edges();
    for (auto& e : expected) e.rating = 0;
    std::sort(seen.begin(), seen.end(), [](const Edge& a, const Edge& b) {
        return std::tie(a.user, a.item) < std::tie(b.user, b.item);
    });
    CHECK(seen == expected);
}

TEST_CASE("learning rate zero leaves parameters bit-identical") {
    const auto g = synthetic_graph(20);
    for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
        GnnModel m(g.n_users(), g.n_items(), g.rating_levels(), ModelConfig{8, 2}, 3);
        const auto before = snapshot(m);
        TrainingConfig c;
        c.learning_rate = 0.0;
        c.optimizer = kind;
        c.epochs = 2;
        c.batch_size = 50;
        const auto records = fit(g, m, c, ImportanceConfig{});
        CHECK(records.size() == 2);
        CHECK(bit_identical(before, snapshot(m)));
    }
}

TEST_CASE("one SGD step moves each parameter by -lr * grad") {
    const std::vector<Edge> edges{{0, 0, 4}};
    const auto g = InteractionGraph::from_edges(1, 2, 5, edges);
    for (auto agg : {Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling}) {
        CAPTURE(to_string(agg));
        GnnModel m(1, 2, 5, ModelConfig{4, 2, agg}, 21);
        Rng bias_rng(22);
        for (auto* p : m.all_parameters())
            if (p->name.ends_with(".b")) xavier_uniform(p->value, bias_rng);
        TrainingConfig c;
        c.optimizer = OptimizerKind::Sgd;
        c.learning_rate = 0.05;
        c.lambda = 1e-2;
        const auto samples = sample_all(g, ImportanceConfig{});

        // Reproduce the single batch train_epoch will draw.
        Rng probe(77);
        const auto batches = make_pair_batches(g, c, probe);
        REQUIRE(batches.size() == 1);
        CHECK(batches[0].items == std::vector<Index>{0, 1});

        GnnModel ref = m;
        auto params = ref.trainable_parameters();
        const auto check = grad_check(
            [&](bool acc) { return ref.objective(samples, batches[0], c.lambda, acc).total; }, params);
        CHECK(check.max_rel_error < 1e-4);

        const auto before = snapshot(m);
        Optimizer opt(c.optimizer, c.learning_rate);
        Rng rng(77);
        const auto record = train_epoch(g, m, samples, c, opt, rng, 1);
        const auto after = snapshot(m);
        const auto ref_params = ref.all_parameters();
        double worst = 0.0;
        for (std::size_t k = 0; k < before.size(); ++k)
            for (std::size_t j = 0; j < before[k].size(); ++j) {
                const double delta = after[k].flat()[j] - before[k].flat()[j];
                const double expect = -c.learning_rate * ref_params[k]->grad.flat()[j];
                worst = std::max(worst, std::abs(delta - expect));
            }
        CHECK(worst < 1e-15);
        CHECK(record.epoch == 1);
        CHECK(record.mean_train_loss > 0.0);
        for (auto* p : m.all_parameters())
            for (double v : p->grad.flat()) CHECK(v == 0.0);
    }
}

TEST_CASE("fit is deterministic and epochs = 0 keeps the initialization") {
    const auto g = synthetic_graph(25);
    TrainingConfig c;
    c.epochs = 3;
    c.batch_size = 64;
    c.seed = 11;
    ImportanceConfig s{5, SampleMode::Proportional, 4};
    GnnModel a(g.n_users(), g.n_items(), g.rating_levels(), ModelConfig{8, 2}, 1);
    GnnModel b(g.n_users(), g.n_items(), g.rating_levels(), ModelConfig{8, 2}, 1);
    const auto init = snapshot(a);
    const auto ra = fit(g, a, c, s);
    const auto rb = fit(g, b, c, s);
    REQUIRE(ra.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
        CHECK(ra[e].epoch == e + 1);
        CHECK(ra[e].mean_train_loss == rb[e].mean_train_loss);
    }
    CHECK(bit_identical(snapshot(a), snapshot(b)));
    CHECK_FALSE(bit_identical(snapshot(a), init));

    GnnModel z(g.n_users(), g.n_items(), g.rating_levels(), ModelConfig{8, 2}, 1);
    c.epochs = 0;
    CHECK(fit(g, z, c, s).empty());
    CHECK(bit_identical(snapshot(z), init));
}

TEST_CASE("training loss falls on clustered data") {
    const auto g = synthetic_graph(50);
    for (auto agg : {Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling}) {
        CAPTURE(to_string(agg));
        ModelConfig mc;
        mc.aggregator = agg;
        GnnModel m(g.n_users(), g.n_items(), g.rating_levels(), mc, 2);
        TrainingConfig c;
        c.epochs = 10;
        const auto records = fit(g, m, c, ImportanceConfig{});
        REQUIRE(records.size() == 10);
        for (const auto& r : records) {
            CHECK(std::isfinite(r.mean_train_loss));
            CHECK(r.mean_train_loss > 0.0);
        }
        CHECK(records[9].mean_train_loss < records[0].mean_train_loss);
    }
}

TEST_CASE("divergence is reported with context") {
    const auto g = synthetic_graph(20);
    GnnModel m(g.n_users(), g.n_items(), g.rating_levels(), ModelConfig{8, 1, Aggregator::Mean}, 1);
    TrainingConfig c;
    c.optimizer = OptimizerKind::Sgd;
    c.learning_rate = 1e300;
    c.epochs = 5;
    c.batch_size = 16;
    try {
        fit(g, m, c, ImportanceConfig{});
        FAIL("expected divergence");
    } catch (const DivergedError& e) {
        const std::string what = e.what();
        CHECK(what.find("epoch") != std::string::npos);
        CHECK(what.find("batch") != std::string::npos);
    }
}

TEST_CASE("train_epoch rejects an empty graph") {
    const auto g = InteractionGraph::from_edges(2, 2, 1, std::vector<Edge>{});
    GnnModel m(2, 2, 1, ModelConfig{4, 1}, 1);
    Optimizer opt(OptimizerKind::Adam, 1e-3);
    Rng rng(1);
    CHECK_THROWS_AS(train_epoch(g, m, sample_all(g, {}), TrainingConfig{}, opt, rng, 1), EmptyInputError);
}

TEST_CASE("loss CSV round trip") {
    const std::vector<LossRecord> records{{1, 0.6931471805599453, 0.25}, {2, 0.123456789012345678, 1.5}};
    std::ostringstream out;
    write_loss_csv(records, out);
    CHECK(out.str().rfind("epoch,mean_loss,wall_time_s\n", 0) == 0);
    std::istringstream in(out.str());
    const auto back = read_loss_csv(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].mean_train_loss == records[0].mean_train_loss);
    CHECK(back[1].mean_train_loss == records[1].mean_train_loss);
    CHECK(back[1].epoch == 2);
    std::istringstream bad("epoch,loss\n1,2\n");
    CHECK_THROWS_AS(read_loss_csv(bad), SchemaError);
    std::istringstream broken("epoch,mean_loss,wall_time_s\n1;2;3\n");
    CHECK_THROWS_AS(read_loss_csv(broken), ParseError);
}
