#include "doctest.h"

#include "gnnrec/error.hpp"
#include "gnnrec/kernels.hpp"
#include "gnnrec/model.hpp"

#include <algorithm>
#include <cmath>

using namespace gnnrec;

namespace {

void set_identity(Affine& a) {
    a.weight.value.fill(0.0);
    a.bias.value.fill(0.0);
    for (std::size_t k = 0; k < std::min(a.in(), a.out()); ++k) a.weight.value(k, k) = 1.0;
}

// 5 users x 5 items, ratings 1..5, with an isolated user and degrees both
// above and below the sample size.
InteractionGraph small_graph() {
    const std::vector<Edge> edges{{0, 0, 5}, {0, 1, 3}, {0, 2, 4}, {0, 3, 1}, {1, 0, 2}, {1, 4, 5},
                                  {2, 1, 4}, {2, 2, 2}, {2, 4, 3}, {3, 3, 5}, {3, 0, 4}};
    return InteractionGraph::from_edges(5, 5, 5, edges);
}

PairBatch small_batch() {
    PairBatch b;
    b.push(0, 0, 1);
    b.push(0, 4, 0);
    b.push(2, 1, 1);
    b.push(4, 2, 0);
    b.push(3, 3, 1);
    b.push(1, 2, 0);
    return b;
}

void zero_all(GnnModel& m) {
    for (auto* p : m.all_parameters()) p->zero_grad();
}

// Biases start at zero, which puts exact zeros into ReLU and max-pool inputs
// where the objective has kinks; finite differences need a smooth point.
void randomize_biases(GnnModel& m, std::uint64_t seed) {
    Rng rng(seed);
    for (auto* p : m.all_parameters())
        if (p->name.ends_with(".b")) xavier_uniform(p->value, rng);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a.flat()[k] - b.flat()[k]));
    return d;
}

} // namespace

TEST_CASE("embed_lookup") {
    GnnModel m(3, 4, 5, ModelConfig{4, 1}, 9);
    const auto& t = m.embeddings();
    const auto row = embed_lookup(t, EmbeddingKind::Item, 2);
    CHECK(row == embed_lookup(t, EmbeddingKind::Item, 2));
    const double bound = xavier_bound(4, 4);
    for (double v : row) CHECK(std::abs(v) <= bound);
    CHECK_THROWS_AS(embed_lookup(t, EmbeddingKind::User, 3), BoundsError);
    CHECK_THROWS_AS(embed_lookup(t, EmbeddingKind::Rating, -1), BoundsError);
}

TEST_CASE("fuse_interaction") {
    SideLayer layer("t", 2);
    set_identity(layer.fuse_in);
    set_identity(layer.fuse_out);
    CHECK(fuse_interaction(Vector{1.5, -2}, Vector{9, 9}, layer) == Vector{1.5, 0});

    layer.fuse_out.weight.value.fill(0.0);
    layer.fuse_out.bias.value = Matrix(1, 2, {0.25, -3});
    CHECK(fuse_interaction(Vector{4, 1}, Vector{-1, 2}, layer) == Vector{0.25, -3});

    Rng rng(2);
    SideLayer r("r", 3);
    for (auto* a : {&r.fuse_in, &r.fuse_out}) {
        xavier_uniform(a->weight.value, rng);
        xavier_uniform(a->bias.value, rng);
    }
    const Vector n{0.3, -0.7, 1.1}, e{0.2, 0.5, -0.4};
    // Independent two-layer evaluation.
    Vector hidden(3), expect(3);
    for (std::size_t o = 0; o < 3; ++o) {
        double s = r.fuse_in.bias.value(0, o);
        for (std::size_t k = 0; k < 3; ++k) s += r.fuse_in.weight.value(o, k) * n[k] + r.fuse_in.weight.value(o, 3 + k) * e[k];
        hidden[o] = s > 0 ? s : 0;
    }
    for (std::size_t o = 0; o < 3; ++o) {
        double s = r.fuse_out.bias.value(0, o);
        for (std::size_t k = 0; k < 3; ++k) s += r.fuse_out.weight.value(o, k) * hidden[k];
        expect[o] = s;
    }
    const auto got = fuse_interaction(n, e, r);
    for (std::size_t o = 0; o < 3; ++o) CHECK(got[o] == doctest::Approx(expect[o]).epsilon(1e-14));
    CHECK_THROWS_AS(fuse_interaction(Vector{1, 2, 3}, Vector{1, 2}, r), DimensionError);
}

TEST_CASE("attention_score") {
    SideLayer layer("t", 1);
    layer.attn_out.bias.value(0, 0) = 0.75;
    CHECK(attention_score(Vector{3}, Vector{-2}, layer) == 0.75);

    layer.attn_hidden.weight.value = Matrix(1, 2, {1, 1});
    layer.attn_out.weight.value(0, 0) = 1.0;
    layer.attn_out.bias.value(0, 0) = 0.0;
    CHECK(attention_score(Vector{1}, Vector{1}, layer) == 2.0);
    CHECK_THROWS_AS(attention_score(Vector{1, 2}, Vector{1}, layer), DimensionError);
}

TEST_CASE("attention_weights") {
    for (double v : attention_weights(Vector{0.3, 0.3, 0.3, 0.3})) CHECK(v == 0.25);
    const auto w = attention_weights(Vector{1, 2});
    CHECK(w[0] == doctest::Approx(0.26894).epsilon(1e-5));
    CHECK(w[1] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(attention_weights(Vector{-4.2}) == Vector{1.0});
}

TEST_CASE("aggregators") {
    Affine id("id", 2, 2);
    set_identity(id);
    CHECK(aggregate_mean(std::vector<Vector>{{-1, 3}}, id) == Vector{0, 3});
    CHECK(aggregate_mean(std::vector<Vector>{{2, 0}, {0, 2}}, id) == Vector{1, 1});
    CHECK(aggregate_attention(std::vector<Vector>{{1, 0}, {0, 1}}, Vector{0.25, 0.75}, id) == Vector{0.25, 0.75});
    CHECK(aggregate_attention(std::vector<Vector>{{3, 1}, {9, 9}}, Vector{1, 0}, id) == Vector{3, 1});
    CHECK_THROWS_AS(aggregate_attention(std::vector<Vector>{{1, 0}}, Vector{0.5, 0.5}, id), DimensionError);

    Affine zero_self("z", 2, 2);
    set_identity(zero_self);
    const Vector origin{0, 0};
    CHECK(aggregate_pooling(origin, std::vector<Vector>{{-1, 2}}, id, id) == Vector{0, 2});
    CHECK(aggregate_pooling(origin, std::vector<Vector>{{1, 0}, {0, 1}}, id, id) == Vector{1, 1});
    CHECK(aggregate_pooling(Vector{0.5, -1}, {}, id, id) == Vector{0.5, 0});
    const std::vector<Vector> once{{0.3, -0.2}, {0.1, 0.9}};
    const std::vector<Vector> twice{{0.3, -0.2}, {0.1, 0.9}, {0.3, -0.2}, {0.1, 0.9}};
    CHECK(aggregate_pooling(origin, once, id, id) == aggregate_pooling(origin, twice, id, id));

    CHECK(aggregate_user_neighbors(Vector{-1, 2}, {}, {}, id) == Vector{0, 2});
    const std::vector<Vector> nb{{3, 0}, {0, 3}};
    const auto eq = aggregate_user_neighbors(Vector{0, 0}, nb, Vector{0.7, 0.7}, id);
    CHECK(eq[0] == doctest::Approx(1.5));
    CHECK(eq[1] == doctest::Approx(1.5));
    const auto w = aggregate_user_neighbors(Vector{0, 0}, nb, Vector{std::log(2.0), 0.0}, id);
    CHECK(w[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("uniform attention reproduces mean aggregation bit for bit") {
    Rng rng(44);
    Affine t("t", 6, 6);
    xavier_uniform(t.weight.value, rng);
    xavier_uniform(t.bias.value, rng);
    for (std::size_t k = 1; k <= 9; ++k) {
        std::vector<Vector> xs(k, Vector(6));
        for (auto& x : xs)
            for (auto& v : x) v = 4.0 * uniform_real(rng) - 2.0;
        const auto beta = attention_weights(Vector(k, uniform_real(rng)));
        CHECK(aggregate_attention(xs, beta, t) == aggregate_mean(xs, t));
    }
}

TEST_CASE("predict") {
    ModelParams p;
    CHECK(predict(Vector{1, 0}, Vector{0, 1}, Head::Dot, p) == 0.5);
    CHECK(predict(Vector{1, 1}, Vector{1, 1}, Head::Dot, p) == doctest::Approx(0.8808).epsilon(1e-4));
    const Vector u{0.3, -1.2}, i{2.0, 0.4};
    CHECK(predict(u, i, Head::Dot, p) == predict(i, u, Head::Dot, p));
    CHECK_THROWS_AS(predict(Vector{1}, Vector{1, 2}, Head::Dot, p), DimensionError);

    p.head_hidden = Affine("h", 2, 4);
    p.head_out = Affine("o", 1, 2);
    p.head_hidden.weight.value(0, 0) = 1.0; // picks u[0]
    p.head_hidden.weight.value(1, 3) = 1.0; // picks i[1]
    p.head_out.weight.value = Matrix(1, 2, {1, 1});
    CHECK(predict_logit(u, i, Head::Mlp, p) == doctest::Approx(0.3 + 0.4));
}

TEST_CASE("one-edge forward trace") {
    const std::vector<Edge> edges{{0, 0, 1}};
    const auto g = InteractionGraph::from_edges(1, 1, 1, edges);
    ModelConfig cfg{2, 1, Aggregator::Mean};
    GnnModel m(1, 1, 1, cfg, 0);
    for (auto* side : {&m.params().user_layers[0], &m.params().item_layers[0]})
        for (auto* a : {&side->fuse_in, &side->fuse_out, &side->aggregate, &side->self}) set_identity(*a);
    m.embeddings().users.value = Matrix(1, 2, {1, -2});
    m.embeddings().items.value = Matrix(1, 2, {0.5, -1});
    m.embeddings().ratings.value = Matrix(1, 2, {7, 7});
    const auto reps = propagate(g, m, ImportanceConfig{});
    CHECK(reps.users == Matrix(1, 2, {1.5, -0.02}));
    CHECK(reps.items == Matrix(1, 2, {1.5, -0.01}));

    // Isolated user after one layer: leaky(self message) only.
    const auto g2 = InteractionGraph::from_edges(2, 1, 1, edges);
    GnnModel m2(2, 1, 1, cfg, 0);
    set_identity(m2.params().user_layers[0].self);
    m2.embeddings().users.value = Matrix(2, 2, {0, 0, 3, -5});
    const auto r2 = propagate(g2, m2, ImportanceConfig{});
    CHECK(r2.users(1, 0) == 3.0);
    CHECK(r2.users(1, 1) == -0.05);
}

TEST_CASE("propagation ignores neighbor storage order") {
    const auto g = small_graph();
    for (auto agg : {Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling}) {
        GnnModel m(5, 5, 5, ModelConfig{4, 2, agg}, 12);
        auto samples = sample_all(g, ImportanceConfig{10, SampleMode::TopK, 0});
        const auto a = m.represent(samples);
        for (auto& list : samples.users) std::reverse(list.begin(), list.end());
        for (auto& list : samples.items) std::rotate(list.begin(), list.begin() + (list.empty() ? 0 : 1), list.end());
        const auto b = m.represent(samples);
        CHECK(max_abs_diff(a.users, b.users) < 1e-13);
        CHECK(max_abs_diff(a.items, b.items) < 1e-13);
    }
}

TEST_CASE("node messages") {
    const auto g = small_graph();
    GnnModel m(5, 5, 5, ModelConfig{3, 2, Aggregator::Attention}, 4);
    const auto samples = sample_all(g, ImportanceConfig{2, SampleMode::TopK, 0});
    const auto msgs = reference::node_messages(m, samples, Side::User, 0, 1);
    REQUIRE(msgs.size() == 2);
    CHECK(msgs[0].source == 0);
    CHECK(msgs[1].source == -1);
    CHECK(msgs[0].vector.size() == 3);
    CHECK(reference::node_messages(m, samples, Side::User, 4, 2).size() == 1);
    CHECK_THROWS_AS(reference::node_messages(m, samples, Side::Item, 0, 3), ConfigError);
}

TEST_CASE("batched path matches the tape reference") {
    const auto g = small_graph();
    const auto batch = small_batch();
    for (auto agg : {Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling}) {
        for (auto head : {Head::Dot, Head::Mlp}) {
            for (std::size_t layers : {0u, 1u, 2u}) {
                CAPTURE(to_string(agg));
                CAPTURE(to_string(head));
                CAPTURE(layers);
                GnnModel m(5, 5, 5, ModelConfig{4, layers, agg, head}, 31);
                randomize_biases(m, 32);
                const auto samples = sample_all(g, ImportanceConfig{2, SampleMode::Proportional, 6});
                const auto fast = m.represent(samples);
                const auto slow = reference::represent(m, samples);
                CHECK(max_abs_diff(fast.users, slow.users) < 1e-12);
                CHECK(max_abs_diff(fast.items, slow.items) < 1e-12);

                zero_all(m);
                TouchedRows touched;
                const auto vf = m.objective(samples, batch, 1e-3, true, &touched);
                std::vector<Matrix> grads;
                for (auto* p : m.all_parameters()) grads.push_back(p->grad);
                zero_all(m);
                const auto vs = reference::objective(m, samples, batch, 1e-3, true);
                CHECK(vf.total == doctest::Approx(vs.total).epsilon(1e-12));
                CHECK(vf.data == doctest::Approx(vs.data).epsilon(1e-12));
                const auto params = m.all_parameters();
                for (std::size_t k = 0; k < params.size(); ++k) {
                    CAPTURE(params[k]->name);
                    CHECK(max_abs_diff(grads[k], params[k]->grad) < 1e-12);
                }
                if (layers == 0) CHECK(touched.ratings.empty());
            }
        }
    }
}

TEST_CASE("full objective gradient passes finite differences") {
    const auto g = small_graph();
    const auto batch = small_batch();
    for (auto agg : {Aggregator::Mean, Aggregator::Attention, Aggregator::Pooling}) {
        for (auto head : {Head::Dot, Head::Mlp}) {
            CAPTURE(to_string(agg));
            CAPTURE(to_string(head));
            GnnModel m(5, 5, 5, ModelConfig{4, 2, agg, head}, 77);
            randomize_biases(m, 78);
            const auto samples = sample_all(g, ImportanceConfig{3, SampleMode::TopK, 0});
            const auto params = m.trainable_parameters();
            const Objective f = [&](bool acc) { return m.objective(samples, batch, 1e-2, acc).total; };
            const auto r = grad_check(f, params, 1e-5);
            CAPTURE(r.worst_parameter);
            CAPTURE(r.worst_index);
            CAPTURE(r.analytic);
            CAPTURE(r.numeric);
            CHECK(r.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("gradients do not depend on thread count") {
    const auto g = small_graph();
    const auto batch = small_batch();
    const int before = kernels::max_threads();
    GnnModel m(5, 5, 5, ModelConfig{8, 2, Aggregator::Attention}, 5);
    const auto samples = sample_all(g, ImportanceConfig{3, SampleMode::TopK, 0});
    kernels::set_threads(1);
    zero_all(m);
    const auto a = m.objective(samples, batch, 1e-4, true);
    std::vector<Matrix> ga;
    for (auto* p : m.all_parameters()) ga.push_back(p->grad);
    kernels::set_threads(4);
    zero_all(m);
    const auto b = m.objective(samples, batch, 1e-4, true);
    kernels::set_threads(before);
    CHECK(a.total == b.total);
    const auto params = m.all_parameters();
    for (std::size_t k = 0; k < params.size(); ++k) CHECK(ga[k] == params[k]->grad);
}

TEST_CASE("parameter sets") {
    GnnModel m(3, 3, 5, ModelConfig{4, 2, Aggregator::Mean, Head::Dot}, 1);
    for (auto* p : m.dense_parameters()) {
        CHECK(p->name.find("attn") == std::string::npos);
        CHECK(p->name.find("pool") == std::string::npos);
        CHECK(p->name.find("head") == std::string::npos);
    }
    GnnModel flat(3, 3, 5, ModelConfig{4, 0}, 1);
    CHECK(flat.trainable_parameters().size() == 2);
    CHECK_THROWS_AS(GnnModel(3, 3, 5, ModelConfig{0, 1}, 1), ConfigError);
    // Biases start at zero, weights do not.
    for (auto* p : m.all_parameters()) {
        const bool zero = std::all_of(p->value.flat().begin(), p->value.flat().end(), [](double v) { return v == 0.0; });
        CHECK(zero == p->name.ends_with(".b"));
    }
}
