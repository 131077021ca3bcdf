#include "gnnrec/model.hpp"

#include "gnnrec/error.hpp"
#include "gnnrec/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace gnnrec {

GnnModel::GnnModel(std::size_t n_users, std::size_t n_items, int rating_levels, const ModelConfig& config,
                   std::uint64_t init_seed)
    : config_(config) {
    if (config.dim < 1) throw ConfigError("model.dim must be >= 1");
    if (rating_levels < 1) throw ConfigError("rating levels must be >= 1");
    const std::size_t d = config.dim;
    table_.users = Parameter("emb.users", n_users, d);
    table_.items = Parameter("emb.items", n_items, d);
    table_.ratings = Parameter("emb.ratings", static_cast<std::size_t>(rating_levels), d);
    for (std::size_t l = 0; l < config.layers; ++l) {
        params_.user_layers.emplace_back("user.l" + std::to_string(l), d);
        params_.item_layers.emplace_back("item.l" + std::to_string(l), d);
    }
    params_.user_relation = Affine("user_relation", d, d);
    params_.head_hidden = Affine("head.hidden", d, 2 * d);
    params_.head_out = Affine("head.out", 1, d);

    // Weights are Xavier-uniform, biases start at zero.
    Rng rng(init_seed);
    for (auto* p : all_parameters()) {
        if (p->value.rows() == 1 && p->name.ends_with(".b")) continue;
        xavier_uniform(p->value, rng);
    }
}

namespace {

template <class Fn>
void for_each_affine(SideLayer& layer, Fn&& fn) {
    for (auto* a : {&layer.fuse_in, &layer.fuse_out, &layer.attn_hidden, &layer.attn_out, &layer.pool,
                    &layer.aggregate, &layer.self})
        fn(*a);
}

void push_affine(std::vector<Parameter*>& out, Affine& a) {
    out.push_back(&a.weight);
    out.push_back(&a.bias);
}

} // namespace

std::vector<Parameter*> GnnModel::all_parameters() {
    std::vector<Parameter*> out{&table_.users, &table_.items, &table_.ratings};
    for (std::size_t l = 0; l < params_.user_layers.size(); ++l) {
        for_each_affine(params_.user_layers[l], [&](Affine& a) { push_affine(out, a); });
        for_each_affine(params_.item_layers[l], [&](Affine& a) { push_affine(out, a); });
    }
    push_affine(out, params_.user_relation);
    push_affine(out, params_.head_hidden);
    push_affine(out, params_.head_out);
    return out;
}

std::vector<const Parameter*> GnnModel::all_parameters() const {
    auto mut = const_cast<GnnModel*>(this)->all_parameters();
    return {mut.begin(), mut.end()};
}

std::vector<Parameter*> GnnModel::dense_parameters() {
    std::vector<Parameter*> out;
    const auto side = [&](SideLayer& s) {
        push_affine(out, s.fuse_in);
        push_affine(out, s.fuse_out);
        if (config_.aggregator == Aggregator::Attention) {
            push_affine(out, s.attn_hidden);
            push_affine(out, s.attn_out);
        }
        if (config_.aggregator == Aggregator::Pooling) push_affine(out, s.pool);
        push_affine(out, s.aggregate);
        push_affine(out, s.self);
    };
    for (std::size_t l = 0; l < params_.user_layers.size(); ++l) {
        side(params_.user_layers[l]);
        side(params_.item_layers[l]);
    }
    if (config_.head == Head::Mlp) {
        push_affine(out, params_.head_hidden);
        push_affine(out, params_.head_out);
    }
    return out;
}

std::vector<Parameter*> GnnModel::trainable_parameters() {
    std::vector<Parameter*> out{&table_.users, &table_.items};
    if (config_.layers > 0) out.push_back(&table_.ratings);
    auto dense = dense_parameters();
    out.insert(out.end(), dense.begin(), dense.end());
    return out;
}

namespace {

// Receptive field of a batch. Level L holds the batch nodes; level l-1
// extends level l with the sampled neighbors of level-l nodes, so every
// level is a prefix of the one below it and a node keeps one local index
// across all levels it appears in.
struct Levels {
    std::vector<Index> users;
    std::vector<Index> items;
    std::vector<std::size_t> n_users; // per level 0..L
    std::vector<std::size_t> n_items;
    std::vector<Index> pos_user;      // global -> local, -1 if absent
    std::vector<Index> pos_item;
};

Levels build_levels(const NeighborSamples& samples, std::span<const Index> batch_users,
                    std::span<const Index> batch_items, std::size_t n_users, std::size_t n_items,
                    std::size_t layers) {
    Levels lv;
    lv.pos_user.assign(n_users, -1);
    lv.pos_item.assign(n_items, -1);
    lv.n_users.assign(layers + 1, 0);
    lv.n_items.assign(layers + 1, 0);
    const auto add_user = [&](Index g) {
        if (g < 0 || static_cast<std::size_t>(g) >= n_users) throw BoundsError("user index out of range");
        auto& p = lv.pos_user[static_cast<std::size_t>(g)];
        if (p < 0) {
            p = static_cast<Index>(lv.users.size());
            lv.users.push_back(g);
        }
    };
    const auto add_item = [&](Index g) {
        if (g < 0 || static_cast<std::size_t>(g) >= n_items) throw BoundsError("item index out of range");
        auto& p = lv.pos_item[static_cast<std::size_t>(g)];
        if (p < 0) {
            p = static_cast<Index>(lv.items.size());
            lv.items.push_back(g);
        }
    };
    for (auto u : batch_users) add_user(u);
    for (auto i : batch_items) add_item(i);
    lv.n_users[layers] = lv.users.size();
    lv.n_items[layers] = lv.items.size();
    for (std::size_t l = layers; l > 0; --l) {
        const std::size_t nu = lv.n_users[l];
        const std::size_t ni = lv.n_items[l];
        for (std::size_t c = 0; c < nu; ++c)
            for (const auto& nb : samples.users[static_cast<std::size_t>(lv.users[c])]) add_item(nb.index);
        for (std::size_t c = 0; c < ni; ++c)
            for (const auto& nb : samples.items[static_cast<std::size_t>(lv.items[c])]) add_user(nb.index);
        lv.n_users[l - 1] = lv.users.size();
        lv.n_items[l - 1] = lv.items.size();
    }
    return lv;
}

MatView top_rows(Matrix& m, std::size_t rows) {
    return {m.data(), rows, m.cols(), m.cols()};
}

// Forward state of one side of one layer. "Pairs" are the distinct
// (neighbor, rating) combinations among the sampled edges; fusion runs once
// per pair and edges refer to pairs.
struct SideCache {
    std::size_t n_centers = 0;
    std::vector<std::size_t> offsets; // edges of center c: [offsets[c], offsets[c+1])
    std::vector<Index> edge_pair;
    std::vector<Index> pair_neighbor; // local index in the previous level
    std::vector<Index> pair_rating;   // 0-based rating level
    Matrix z1, x;                     // pairs x d
    Matrix xa;                        // pairs x d (attention, fused part)
    Matrix ca;                        // centers x d (attention, center part + bias)
    Matrix ez;                        // edges x d (attention hidden pre-activation)
    std::vector<double> beta;         // edges
    Matrix pz;                        // pairs x d (pooling pre-activation)
    std::vector<Index> pool_arg;      // centers x d, winning edge
    Matrix m, hz, pre, out;           // centers x d
};

std::size_t degree_of(const SideCache& c, std::size_t center) {
    return c.offsets[center + 1] - c.offsets[center];
}

void side_forward(const SideLayer& P, const ModelConfig& cfg, const Matrix& ratings, ConstMatView centers_prev,
                  ConstMatView neighbors_prev, std::span<const Index> center_globals,
                  const std::vector<std::vector<Neighbor>>& side_samples, const std::vector<Index>& pos_other,
                  SideCache& c, std::vector<char>& rating_used) {
    const std::size_t d = cfg.dim;
    const std::size_t nc = centers_prev.rows;
    const std::size_t R = ratings.rows();
    c.n_centers = nc;

    c.offsets.assign(nc + 1, 0);
    c.edge_pair.clear();
    c.pair_neighbor.clear();
    c.pair_rating.clear();
    std::vector<Index> pair_of(neighbors_prev.rows * R, -1);
    for (std::size_t k = 0; k < nc; ++k) {
        for (const auto& nb : side_samples[static_cast<std::size_t>(center_globals[k])]) {
            const auto local = pos_other[static_cast<std::size_t>(nb.index)];
            const auto level = static_cast<std::size_t>(nb.rating - 1);
            if (local < 0 || static_cast<std::size_t>(local) >= neighbors_prev.rows || level >= R)
                throw BoundsError("sampled neighbor outside the receptive field");
            auto& slot = pair_of[static_cast<std::size_t>(local) * R + level];
            if (slot < 0) {
                slot = static_cast<Index>(c.pair_neighbor.size());
                c.pair_neighbor.push_back(local);
                c.pair_rating.push_back(static_cast<Index>(level));
                rating_used[level] = 1;
            }
            c.edge_pair.push_back(slot);
        }
        c.offsets[k + 1] = c.edge_pair.size();
    }
    const std::size_t np = c.pair_neighbor.size();
    const std::size_t ne = c.edge_pair.size();

    // fuse_in([n ⊕ r]) = W_n n + (W_r r + b), split by columns.
    const auto fuse_w = P.fuse_in.weight.value.view();
    Matrix nf(neighbors_prev.rows, d);
    kernels::affine_rows(neighbors_prev, fuse_w.columns(0, d), nullptr, nf.view());
    Matrix rf(R, d);
    kernels::affine_rows(ratings.view(), fuse_w.columns(d, d), P.fuse_in.bias.value.data(), rf.view());
    c.z1.resize(np, d);
    Matrix a1(np, d);
    const auto npi = static_cast<std::int64_t>(np);
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < npi; ++p) {
        const auto i = static_cast<std::size_t>(p);
        const auto nrow = nf.row(static_cast<std::size_t>(c.pair_neighbor[i]));
        const auto rrow = rf.row(static_cast<std::size_t>(c.pair_rating[i]));
        auto z = c.z1.row(i);
        auto a = a1.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            z[j] = nrow[j] + rrow[j];
            a[j] = z[j] > 0.0 ? z[j] : 0.0;
        }
    }
    c.x.resize(np, d);
    kernels::affine_rows(a1.view(), P.fuse_out.weight.value.view(), P.fuse_out.bias.value.data(), c.x.view());

    c.m.resize(nc, d);
    const auto nci = static_cast<std::int64_t>(nc);
    if (cfg.aggregator == Aggregator::Attention) {
        const auto attn_w = P.attn_hidden.weight.value.view();
        c.xa.resize(np, d);
        kernels::affine_rows(c.x.view(), attn_w.columns(0, d), nullptr, c.xa.view());
        c.ca.resize(nc, d);
        kernels::affine_rows(centers_prev, attn_w.columns(d, d), P.attn_hidden.bias.value.data(), c.ca.view());
        c.ez.resize(ne, d);
        c.beta.assign(ne, 0.0);
        const auto w2 = P.attn_out.weight.value.row(0);
        const double b2 = P.attn_out.bias.value(0, 0);
#pragma omp parallel for schedule(dynamic, 16)
        for (std::int64_t k = 0; k < nci; ++k) {
            const auto ck = static_cast<std::size_t>(k);
            const std::size_t first = c.offsets[ck];
            const std::size_t last = c.offsets[ck + 1];
            if (first == last) continue;
            const auto cav = c.ca.row(ck);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e = first; e < last; ++e) {
                const auto p = static_cast<std::size_t>(c.edge_pair[e]);
                const auto xav = c.xa.row(p);
                auto z = c.ez.row(e);
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    z[j] = xav[j] + cav[j];
                    s += w2[j] * (z[j] > 0.0 ? z[j] : 0.0);
                }
                c.beta[e] = s + b2;
                mx = std::max(mx, c.beta[e]);
            }
            double total = 0.0;
            for (std::size_t e = first; e < last; ++e) {
                c.beta[e] = std::exp(c.beta[e] - mx);
                total += c.beta[e];
            }
            for (std::size_t e = first; e < last; ++e) c.beta[e] /= total;
            auto mrow = c.m.row(ck);
            for (std::size_t e = first; e < last; ++e) {
                const auto xv = c.x.row(static_cast<std::size_t>(c.edge_pair[e]));
                for (std::size_t j = 0; j < d; ++j) mrow[j] += c.beta[e] * xv[j];
            }
        }
    } else if (cfg.aggregator == Aggregator::Mean) {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::int64_t k = 0; k < nci; ++k) {
            const auto ck = static_cast<std::size_t>(k);
            const std::size_t deg = degree_of(c, ck);
            if (deg == 0) continue;
            const double inv = 1.0 / static_cast<double>(deg);
            auto mrow = c.m.row(ck);
            for (std::size_t e = c.offsets[ck]; e < c.offsets[ck + 1]; ++e) {
                const auto xv = c.x.row(static_cast<std::size_t>(c.edge_pair[e]));
                for (std::size_t j = 0; j < d; ++j) mrow[j] += inv * xv[j];
            }
        }
    } else {
        c.pz.resize(np, d);
        kernels::affine_rows(c.x.view(), P.pool.weight.value.view(), P.pool.bias.value.data(), c.pz.view());
        c.pool_arg.assign(nc * d, -1);
#pragma omp parallel for schedule(dynamic, 16)
        for (std::int64_t k = 0; k < nci; ++k) {
            const auto ck = static_cast<std::size_t>(k);
            const std::size_t first = c.offsets[ck];
            const std::size_t last = c.offsets[ck + 1];
            if (first == last) continue;
            auto mrow = c.m.row(ck);
            const double* self = centers_prev.row(ck);
            Index* arg = c.pool_arg.data() + ck * d;
            for (std::size_t j = 0; j < d; ++j) {
                double best = 0.0;
                for (std::size_t e = first; e < last; ++e) {
                    const double q = std::max(0.0, c.pz(static_cast<std::size_t>(c.edge_pair[e]), j));
                    if (e == first || q > best) {
                        best = q;
                        arg[j] = static_cast<Index>(e);
                    }
                }
                mrow[j] = self[j] + best;
            }
        }
    }

    c.hz.resize(nc, d);
    kernels::affine_rows(c.m.view(), P.aggregate.weight.value.view(), P.aggregate.bias.value.data(), c.hz.view());
    c.pre.resize(nc, d);
    kernels::affine_rows(centers_prev, P.self.weight.value.view(), P.self.bias.value.data(), c.pre.view());
    c.out.resize(nc, d);
    const double slope = cfg.leaky_slope;
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < nci; ++k) {
        const auto ck = static_cast<std::size_t>(k);
        const bool has = degree_of(c, ck) > 0;
        auto pre = c.pre.row(ck);
        const auto hz = c.hz.row(ck);
        auto out = c.out.row(ck);
        for (std::size_t j = 0; j < d; ++j) {
            if (has) pre[j] += hz[j] > 0.0 ? hz[j] : 0.0;
            out[j] = pre[j] > 0.0 ? pre[j] : slope * pre[j];
        }
    }
}

void side_backward(SideLayer& P, const ModelConfig& cfg, const Matrix& ratings, Matrix& ratings_grad,
                   ConstMatView centers_prev, ConstMatView neighbors_prev, const SideCache& c, const Matrix& d_out,
                   MatView d_centers_prev, MatView d_neighbors_prev) {
    const std::size_t d = cfg.dim;
    const std::size_t nc = c.n_centers;
    const std::size_t np = c.pair_neighbor.size();
    const std::size_t ne = c.edge_pair.size();
    const std::size_t R = ratings.rows();
    const auto nci = static_cast<std::int64_t>(nc);
    const double slope = cfg.leaky_slope;

    Matrix d_pre(nc, d);
    Matrix d_hz(nc, d);
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < nci; ++k) {
        const auto ck = static_cast<std::size_t>(k);
        const bool has = degree_of(c, ck) > 0;
        const auto pre = c.pre.row(ck);
        const auto hz = c.hz.row(ck);
        const auto g = d_out.row(ck);
        auto dp = d_pre.row(ck);
        auto dh = d_hz.row(ck);
        for (std::size_t j = 0; j < d; ++j) {
            dp[j] = pre[j] > 0.0 ? g[j] : slope * g[j];
            dh[j] = (has && hz[j] > 0.0) ? dp[j] : 0.0;
        }
    }
    // Self message.
    kernels::affine_rows_grad_weight(d_pre.view(), centers_prev, P.self.weight.grad.view(), P.self.bias.grad.data());
    kernels::affine_rows_grad_input(d_pre.view(), P.self.weight.value.view(), d_centers_prev);
    // Neighborhood transform.
    kernels::affine_rows_grad_weight(d_hz.view(), c.m.view(), P.aggregate.weight.grad.view(),
                                     P.aggregate.bias.grad.data());
    Matrix d_m(nc, d);
    kernels::affine_rows_grad_input(d_hz.view(), P.aggregate.weight.value.view(), d_m.view());

    // Gradient of each edge's contribution to its pair's fused vector,
    // computed in parallel per center and scattered serially below.
    Matrix d_x(np, d);
    Matrix d_edge(ne, d);
    if (cfg.aggregator == Aggregator::Attention) {
        Matrix d_ez(ne, d);
        const auto w2 = P.attn_out.weight.value.row(0);
        std::vector<double> d_score(ne, 0.0);
#pragma omp parallel for schedule(dynamic, 16)
        for (std::int64_t k = 0; k < nci; ++k) {
            const auto ck = static_cast<std::size_t>(k);
            const std::size_t first = c.offsets[ck];
            const std::size_t last = c.offsets[ck + 1];
            if (first == last) continue;
            const auto dm = d_m.row(ck);
            double inner = 0.0;
            for (std::size_t e = first; e < last; ++e) {
                const auto xv = c.x.row(static_cast<std::size_t>(c.edge_pair[e]));
                auto de = d_edge.row(e);
                double dbeta = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    de[j] = c.beta[e] * dm[j];
                    dbeta += dm[j] * xv[j];
                }
                d_score[e] = dbeta;
                inner += c.beta[e] * dbeta;
            }
            for (std::size_t e = first; e < last; ++e) {
                d_score[e] = c.beta[e] * (d_score[e] - inner);
                const auto z = c.ez.row(e);
                auto dz = d_ez.row(e);
                for (std::size_t j = 0; j < d; ++j) dz[j] = z[j] > 0.0 ? d_score[e] * w2[j] : 0.0;
            }
        }
        // attn_out: score = w2 . relu(ez) + b2
        auto dw2 = P.attn_out.weight.grad.row(0);
        double& db2 = P.attn_out.bias.grad(0, 0);
        for (std::size_t e = 0; e < ne; ++e) {
            const auto z = c.ez.row(e);
            for (std::size_t j = 0; j < d; ++j) dw2[j] += d_score[e] * (z[j] > 0.0 ? z[j] : 0.0);
            db2 += d_score[e];
        }
        Matrix d_xa(np, d);
        Matrix d_ca(nc, d);
        for (std::size_t k = 0; k < nc; ++k) {
            auto dca = d_ca.row(k);
            for (std::size_t e = c.offsets[k]; e < c.offsets[k + 1]; ++e) {
                const auto dz = d_ez.row(e);
                auto dxa = d_xa.row(static_cast<std::size_t>(c.edge_pair[e]));
                for (std::size_t j = 0; j < d; ++j) {
                    dxa[j] += dz[j];
                    dca[j] += dz[j];
                }
            }
        }
        const auto attn_w = P.attn_hidden.weight.value.view();
        const auto attn_g = P.attn_hidden.weight.grad.view();
        kernels::affine_rows_grad_weight(d_xa.view(), c.x.view(), attn_g.columns(0, d), nullptr);
        kernels::affine_rows_grad_input(d_xa.view(), attn_w.columns(0, d), d_x.view());
        kernels::affine_rows_grad_weight(d_ca.view(), centers_prev, attn_g.columns(d, d),
                                         P.attn_hidden.bias.grad.data());
        kernels::affine_rows_grad_input(d_ca.view(), attn_w.columns(d, d), d_centers_prev);
    } else if (cfg.aggregator == Aggregator::Mean) {
#pragma omp parallel for schedule(dynamic, 16)
        for (std::int64_t k = 0; k < nci; ++k) {
            const auto ck = static_cast<std::size_t>(k);
            const std::size_t deg = degree_of(c, ck);
            if (deg == 0) continue;
            const double inv = 1.0 / static_cast<double>(deg);
            const auto dm = d_m.row(ck);
            for (std::size_t e = c.offsets[ck]; e < c.offsets[ck + 1]; ++e) {
                auto de = d_edge.row(e);
                for (std::size_t j = 0; j < d; ++j) de[j] = inv * dm[j];
            }
        }
    } else {
        Matrix d_pz(np, d);
        for (std::size_t k = 0; k < nc; ++k) {
            if (degree_of(c, k) == 0) continue;
            const auto dm = d_m.row(k);
            auto dself = d_centers_prev.row(k);
            const Index* arg = c.pool_arg.data() + k * d;
            for (std::size_t j = 0; j < d; ++j) {
                dself[j] += dm[j];
                const auto p = static_cast<std::size_t>(c.edge_pair[static_cast<std::size_t>(arg[j])]);
                if (c.pz(p, j) > 0.0) d_pz(p, j) += dm[j];
            }
        }
        kernels::affine_rows_grad_weight(d_pz.view(), c.x.view(), P.pool.weight.grad.view(), P.pool.bias.grad.data());
        kernels::affine_rows_grad_input(d_pz.view(), P.pool.weight.value.view(), d_x.view());
    }
    if (cfg.aggregator != Aggregator::Pooling) {
        for (std::size_t e = 0; e < ne; ++e) {
            const auto de = d_edge.row(e);
            auto dx = d_x.row(static_cast<std::size_t>(c.edge_pair[e]));
            for (std::size_t j = 0; j < d; ++j) dx[j] += de[j];
        }
    }

    // Fusion network.
    Matrix a1(np, d);
    for (std::size_t p = 0; p < np; ++p) {
        const auto z = c.z1.row(p);
        auto a = a1.row(p);
        for (std::size_t j = 0; j < d; ++j) a[j] = z[j] > 0.0 ? z[j] : 0.0;
    }
    kernels::affine_rows_grad_weight(d_x.view(), a1.view(), P.fuse_out.weight.grad.view(),
                                     P.fuse_out.bias.grad.data());
    Matrix d_a1(np, d);
    kernels::affine_rows_grad_input(d_x.view(), P.fuse_out.weight.value.view(), d_a1.view());
    Matrix d_nf(neighbors_prev.rows, d);
    Matrix d_rf(R, d);
    for (std::size_t p = 0; p < np; ++p) {
        const auto z = c.z1.row(p);
        const auto da = d_a1.row(p);
        auto dn = d_nf.row(static_cast<std::size_t>(c.pair_neighbor[p]));
        auto dr = d_rf.row(static_cast<std::size_t>(c.pair_rating[p]));
        for (std::size_t j = 0; j < d; ++j) {
            if (z[j] > 0.0) {
                dn[j] += da[j];
                dr[j] += da[j];
            }
        }
    }
    const auto fuse_w = P.fuse_in.weight.value.view();
    const auto fuse_g = P.fuse_in.weight.grad.view();
    kernels::affine_rows_grad_weight(d_nf.view(), neighbors_prev, fuse_g.columns(0, d), nullptr);
    kernels::affine_rows_grad_input(d_nf.view(), fuse_w.columns(0, d), d_neighbors_prev);
    kernels::affine_rows_grad_weight(d_rf.view(), ratings.view(), fuse_g.columns(d, d), P.fuse_in.bias.grad.data());
    kernels::affine_rows_grad_input(d_rf.view(), fuse_w.columns(d, d), ratings_grad.view());
}

// One batched pass over the receptive field of a set of users and items.
struct Engine {
    const GnnModel& model;
    const NeighborSamples& samples;
    Levels levels;
    std::vector<Matrix> rep_users; // per level
    std::vector<Matrix> rep_items;
    std::vector<SideCache> user_cache; // per layer (index l-1)
    std::vector<SideCache> item_cache;
    std::vector<char> rating_used;

    Engine(const GnnModel& m, const NeighborSamples& s) : model(m), samples(s) {}

    void forward(std::span<const Index> batch_users, std::span<const Index> batch_items) {
        const auto& cfg = model.config();
        const std::size_t L = cfg.layers;
        const std::size_t d = cfg.dim;
        if (samples.users.size() != model.n_users() || samples.items.size() != model.n_items())
            throw DimensionError("neighbor samples do not match model node counts");
        levels = build_levels(samples, batch_users, batch_items, model.n_users(), model.n_items(), L);
        rep_users.assign(L + 1, Matrix{});
        rep_items.assign(L + 1, Matrix{});
        user_cache.assign(L, SideCache{});
        item_cache.assign(L, SideCache{});
        rating_used.assign(static_cast<std::size_t>(model.rating_levels()), 0);

        const auto& emb = model.embeddings();
        rep_users[0].resize(levels.n_users[0], d);
        rep_items[0].resize(levels.n_items[0], d);
        for (std::size_t k = 0; k < levels.n_users[0]; ++k) {
            const auto src = emb.users.value.row(static_cast<std::size_t>(levels.users[k]));
            std::copy(src.begin(), src.end(), rep_users[0].row(k).begin());
        }
        for (std::size_t k = 0; k < levels.n_items[0]; ++k) {
            const auto src = emb.items.value.row(static_cast<std::size_t>(levels.items[k]));
            std::copy(src.begin(), src.end(), rep_items[0].row(k).begin());
        }
        for (std::size_t l = 1; l <= L; ++l) {
            const auto& up = model.params().user_layers[l - 1];
            const auto& ip = model.params().item_layers[l - 1];
            side_forward(up, cfg, emb.ratings.value, top_rows(rep_users[l - 1], levels.n_users[l]),
                         rep_items[l - 1].view(), std::span(levels.users).first(levels.n_users[l]), samples.users,
                         levels.pos_item, user_cache[l - 1], rating_used);
            side_forward(ip, cfg, emb.ratings.value, top_rows(rep_items[l - 1], levels.n_items[l]),
                         rep_users[l - 1].view(), std::span(levels.items).first(levels.n_items[l]), samples.items,
                         levels.pos_user, item_cache[l - 1], rating_used);
            rep_users[l] = user_cache[l - 1].out;
            rep_items[l] = item_cache[l - 1].out;
        }
    }

    const Matrix& final_users() const { return rep_users.back(); }
    const Matrix& final_items() const { return rep_items.back(); }

    // Propagates d_final_* back to every parameter gradient and returns the
    // level-0 gradients through the embedding grads.
    void backward(GnnModel& m, Matrix d_users, Matrix d_items) {
        const auto& cfg = m.config();
        const std::size_t L = cfg.layers;
        const std::size_t d = cfg.dim;
        auto& emb = m.embeddings();
        for (std::size_t l = L; l >= 1; --l) {
            Matrix d_prev_users(levels.n_users[l - 1], d);
            Matrix d_prev_items(levels.n_items[l - 1], d);
            side_backward(m.params().user_layers[l - 1], cfg, emb.ratings.value, emb.ratings.grad,
                          top_rows(rep_users[l - 1], levels.n_users[l]), rep_items[l - 1].view(), user_cache[l - 1],
                          d_users, top_rows(d_prev_users, levels.n_users[l]), d_prev_items.view());
            side_backward(m.params().item_layers[l - 1], cfg, emb.ratings.value, emb.ratings.grad,
                          top_rows(rep_items[l - 1], levels.n_items[l]), rep_users[l - 1].view(), item_cache[l - 1],
                          d_items, top_rows(d_prev_items, levels.n_items[l]), d_prev_users.view());
            d_users = std::move(d_prev_users);
            d_items = std::move(d_prev_items);
        }
        for (std::size_t k = 0; k < levels.n_users[0]; ++k) {
            auto dst = emb.users.grad.row(static_cast<std::size_t>(levels.users[k]));
            const auto src = d_users.row(k);
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        for (std::size_t k = 0; k < levels.n_items[0]; ++k) {
            auto dst = emb.items.grad.row(static_cast<std::size_t>(levels.items[k]));
            const auto src = d_items.row(k);
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    }
};

} // namespace

ObjectiveValue GnnModel::objective(const NeighborSamples& samples, const PairBatch& batch, double lambda,
                                   bool accumulate, TouchedRows* touched) {
    const std::size_t n = batch.size();
    if (batch.items.size() != n || batch.labels.size() != n) throw DimensionError("pair batch arrays differ in length");
    Engine engine(*this, samples);
    engine.forward(batch.users, batch.items);
    const auto& lv = engine.levels;
    const auto& U = engine.final_users();
    const auto& I = engine.final_items();
    const std::size_t d = config_.dim;

    std::vector<double> logits(n);
    const auto ni = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < ni; ++k) {
        const auto i = static_cast<std::size_t>(k);
        const auto u = U.row(static_cast<std::size_t>(lv.pos_user[static_cast<std::size_t>(batch.users[i])]));
        const auto v = I.row(static_cast<std::size_t>(lv.pos_item[static_cast<std::size_t>(batch.items[i])]));
        logits[i] = predict_logit(u, v, config_.head, params_);
    }
    ObjectiveValue value;
    for (std::size_t i = 0; i < n; ++i) value.data += pair_loss_logit(logits[i], batch.labels[i]);

    // Regularizer over the rows in the receptive field and the dense weights.
    double reg = 0.0;
    for (std::size_t k = 0; k < lv.n_users[0]; ++k)
        reg += squared_norm(table_.users.value.row(static_cast<std::size_t>(lv.users[k])));
    for (std::size_t k = 0; k < lv.n_items[0]; ++k)
        reg += squared_norm(table_.items.value.row(static_cast<std::size_t>(lv.items[k])));
    for (std::size_t r = 0; r < engine.rating_used.size(); ++r)
        if (engine.rating_used[r]) reg += squared_norm(table_.ratings.value.row(r));
    const auto dense = dense_parameters();
    for (const auto* p : dense) reg += squared_norm(p->value.flat());
    value.total = value.data + 0.5 * lambda * reg;

    if (touched != nullptr) {
        touched->users.assign(lv.users.begin(), lv.users.begin() + static_cast<std::ptrdiff_t>(lv.n_users[0]));
        touched->items.assign(lv.items.begin(), lv.items.begin() + static_cast<std::ptrdiff_t>(lv.n_items[0]));
        touched->ratings.clear();
        for (std::size_t r = 0; r < engine.rating_used.size(); ++r)
            if (engine.rating_used[r]) touched->ratings.push_back(static_cast<Index>(r));
    }
    if (!accumulate) return value;

    Matrix d_users(U.rows(), d);
    Matrix d_items(I.rows(), d);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = pair_loss_logit_grad(logits[i], batch.labels[i]);
        if (g == 0.0) continue;
        const auto pu = static_cast<std::size_t>(lv.pos_user[static_cast<std::size_t>(batch.users[i])]);
        const auto pi = static_cast<std::size_t>(lv.pos_item[static_cast<std::size_t>(batch.items[i])]);
        const auto u = U.row(pu);
        const auto v = I.row(pi);
        auto du = d_users.row(pu);
        auto dv = d_items.row(pi);
        if (config_.head == Head::Dot) {
            for (std::size_t j = 0; j < d; ++j) {
                du[j] += g * v[j];
                dv[j] += g * u[j];
            }
        } else {
            const auto q = concat(u, v);
            const auto z = params_.head_hidden(q);
            const auto h = relu(z);
            Vector dh(d, 0.0), dz(d, 0.0), dq(2 * d, 0.0);
            const double dlogit[1] = {g};
            affine_backward(params_.head_out.weight.value, h, dlogit, &params_.head_out.weight.grad,
                            params_.head_out.bias.grad.flat(), dh);
            relu_backward(z, dh, dz);
            affine_backward(params_.head_hidden.weight.value, q, dz, &params_.head_hidden.weight.grad,
                            params_.head_hidden.bias.grad.flat(), dq);
            for (std::size_t j = 0; j < d; ++j) {
                du[j] += dq[j];
                dv[j] += dq[d + j];
            }
        }
    }
    engine.backward(*this, std::move(d_users), std::move(d_items));

    if (lambda != 0.0) {
        const auto add_row = [lambda](Parameter& p, std::size_t r) {
            const auto v = p.value.row(r);
            auto g = p.grad.row(r);
            for (std::size_t j = 0; j < v.size(); ++j) g[j] += lambda * v[j];
        };
        for (std::size_t k = 0; k < lv.n_users[0]; ++k) add_row(table_.users, static_cast<std::size_t>(lv.users[k]));
        for (std::size_t k = 0; k < lv.n_items[0]; ++k) add_row(table_.items, static_cast<std::size_t>(lv.items[k]));
        for (std::size_t r = 0; r < engine.rating_used.size(); ++r)
            if (engine.rating_used[r]) add_row(table_.ratings, r);
        for (auto* p : dense) {
            const auto v = p->value.flat();
            auto g = p->grad.flat();
            for (std::size_t j = 0; j < v.size(); ++j) g[j] += lambda * v[j];
        }
    }
    return value;
}

Representations GnnModel::represent(const NeighborSamples& samples) const {
    std::vector<Index> users(n_users()), items(n_items());
    for (std::size_t k = 0; k < users.size(); ++k) users[k] = static_cast<Index>(k);
    for (std::size_t k = 0; k < items.size(); ++k) items[k] = static_cast<Index>(k);
    Engine engine(*this, samples);
    engine.forward(users, items);
    // Batch nodes were added in index order, so local order is global order.
    return {engine.final_users(), engine.final_items()};
}

Representations propagate(const InteractionGraph& graph, const GnnModel& model, const ImportanceConfig& sampler) {
    if (graph.n_users() != model.n_users() || graph.n_items() != model.n_items())
        throw DimensionError("graph and model node counts differ");
    return model.represent(sample_all(graph, sampler, 0));
}

} // namespace gnnrec
