#include "gnnrec/commands.hpp"

#include "gnnrec/bpr.hpp"
#include "gnnrec/error.hpp"
#include "gnnrec/kernels.hpp"
#include "gnnrec/snapshot.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>

namespace gnnrec {

namespace fs = std::filesystem;

namespace files {
fs::path snapshot(const fs::path& dir, const std::string& model) { return dir / (model + ".snapshot"); }
fs::path loss(const fs::path& dir, const std::string& model) { return dir / (model + ".loss.csv"); }
fs::path run_info(const fs::path& dir, const std::string& model) { return dir / (model + ".run.txt"); }
fs::path report(const fs::path& dir, const std::string& model) { return dir / ("report_" + model + ".csv"); }
fs::path echo(const fs::path& dir, const std::string& command) { return dir / ("echo_" + command + ".conf"); }
} // namespace files

namespace {

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string() + " (run ingest first?)");
    return in;
}

void apply_threads(const RunConfig& config) {
    if (const int n = config.threads(); n > 0) kernels::set_threads(n);
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Snapshot, the model it holds, and a scorer over it.
struct LoadedModel {
    Snapshot snapshot;
    std::unique_ptr<GnnModel> gnn;
    std::unique_ptr<BprModel> bpr;
    std::unique_ptr<Scorer> scorer;
};

LoadedModel load_model(const RunConfig& config, const IngestedData& data, const std::optional<fs::path>& path) {
    LoadedModel m;
    const auto file = path ? *path : files::snapshot(config.output_dir(), config.model_name());
    m.snapshot = load_snapshot(file);
    const auto want = config.model();
    if (snapshot_dim(m.snapshot) != want.dim)
        throw CompatibilityError("snapshot " + file.string() + " has d = " + std::to_string(snapshot_dim(m.snapshot)) +
                                 " but the config asks for model.d = " + std::to_string(want.dim));
    if (!(m.snapshot.users == data.train.user_ids()) || !(m.snapshot.items == data.train.item_ids()))
        throw CompatibilityError("snapshot " + file.string() + " was trained on a different graph");
    if (m.snapshot.kind == "gnn") {
        m.gnn = std::make_unique<GnnModel>(gnn_from_snapshot(m.snapshot));
        const auto& got = m.gnn->config();
        if (got.layers != want.layers || got.aggregator != want.aggregator || got.head != want.head)
            throw CompatibilityError("snapshot " + file.string() + " architecture differs from the config");
        m.scorer = std::make_unique<GnnScorer>(*m.gnn, propagate(data.train, *m.gnn, sampler_from_snapshot(m.snapshot)));
    } else if (m.snapshot.kind == "bpr") {
        m.bpr = std::make_unique<BprModel>(bpr_from_snapshot(m.snapshot));
        m.scorer = std::make_unique<BprScorer>(*m.bpr);
    } else {
        throw SchemaError("snapshot " + file.string() + ": unknown model kind '" + m.snapshot.kind + "'");
    }
    return m;
}

} // namespace

void echo_config(const RunConfig& config, const std::string& command) {
    config.validate();
    const auto dir = config.output_dir();
    fs::create_directories(dir);
    auto out = open_out(files::echo(dir, command));
    out << "# " << kVersion << " " << command << "\n";
    config.resolved().write(out);
}

IngestStats cmd_ingest(const RunConfig& config) {
    echo_config(config, "ingest");
    apply_threads(config);
    const auto ds = config.dataset();
    if (ds.path.empty()) throw ConfigError("dataset.path is not set");
    const auto dir = config.output_dir();

    auto table = ds.format == DatasetFormat::MovieLens ? parse_movielens(ds.path) : parse_amazon(ds.path);
    const std::size_t malformed = table.malformed_lines;
    deduplicate(table);
    if (ds.min_interactions > 0) table = filter_min_interactions(table, ds.min_interactions);
    if (ds.user_fraction < 1.0) table = subsample_users(table, ds.user_fraction, derive_seed(config.seed(), "subsample"));
    const auto graph = to_implicit(table);
    const auto split = split_train_test(graph, config.split());

    {
        auto out = open_out(dir / files::kGraph);
        write_graph_snapshot(split.train, out);
    }
    {
        auto out = open_out(dir / files::kTestEdges);
        write_edge_list(split.test, out);
    }
    {
        auto out = open_out(dir / files::kUserIds);
        write_id_map(graph.user_ids(), out);
    }
    {
        auto out = open_out(dir / files::kItemIds);
        write_id_map(graph.item_ids(), out);
    }
    IngestStats s;
    s.users = graph.n_users();
    s.items = graph.n_items();
    s.edges = graph.n_edges();
    s.density = density(graph);
    s.train_edges = split.train.n_edges();
    s.test_edges = split.test.size();
    s.malformed_lines = malformed;
    auto out = open_out(dir / files::kStats);
    out << "dataset " << ds.name << '\n'
        << "users " << s.users << '\n'
        << "items " << s.items << '\n'
        << "edges " << s.edges << '\n'
        << "density " << fmt(s.density) << '\n'
        << "train_edges " << s.train_edges << '\n'
        << "test_edges " << s.test_edges << '\n'
        << "malformed_lines " << s.malformed_lines << '\n';
    if (!out) throw IoError("failed to write stats");
    return s;
}

IngestedData load_ingested(const fs::path& dir) {
    auto users_in = open_in(dir / files::kUserIds);
    auto items_in = open_in(dir / files::kItemIds);
    auto users = read_id_map(users_in);
    auto items = read_id_map(items_in);
    auto graph_in = open_in(dir / files::kGraph);
    IngestedData d;
    d.train = read_graph_snapshot(graph_in, std::move(users), std::move(items));
    auto test_in = open_in(dir / files::kTestEdges);
    d.test = read_edge_list(test_in);
    return d;
}

std::vector<LossRecord> cmd_train(const RunConfig& config, std::ostream* progress) {
    echo_config(config, "train");
    apply_threads(config);
    const auto dir = config.output_dir();
    const auto data = load_ingested(dir);
    const auto name = config.model_name();
    const auto training = config.training();
    const auto model_config = config.model();
    const auto init_seed = derive_seed(config.seed(), "init");
    const auto report = [&](const LossRecord& r) {
        if (progress != nullptr)
            *progress << name << " epoch " << r.epoch << " loss " << r.mean_train_loss << " (" << r.wall_time
                      << " s)\n";
    };

    const auto started = std::chrono::steady_clock::now();
    std::vector<LossRecord> records;
    Snapshot snap;
    if (name == "gnn") {
        GnnModel model(data.train.n_users(), data.train.n_items(), data.train.rating_levels(), model_config, init_seed);
        const auto sampler = config.sampler();
        records = fit(data.train, model, training, sampler, report);
        snap = make_snapshot(model, sampler, data.train.user_ids(), data.train.item_ids());
    } else {
        BprModel model(data.train.n_users(), data.train.n_items(), model_config.dim, init_seed);
        records = train_bpr(data.train, model, training, report);
        snap = make_snapshot(model, data.train.user_ids(), data.train.item_ids());
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;

    save_snapshot(snap, files::snapshot(dir, name));
    {
        auto out = open_out(files::loss(dir, name));
        write_loss_csv(records, out);
    }
    auto out = open_out(files::run_info(dir, name));
    out << "version " << kVersion << '\n'
        << "model " << name << '\n'
        << "seed " << config.seed() << '\n'
        << "snapshot " << files::snapshot(dir, name).filename().string() << '\n'
        << "epochs " << records.size() << '\n'
        << "final_mean_loss " << (records.empty() ? std::string("nan") : fmt(records.back().mean_train_loss)) << '\n'
        << "wall_time_s " << elapsed.count() << '\n'
        << "threads " << kernels::max_threads() << '\n'
        << "[config]\n";
    config.resolved().write(out);
    return records;
}

MetricsReport cmd_evaluate(const RunConfig& config, const std::optional<fs::path>& snapshot) {
    echo_config(config, "evaluate");
    apply_threads(config);
    const auto dir = config.output_dir();
    const auto data = load_ingested(dir);
    const auto loaded = load_model(config, data, snapshot);
    const auto report = evaluate(*loaded.scorer, data.train, data.test, config.eval(), config.dataset().name);
    auto out = open_out(files::report(dir, loaded.snapshot.kind));
    write_report_csv(std::span<const MetricsReport>(&report, 1), out);
    return report;
}

std::vector<std::pair<std::string, double>> cmd_recommend(const RunConfig& config, const std::string& user_key,
                                                          std::size_t k, const std::optional<fs::path>& snapshot) {
    config.validate();
    apply_threads(config);
    const auto data = load_ingested(config.output_dir());
    const auto user = data.train.user_ids().find(user_key);
    if (!user) throw LookupError("unknown user '" + user_key + "'");
    if (k == 0) return {};
    const auto loaded = load_model(config, data, snapshot);

    const std::size_t n_items = data.train.n_items();
    std::vector<char> seen(n_items, 0);
    for (const auto& nb : data.train.neighbors(Side::User, *user)) seen[static_cast<std::size_t>(nb.index)] = 1;
    for (const auto& e : data.test)
        if (e.user == *user) seen[static_cast<std::size_t>(e.item)] = 1;
    std::vector<Index> candidates;
    std::vector<double> scores(n_items, 0.0);
    for (std::size_t i = 0; i < n_items; ++i) {
        if (seen[i]) continue;
        candidates.push_back(static_cast<Index>(i));
        scores[i] = loaded.scorer->score(*user, static_cast<Index>(i));
    }
    const auto take = std::min(k, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(),
                      [&](Index a, Index b) {
                          const double sa = scores[static_cast<std::size_t>(a)];
                          const double sb = scores[static_cast<std::size_t>(b)];
                          if (sa != sb) return sa > sb;
                          return a < b;
                      });
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t r = 0; r < take; ++r)
        out.emplace_back(data.train.item_ids().key(candidates[r]), scores[static_cast<std::size_t>(candidates[r])]);
    return out;
}

std::vector<MetricsReport> cmd_compare(const RunConfig& config, const std::vector<fs::path>& reports,
                                       std::ostream& out) {
    if (reports.empty()) throw EmptyInputError("compare needs at least one report file");
    echo_config(config, "compare");
    std::vector<std::vector<MetricsReport>> loaded;
    for (const auto& path : reports) {
        auto in = open_in(path);
        try {
            loaded.push_back(read_report_csv(in));
        } catch (const Error& e) {
            throw SchemaError(path.string() + ": " + e.what());
        }
    }
    auto merged = merge_reports(loaded);
    print_comparison(merged, out);
    auto file = open_out(config.output_dir() / files::kComparison);
    write_report_csv(merged, file);
    return merged;
}

} // namespace gnnrec
