#include "gnnrec/cli.hpp"

#include "gnnrec/commands.hpp"
#include "gnnrec/error.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ostream>

namespace gnnrec {

namespace {

struct Override {
    std::string key;
    std::string value;
};

// Pulls `--section.key value` and `--section.key=value` out of the
// argument list; everything else goes to the option parser.
std::vector<std::string> split_overrides(const std::vector<std::string>& args, std::vector<Override>& overrides) {
    std::vector<std::string> rest;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const auto& a = args[i];
        const bool dotted = a.rfind("--", 0) == 0 && a.find('.') != std::string::npos &&
                            a.find('.') < a.find('=');
        if (!dotted) {
            rest.push_back(a);
            continue;
        }
        if (const auto eq = a.find('='); eq != std::string::npos) {
            overrides.push_back({a.substr(2, eq - 2), a.substr(eq + 1)});
        } else {
            if (i + 1 >= args.size()) throw ConfigError("missing value for " + a);
            overrides.push_back({a.substr(2), args[++i]});
        }
    }
    return rest;
}

RunConfig resolve(const std::string& config_path, const std::vector<Override>& overrides) {
    RunConfig config;
    if (!config_path.empty()) {
        config.merge_file(config_path);
    } else if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') {
        config.merge_file(env);
    }
    for (const auto& o : overrides) config.set(o.key, o.value);
    config.validate();
    return config;
}

std::string fixed(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Graph neural network recommender: ingest, train, evaluate, recommend, compare", "gnnrec"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path;
    std::string snapshot_path;
    std::string user_key;
    std::size_t k = 10;
    std::vector<std::string> report_paths;
    const auto with_config = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "Config file of section.key = value lines");
        sub->footer("Any setting can be overridden with --section.key VALUE, e.g. --training.epochs 5");
        return sub;
    };
    auto* ingest = with_config(app.add_subcommand("ingest", "Parse, filter and split a ratings file"));
    auto* train = with_config(app.add_subcommand("train", "Train model.name (gnn or bpr) on the ingested graph"));
    auto* evaluate_cmd = with_config(app.add_subcommand("evaluate", "Rank held-out items and write a report"));
    evaluate_cmd->add_option("--snapshot", snapshot_path, "Snapshot to evaluate (default: <output_dir>/<model>.snapshot)");
    auto* recommend = with_config(app.add_subcommand("recommend", "Top-k unseen items for one user"));
    recommend->add_option("-u,--user", user_key, "User key as it appears in the ratings file")->required();
    recommend->add_option("-k", k, "Number of items")->capture_default_str();
    recommend->add_option("--snapshot", snapshot_path, "Snapshot to score with");
    auto* compare = with_config(app.add_subcommand("compare", "Merge report files into one table"));
    compare->add_option("reports", report_paths, "Report CSV files")->required()->check(CLI::ExistingFile);

    std::vector<Override> overrides;
    try {
        auto rest = split_overrides(args, overrides);
        std::reverse(rest.begin(), rest.end());
        app.parse(rest);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        const auto config = resolve(config_path, overrides);
        const std::optional<std::filesystem::path> snapshot =
            snapshot_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(snapshot_path);
        if (ingest->parsed()) {
            const auto s = cmd_ingest(config);
            out << "users " << s.users << "\nitems " << s.items << "\nedges " << s.edges << "\ndensity " << s.density
                << "\ntrain_edges " << s.train_edges << "\ntest_edges " << s.test_edges << '\n';
            if (s.malformed_lines > 0) err << "warning: skipped " << s.malformed_lines << " malformed lines\n";
        } else if (train->parsed()) {
            const auto records = cmd_train(config, &err);
            out << "trained " << config.model_name() << " for " << records.size() << " epochs; wrote "
                << files::snapshot(config.output_dir(), config.model_name()).string() << '\n';
        } else if (evaluate_cmd->parsed()) {
            const auto r = cmd_evaluate(config, snapshot);
            out << r.model << " auc " << fixed(r.auc);
            for (const auto& [kk, v] : r.ndcg) out << " ndcg@" << kk << ' ' << fixed(v);
            out << " users " << r.n_users_evaluated << '\n';
        } else if (recommend->parsed()) {
            for (const auto& [item, score] : cmd_recommend(config, user_key, k, snapshot))
                out << item << '\t' << fixed(score) << '\n';
        } else if (compare->parsed()) {
            std::vector<std::filesystem::path> paths(report_paths.begin(), report_paths.end());
            cmd_compare(config, paths, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

} // namespace gnnrec
