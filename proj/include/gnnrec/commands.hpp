#pragma once

#include "gnnrec/config.hpp"
#include "gnnrec/eval.hpp"
#include "gnnrec/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gnnrec {

inline constexpr const char* kVersion = "gnnrec 1.0.0";

/// Files written under the output directory.
namespace files {
inline constexpr const char* kGraph = "graph.txt";
inline constexpr const char* kTestEdges = "test_edges.tsv";
inline constexpr const char* kUserIds = "user_ids.tsv";
inline constexpr const char* kItemIds = "item_ids.tsv";
inline constexpr const char* kStats = "stats.txt";
inline constexpr const char* kComparison = "comparison.csv";
std::filesystem::path snapshot(const std::filesystem::path& dir, const std::string& model);
std::filesystem::path loss(const std::filesystem::path& dir, const std::string& model);
std::filesystem::path run_info(const std::filesystem::path& dir, const std::string& model);
std::filesystem::path report(const std::filesystem::path& dir, const std::string& model);
std::filesystem::path echo(const std::filesystem::path& dir, const std::string& command);
} // namespace files

struct IngestStats {
    std::size_t users = 0;
    std::size_t items = 0;
    std::size_t edges = 0;
    double density = 0.0;
    std::size_t train_edges = 0;
    std::size_t test_edges = 0;
    std::size_t malformed_lines = 0;
};

/// The training graph and held-out edges written by ingest.
struct IngestedData {
    InteractionGraph train;
    std::vector<Edge> test;
};

/// Creates the output directory and writes `echo_<command>.conf`.
void echo_config(const RunConfig& config, const std::string& command);

/// Parse, filter, subsample, binarize, split; writes the training graph,
/// held-out edges, id maps and stats.
IngestStats cmd_ingest(const RunConfig& config);
IngestedData load_ingested(const std::filesystem::path& dir);

/// Trains `model.name` on the ingested graph; writes its snapshot, loss
/// CSV and run metadata.
std::vector<LossRecord> cmd_train(const RunConfig& config, std::ostream* progress = nullptr);

/// Scores the trained snapshot (default: the one named by `model.name`)
/// against the held-out edges and writes `report_<model>.csv`. Throws
/// CompatibilityError when the snapshot disagrees with the config.
MetricsReport cmd_evaluate(const RunConfig& config, const std::optional<std::filesystem::path>& snapshot = {});

/// Top-k unseen items for `user_key`, highest score first, ties by
/// ascending item index. Throws LookupError for an unknown user.
std::vector<std::pair<std::string, double>> cmd_recommend(const RunConfig& config, const std::string& user_key,
                                                          std::size_t k,
                                                          const std::optional<std::filesystem::path>& snapshot = {});

/// Merges report files, prints the table and writes `comparison.csv`.
std::vector<MetricsReport> cmd_compare(const RunConfig& config, const std::vector<std::filesystem::path>& reports,
                                       std::ostream& out);

} // namespace gnnrec
